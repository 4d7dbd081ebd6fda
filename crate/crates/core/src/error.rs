use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field has no splats")]
    EmptyField,

    #[error("requested {requested} neighbors but only {available} points are available")]
    InsufficientNeighbors { requested: usize, available: usize },

    #[error("render output is stale: field revision {expected} was rendered, current is {found}")]
    StaleRenderOutput { expected: u64, found: u64 },

    #[error("quaternion norm {norm} deviates from unit length")]
    InvalidQuaternion { norm: f64 },

    #[error("camera intrinsics differ between interpolation endpoints")]
    IntrinsicsMismatch,

    #[error("need at least 2 views, got {0}")]
    InsufficientViews(usize),

    #[error("invalid interpolation factor {0}; must be at least 2")]
    InvalidInterpolationFactor(usize),

    #[error("frame interpolator returned {found:?}, expected {expected:?}")]
    InterpolatorContractViolation {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("selection needs at least 2 pseudo-labels, got {0}")]
    NothingToSelect(usize),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("only {valid} valid pixels, need at least {required}")]
    InsufficientCoverage { valid: usize, required: usize },

    #[error("invalid density thresholds: {0}")]
    InvalidThresholds(String),

    #[error("co-pruning target field is empty")]
    EmptyTarget,

    #[error("ensemble collapse: field `{field}` lost all of its splats")]
    EnsembleCollapse { field: &'static str },

    #[error("auxiliary fields are already frozen")]
    AlreadyFrozen,

    #[error("operation requires the {expected} phase")]
    WrongPhase { expected: &'static str },

    #[error("no holdout views to evaluate")]
    NothingToEvaluate,

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png: {0}")]
    Png(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}
