//! Sparse-view 3D Gaussian splatting with hierarchical guidance.

pub mod cpg;
pub mod error;
pub mod fadp;
pub mod guidance;
pub mod image;
pub mod io;
pub mod losses;
pub mod pose;
pub mod render;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use image::{DepthMap, Image};
pub use scene::{Camera, GaussianField, Intrinsics, Pose, SpatialIndex, Splat};
