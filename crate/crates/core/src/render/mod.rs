//! Differentiable splat rendering of color, depth and accumulated alpha.
//!
//! Compositing is exact per pixel, in 64-bit floats. Rows are processed in
//! fixed-size chunks whose results are combined in chunk order, so output is
//! bit-identical for any worker count.

mod backward;
mod forward;
mod project;

pub use backward::render_backward;
pub use forward::{render, render_frozen};
pub use project::{project, Projected, COV2D_FLOOR, EXTENT_SIGMAS, NEAR_PLANE};

use crate::image::{DepthMap, Image};

/// Compositing stops after the transmittance drops below this value.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;

pub(crate) const ROWS_PER_CHUNK: usize = 16;

/// One splat's contribution to one pixel, in front-to-back order.
#[derive(Clone, Copy, Debug)]
pub struct Contribution {
    pub splat: u32,
    /// Falloff-modulated opacity.
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub trans: f64,
    /// Gaussian falloff at the pixel.
    pub falloff: f64,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub rgb: Image,
    pub depth: DepthMap,
    pub alpha: DepthMap,
    pub background: [f64; 3],
    pub(crate) revision: u64,
    pub(crate) splat_count: usize,
    pub(crate) projections: Vec<Projected>,
    pub(crate) records: Vec<Contribution>,
    pub(crate) offsets: Vec<u32>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    /// Ordered contributions at pixel `(x, y)`.
    pub fn pixel_records(&self, x: usize, y: usize) -> &[Contribution] {
        let p = y * self.rgb.width() + x;
        &self.records[self.offsets[p] as usize..self.offsets[p + 1] as usize]
    }

    pub fn projections(&self) -> &[Projected] {
        &self.projections
    }
}

/// Per-splat parameter gradients plus the pose-delta gradient of a learnable camera.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    /// `[ωx, ωy, ωz, tx, ty, tz]`; `None` for non-learnable cameras.
    pub pose_delta: Option<[f64; 6]>,
    /// Norm of the screen-space mean gradient in half-image units, for densification.
    pub mean2d_norm: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            opacity_logits: vec![0.0; n],
            colors: vec![[0.0; 3]; n],
            pose_delta: None,
            mean2d_norm: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Adds `other` into `self`, element by element.
    pub fn accumulate(&mut self, other: &GradientBundle) {
        assert_eq!(self.len(), other.len());
        fn add<const K: usize>(a: &mut [[f64; K]], b: &[[f64; K]]) {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..K {
                    x[k] += y[k];
                }
            }
        }
        add(&mut self.positions, &other.positions);
        add(&mut self.log_scales, &other.log_scales);
        add(&mut self.rotations, &other.rotations);
        add(&mut self.colors, &other.colors);
        for (x, y) in self.opacity_logits.iter_mut().zip(&other.opacity_logits) {
            *x += y;
        }
        for (x, y) in self.mean2d_norm.iter_mut().zip(&other.mean2d_norm) {
            *x += y;
        }
        self.pose_delta = match (self.pose_delta, other.pose_delta) {
            (Some(a), Some(b)) => Some(std::array::from_fn(|k| a[k] + b[k])),
            (a, b) => a.or(b),
        };
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().flatten().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.colors.iter().flatten().all(|v| v.is_finite())
            && self.pose_delta.is_none_or(|d| d.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests;
