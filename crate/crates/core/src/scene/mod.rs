//! Gaussian fields, cameras and the nearest-neighbor index shared by the
//! densification and co-pruning stages.
//!
//! Every per-splat parameter is stored in optimization space: opacity as a
//! logit, scale as a log, color as a pre-sigmoid value. [`GaussianField::activate`]
//! maps them to render space.

mod camera;
mod index;
pub mod quat;

pub use camera::{compose_delta, matrix_to_quat, Camera, Intrinsics, Pose};
pub(crate) use index::dist2;
pub use index::SpatialIndex;

use quat::Quat;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One splat's parameters in optimization space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat {
    pub position: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: Quat,
    pub opacity_logit: f64,
    pub color_raw: [f64; 3],
}

/// The explicit scene: parallel per-splat arrays of equal length.
///
/// All mutable access goes through methods that bump [`revision`](Self::revision),
/// which the renderer uses to reject stale forward outputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianField {
    positions: Vec<[f64; 3]>,
    log_scales: Vec<[f64; 3]>,
    rotations: Vec<Quat>,
    opacity_logits: Vec<f64>,
    colors: Vec<[f64; 3]>,
    revision: u64,
}

/// Render-space view of a field.
#[derive(Clone, Debug)]
pub struct ActivatedView {
    pub opacities: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
}

impl GaussianField {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_splats(splats: impl IntoIterator<Item = Splat>) -> Self {
        let mut field = Self::new();
        field.extend(splats);
        field
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn log_scales(&self) -> &[[f64; 3]] {
        &self.log_scales
    }

    pub fn rotations(&self) -> &[Quat] {
        &self.rotations
    }

    pub fn opacity_logits(&self) -> &[f64] {
        &self.opacity_logits
    }

    pub fn colors_raw(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn positions_mut(&mut self) -> &mut [[f64; 3]] {
        self.revision += 1;
        &mut self.positions
    }

    pub fn log_scales_mut(&mut self) -> &mut [[f64; 3]] {
        self.revision += 1;
        &mut self.log_scales
    }

    pub fn rotations_mut(&mut self) -> &mut [Quat] {
        self.revision += 1;
        &mut self.rotations
    }

    pub fn opacity_logits_mut(&mut self) -> &mut [f64] {
        self.revision += 1;
        &mut self.opacity_logits
    }

    pub fn colors_raw_mut(&mut self) -> &mut [[f64; 3]] {
        self.revision += 1;
        &mut self.colors
    }

    pub fn splat(&self, i: usize) -> Splat {
        Splat {
            position: self.positions[i],
            log_scale: self.log_scales[i],
            rotation: self.rotations[i],
            opacity_logit: self.opacity_logits[i],
            color_raw: self.colors[i],
        }
    }

    pub fn splats(&self) -> impl Iterator<Item = Splat> + '_ {
        (0..self.len()).map(|i| self.splat(i))
    }

    pub fn push(&mut self, s: Splat) {
        self.revision += 1;
        self.positions.push(s.position);
        self.log_scales.push(s.log_scale);
        self.rotations.push(s.rotation);
        self.opacity_logits.push(s.opacity_logit);
        self.colors.push(s.color_raw);
    }

    pub fn extend(&mut self, splats: impl IntoIterator<Item = Splat>) {
        for s in splats {
            self.push(s);
        }
        self.revision += 1;
    }

    /// Keeps splats whose `keep` entry is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len(), "mask length must equal splat count");
        fn filter<T: Copy>(v: &mut Vec<T>, keep: &[bool]) {
            let mut k = keep.iter();
            v.retain(|_| *k.next().unwrap());
        }
        filter(&mut self.positions, keep);
        filter(&mut self.log_scales, keep);
        filter(&mut self.rotations, keep);
        filter(&mut self.opacity_logits, keep);
        filter(&mut self.colors, keep);
        self.revision += 1;
    }

    /// Renormalizes every rotation to unit length.
    pub fn normalize_rotations(&mut self) {
        for q in self.rotations_mut() {
            *q = quat::normalize(q);
        }
    }

    pub fn activate(&self) -> ActivatedView {
        ActivatedView {
            opacities: self.opacity_logits.iter().map(|&l| sigmoid(l)).collect(),
            colors: self
                .colors
                .iter()
                .map(|c| [sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])])
                .collect(),
        }
    }

    pub fn build_index(&self) -> crate::Result<SpatialIndex> {
        SpatialIndex::build(&self.positions)
    }

    /// Checks the structural invariants: equal lengths and finite values.
    pub fn validate(&self) -> bool {
        let n = self.len();
        self.log_scales.len() == n
            && self.rotations.len() == n
            && self.opacity_logits.len() == n
            && self.colors.len() == n
            && self.positions.iter().flatten().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.colors.iter().flatten().all(|v| v.is_finite())
    }
}
