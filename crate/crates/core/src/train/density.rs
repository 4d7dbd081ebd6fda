//! Gradient-driven clone/split, low-opacity pruning and opacity reset.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::render::{GradientBundle, RenderOutput};
use crate::scene::{logit, quat, sigmoid, GaussianField, Splat};

/// Shrink applied to both children of a split.
pub const SPLIT_SHRINK: f64 = 1.6;

/// Running screen-space gradient statistics per splat.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityStats {
    accum: Vec<f64>,
    denom: Vec<u32>,
}

impl DensityStats {
    pub fn new(n: usize) -> Self {
        Self {
            accum: vec![0.0; n],
            denom: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.accum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accum.is_empty()
    }

    /// Adds the gradient norms of splats that were visible in `out`.
    pub fn record(&mut self, out: &RenderOutput, g: &GradientBundle) {
        for (i, p) in out.projections().iter().enumerate() {
            if p.in_frustum && p.radius > 0.0 {
                self.accum[i] += g.mean2d_norm[i];
                self.denom[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.denom[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.denom[i] as f64
        }
    }

    pub fn retain(&mut self, keep: &[bool]) {
        let mut k = keep.iter();
        self.accum.retain(|_| *k.next().expect("mask length"));
        let mut k = keep.iter();
        self.denom.retain(|_| *k.next().expect("mask length"));
    }

    pub fn extend(&mut self, n: usize) {
        self.accum.resize(self.accum.len() + n, 0.0);
        self.denom.resize(self.denom.len() + n, 0);
    }

    pub fn clear(&mut self) {
        self.accum.iter_mut().for_each(|a| *a = 0.0);
        self.denom.iter_mut().for_each(|d| *d = 0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyParams {
    pub grad_threshold: f64,
    /// Size split between cloning and splitting, as a fraction of `extent`.
    pub percent_dense: f64,
    pub extent: f64,
    pub min_opacity: f64,
    /// Also prune splats larger than `0.1 · extent`.
    pub prune_large: bool,
}

/// One densification round: row edits to apply to a field and its buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyEdit {
    /// Keep-mask over the field before the edit.
    pub keep: Vec<bool>,
    /// Appended after removal.
    pub added: Vec<Splat>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Plans clones and splits of high-gradient splats and removal of
/// transparent or oversized ones. Children of a split are drawn from the
/// parent's Gaussian and shrunk by [`SPLIT_SHRINK`].
pub fn plan_densify(field: &GaussianField, stats: &DensityStats, p: &DensifyParams, rng: &mut impl Rng) -> DensifyEdit {
    let n = field.len();
    let opac = field.activate().opacities;
    let limit = p.percent_dense * p.extent;
    let mut keep = vec![true; n];
    let mut added = Vec::new();
    let (mut cloned, mut split, mut pruned) = (0, 0, 0);
    let too_big = |s: &Splat| p.prune_large && s.log_scale.iter().cloned().fold(f64::NEG_INFINITY, f64::max).exp() > 0.1 * p.extent;
    let drop = |s: &Splat, o: f64| o < p.min_opacity || too_big(s);
    for i in 0..n {
        let s = field.splat(i);
        let max_scale = s.log_scale.iter().cloned().fold(f64::NEG_INFINITY, f64::max).exp();
        let hot = stats.mean(i) >= p.grad_threshold;
        if hot && max_scale <= limit {
            cloned += 1;
            if !drop(&s, opac[i]) {
                added.push(s);
            }
        } else if hot {
            split += 1;
            keep[i] = false;
            let r = quat::to_matrix(&quat::normalize(&s.rotation));
            let sc = Vector3::from(s.log_scale.map(f64::exp));
            for _ in 0..2 {
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let off = r * sc.component_mul(&z);
                let child = Splat {
                    position: std::array::from_fn(|k| s.position[k] + off[k]),
                    log_scale: s.log_scale.map(|l| l - SPLIT_SHRINK.ln()),
                    ..s
                };
                if !drop(&child, opac[i]) {
                    added.push(child);
                }
            }
            continue;
        }
        if drop(&s, opac[i]) {
            keep[i] = false;
            pruned += 1;
        }
    }
    DensifyEdit {
        keep,
        added,
        cloned,
        split,
        pruned,
    }
}

/// Caps every opacity at `value`.
pub fn reset_opacity(field: &mut GaussianField, value: f64) {
    let cap = logit(value);
    for l in field.opacity_logits_mut() {
        if sigmoid(*l) > value {
            *l = cap;
        }
    }
}
