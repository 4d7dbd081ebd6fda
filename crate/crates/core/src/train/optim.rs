//! Adam with per-group learning rates and row-resizable moment buffers.

use crate::render::GradientBundle;
use crate::scene::GaussianField;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments<const K: usize> {
    m: Vec<[f64; K]>,
    v: Vec<[f64; K]>,
}

impl<const K: usize> Moments<K> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![[0.0; K]; n],
            v: vec![[0.0; K]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn retain(&mut self, keep: &[bool]) {
        let mut k = keep.iter();
        self.m.retain(|_| *k.next().expect("mask length"));
        let mut k = keep.iter();
        self.v.retain(|_| *k.next().expect("mask length"));
    }

    /// Appends zero-initialized rows.
    pub fn extend(&mut self, n: usize) {
        self.m.resize(self.m.len() + n, [0.0; K]);
        self.v.resize(self.v.len() + n, [0.0; K]);
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|r| *r = [0.0; K]);
        self.v.iter_mut().for_each(|r| *r = [0.0; K]);
    }

    /// One bias-corrected update at step `t` (1-based).
    pub fn step(&mut self, params: &mut [[f64; K]], grads: &[[f64; K]], lr: f64, t: u64) {
        let c1 = 1.0 - BETA1.powi(t as i32);
        let c2 = 1.0 - BETA2.powi(t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for k in 0..K {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + EPSILON);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupRates {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

/// Which groups of a field receive updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Frozen {
    /// Log-scales and rotations.
    pub shape: bool,
    /// Everything.
    pub all: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldOptimizer {
    t: u64,
    position: Moments<3>,
    scale: Moments<3>,
    rotation: Moments<4>,
    opacity: Moments<1>,
    color: Moments<3>,
}

impl FieldOptimizer {
    pub fn new(n: usize) -> Self {
        Self {
            t: 0,
            position: Moments::new(n),
            scale: Moments::new(n),
            rotation: Moments::new(n),
            opacity: Moments::new(n),
            color: Moments::new(n),
        }
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn retain(&mut self, keep: &[bool]) {
        self.position.retain(keep);
        self.scale.retain(keep);
        self.rotation.retain(keep);
        self.opacity.retain(keep);
        self.color.retain(keep);
    }

    pub fn extend(&mut self, n: usize) {
        self.position.extend(n);
        self.scale.extend(n);
        self.rotation.extend(n);
        self.opacity.extend(n);
        self.color.extend(n);
    }

    pub fn reset_opacity(&mut self) {
        self.opacity.reset();
    }

    pub fn step(&mut self, field: &mut GaussianField, g: &GradientBundle, lr: &GroupRates, frozen: Frozen) {
        assert_eq!(field.len(), self.len(), "optimizer rows out of sync with the field");
        assert_eq!(g.len(), self.len(), "gradient rows out of sync with the field");
        if frozen.all {
            return;
        }
        self.t += 1;
        let t = self.t;
        self.position.step(field.positions_mut(), &g.positions, lr.position, t);
        self.color.step(field.colors_raw_mut(), &g.colors, lr.color, t);
        let mut opacity: Vec<[f64; 1]> = field.opacity_logits().iter().map(|&x| [x]).collect();
        let go: Vec<[f64; 1]> = g.opacity_logits.iter().map(|&x| [x]).collect();
        self.opacity.step(&mut opacity, &go, lr.opacity, t);
        for (dst, src) in field.opacity_logits_mut().iter_mut().zip(&opacity) {
            *dst = src[0];
        }
        if !frozen.shape {
            self.scale.step(field.log_scales_mut(), &g.log_scales, lr.scale, t);
            self.rotation.step(field.rotations_mut(), &g.rotations, lr.rotation, t);
        }
    }
}

/// Adam state for one 6-vector pose delta.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseOptimizer {
    t: u64,
    moments: Moments<6>,
}

impl Default for PoseOptimizer {
    fn default() -> Self {
        Self {
            t: 0,
            moments: Moments::new(1),
        }
    }
}

impl PoseOptimizer {
    pub fn step(&mut self, delta: &mut [f64; 6], grad: &[f64; 6], lr: f64) {
        self.t += 1;
        self.moments.step(std::slice::from_mut(delta), std::slice::from_ref(grad), lr, self.t);
    }
}
