//! Synthetic ground-truth scenes rendered by the project's own renderer.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};
use crate::render::{render, RenderOutput};
use crate::scene::{logit, quat, Camera, GaussianField, Intrinsics, Splat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_splats: usize,
    pub n_cameras: usize,
    /// Square image side in pixels.
    pub resolution: usize,
    pub seed: u64,
    pub train_views: usize,
    pub radius: f64,
    pub height: f64,
    /// Angular span of the camera ring; 360 places cameras evenly on a full circle.
    pub arc_degrees: f64,
    pub fov_degrees: f64,
    pub color_clusters: usize,
    pub background: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_splats: 1500,
            n_cameras: 12,
            resolution: 64,
            seed: 0,
            train_views: 3,
            radius: 2.6,
            height: 0.6,
            arc_degrees: 180.0,
            fov_degrees: 50.0,
            color_clusters: 6,
            background: [0.0; 3],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub config: SynthConfig,
    pub gt: GaussianField,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub depths: Vec<DepthMap>,
    pub alphas: Vec<DepthMap>,
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

impl SyntheticScene {
    /// Renders the ground-truth field from any camera.
    pub fn render_view(&self, camera: &Camera) -> RenderOutput {
        render(&self.gt, camera, self.config.background)
    }

    pub fn train_cameras(&self) -> Vec<Camera> {
        self.train.iter().map(|&i| self.cameras[i].clone()).collect()
    }

    /// Sparse initial points: a `fraction` subsample of the ground-truth
    /// positions with isotropic Gaussian noise, plus their activated colors.
    pub fn initial_points(&self, fraction: f64, noise: f64, seed: u64) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = ((self.gt.len() as f64 * fraction).round() as usize).clamp(1, self.gt.len());
        let picks = rand::seq::index::sample(&mut rng, self.gt.len(), n).into_vec();
        let normal = Normal::new(0.0, noise).expect("finite noise");
        let colors = self.gt.activate().colors;
        let mut pts = Vec::with_capacity(n);
        let mut cols = Vec::with_capacity(n);
        for i in picks {
            let p = self.gt.positions()[i];
            pts.push(std::array::from_fn(|k| p[k] + normal.sample(&mut rng)));
            cols.push(colors[i]);
        }
        (pts, cols)
    }
}

pub fn ring_cameras(cfg: &SynthConfig) -> Result<Vec<Camera>> {
    let f = cfg.resolution as f64 / 2.0 / (cfg.fov_degrees.to_radians() / 2.0).tan();
    let intr = Intrinsics {
        fx: f,
        fy: f,
        cx: (cfg.resolution as f64 - 1.0) / 2.0,
        cy: (cfg.resolution as f64 - 1.0) / 2.0,
        width: cfg.resolution,
        height: cfg.resolution,
    };
    let full = cfg.arc_degrees >= 360.0;
    (0..cfg.n_cameras)
        .map(|i| {
            let t = if full {
                std::f64::consts::TAU * i as f64 / cfg.n_cameras as f64
            } else {
                cfg.arc_degrees.to_radians() * i as f64 / (cfg.n_cameras - 1) as f64
            };
            let eye = Vector3::new(cfg.radius * t.cos(), cfg.height, cfg.radius * t.sin());
            Camera::look_at(intr, eye, Vector3::zeros(), Vector3::y())
        })
        .collect()
}

/// Splats uniform in the unit box `[-0.5, 0.5]³`, colored by the nearest of a
/// few random cluster centers with per-splat jitter, viewed by a camera ring.
pub fn synth_scene(cfg: &SynthConfig) -> Result<SyntheticScene> {
    if cfg.n_splats == 0 {
        return Err(Error::InvalidConfig("n_splats must be >= 1".into()));
    }
    if cfg.n_cameras < 3 {
        return Err(Error::InvalidConfig("n_cameras must be >= 3".into()));
    }
    if cfg.train_views < 2 || cfg.train_views > cfg.n_cameras {
        return Err(Error::InvalidConfig("train_views must be in [2, n_cameras]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clusters = cfg.color_clusters.max(1);
    let centers: Vec<[f64; 3]> = (0..clusters)
        .map(|_| std::array::from_fn(|_| rng.random_range(-0.5..0.5)))
        .collect();
    let base: Vec<[f64; 3]> = (0..clusters)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.1..0.9)))
        .collect();
    let mut gt = GaussianField::new();
    for _ in 0..cfg.n_splats {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
        let c = (0..clusters)
            .min_by(|&a, &b| {
                crate::scene::dist2(&p, &centers[a]).total_cmp(&crate::scene::dist2(&p, &centers[b]))
            })
            .expect("at least one cluster");
        let color: [f64; 3] =
            std::array::from_fn(|k| logit((base[c][k] + rng.random_range(-0.08..0.08)).clamp(0.02, 0.98)));
        let q = quat::normalize(&std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        gt.push(Splat {
            position: p,
            log_scale: std::array::from_fn(|_| rng.random_range(0.025f64.ln()..0.06f64.ln())),
            rotation: q,
            opacity_logit: logit(rng.random_range(0.3..1.0)),
            color_raw: color,
        });
    }
    let cameras = ring_cameras(cfg)?;
    let mut images = Vec::with_capacity(cameras.len());
    let mut depths = Vec::with_capacity(cameras.len());
    let mut alphas = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let out = render(&gt, cam, cfg.background);
        images.push(out.rgb);
        depths.push(out.depth);
        alphas.push(out.alpha);
    }
    let k = cfg.n_cameras / cfg.train_views;
    let train: Vec<usize> = (0..cfg.train_views).map(|i| i * k).collect();
    let holdout = (0..cfg.n_cameras).filter(|i| !train.contains(i)).collect();
    Ok(SyntheticScene {
        config: cfg.clone(),
        gt,
        cameras,
        images,
        depths,
        alphas,
        train,
        holdout,
    })
}
