//! Two-stage training of the field ensemble with image, feature and
//! parameter-level guidance, plus held-out evaluation.

mod config;
mod density;
mod optim;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{AggregationSetting, FreezeSetting, TrainConfig};
pub use density::{plan_densify, reset_opacity, DensifyEdit, DensifyParams, DensityStats, SPLIT_SHRINK};
pub use optim::{FieldOptimizer, Frozen, GroupRates, Moments, PoseOptimizer};

use crate::cpg::{camera_extent, FieldEnsemble, Phase, PruneOutcome, FIELD_NAMES};
use crate::error::{Error, Result};
use crate::fadp::{
    apply_plan, backproject, detect_edges, normalized_depth, patch_counts, patch_of, plan_density, rebalance_counts,
    sample_edge_points, spawn_gaussians, thresholds_from_counts,
};
use crate::guidance::{generate_pseudo_labels, guidance_loss, score_pseudo_label, select_top_half, CrossFade, FrameDirectory, FrameSet, PseudoLabel};
use crate::image::{DepthMap, Image};
use crate::io::{save_cameras, save_ply, SyntheticScene};
use crate::losses::{psnr, ssim, weighted_loss, LossBreakdown};
use crate::pose::build_track;
use crate::render::{render, render_backward};
use crate::scene::{logit, quat, Camera, GaussianField, Splat};

/// Training views, optional reference depth, initial points, pseudo-labels and held-out views.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub depths: Option<Vec<DepthMap>>,
    pub points: Vec<[f64; 3]>,
    /// Activated colors in `[0, 1]`, one per point.
    pub colors: Vec<[f64; 3]>,
    pub labels: Vec<PseudoLabel>,
    pub holdout_cameras: Vec<Camera>,
    pub holdout_images: Vec<Image>,
}

/// Where pseudo-label frames come from for a synthetic scene.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum FrameSource {
    /// Renders of the ground-truth field at the interpolated poses.
    #[default]
    GroundTruth,
    CrossFade,
    /// Precomputed frames; labels then carry no reference depth.
    Directory(PathBuf),
}

impl TrainSet {
    /// Sparse initial points (a quarter of the ground truth, jittered), the
    /// training/holdout split of the scene, and pseudo-labels at `factor`.
    pub fn from_synthetic(scene: &SyntheticScene, factor: usize, frames: FrameSource, seed: u64) -> Result<Self> {
        let cameras = scene.train_cameras();
        let images: Vec<Image> = scene.train.iter().map(|&i| scene.images[i].clone()).collect();
        let depths: Vec<DepthMap> = scene.train.iter().map(|&i| scene.depths[i].clone()).collect();
        let (points, colors) = scene.initial_points(0.25, 0.02, seed);
        let track = build_track(&cameras, factor)?;
        let renders: Vec<_> = track.points.iter().map(|p| scene.render_view(&p.camera)).collect();
        let label_depths: Vec<DepthMap> = renders.iter().map(|r| r.depth.clone()).collect();
        let labels = match frames {
            FrameSource::GroundTruth => {
                let mut it = renders.into_iter();
                let set = FrameSet::from_track(&track, |_| it.next().expect("one render per point").rgb);
                generate_pseudo_labels(&images, &track, &set, Some(&label_depths))?
            }
            FrameSource::CrossFade => generate_pseudo_labels(&images, &track, &CrossFade, Some(&label_depths))?,
            FrameSource::Directory(dir) => generate_pseudo_labels(&images, &track, &FrameDirectory::new(dir), None)?,
        };
        Ok(Self {
            cameras,
            images,
            depths: Some(depths),
            points,
            colors,
            labels,
            holdout_cameras: scene.holdout.iter().map(|&i| scene.cameras[i].clone()).collect(),
            holdout_images: scene.holdout.iter().map(|&i| scene.images[i].clone()).collect(),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.cameras.len() < 2 {
            return Err(Error::InsufficientViews(self.cameras.len()));
        }
        if self.images.len() != self.cameras.len() || self.holdout_images.len() != self.holdout_cameras.len() {
            return Err(Error::InvalidConfig("one image per camera required".into()));
        }
        if self.depths.as_ref().is_some_and(|d| d.len() != self.cameras.len()) {
            return Err(Error::InvalidConfig("one depth map per training camera required".into()));
        }
        if self.points.is_empty() || self.points.len() != self.colors.len() {
            return Err(Error::InvalidConfig("initial points and colors must be non-empty and paired".into()));
        }
        Ok(())
    }
}

/// Mean distance to the three nearest other points, per point.
fn nn_spacing(points: &[[f64; 3]]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Ok(vec![0.01; points.len()]);
    }
    let field = GaussianField::from_splats(points.iter().map(|&p| Splat {
        position: p,
        log_scale: [0.0; 3],
        rotation: quat::IDENTITY,
        opacity_logit: 0.0,
        color_raw: [0.0; 3],
    }).collect::<Vec<_>>());
    let index = field.build_index()?;
    let k = 4.min(points.len());
    points
        .iter()
        .map(|p| {
            let nn = index.k_nearest(p, k)?;
            let d: Vec<f64> = nn.iter().skip(1).map(|&(_, d)| d).collect();
            Ok((d.iter().sum::<f64>() / d.len() as f64).max(1e-4))
        })
        .collect()
}

/// Isotropic splats at the initial points; `jitter` perturbs opacity logits uniformly.
pub fn init_field(points: &[[f64; 3]], colors: &[[f64; 3]], opacity: f64, jitter: f64, rng: &mut impl Rng) -> Result<GaussianField> {
    let spacing = nn_spacing(points)?;
    Ok(GaussianField::from_splats(
        points
            .iter()
            .zip(colors)
            .zip(&spacing)
            .map(|((&p, c), &d)| Splat {
                position: p,
                log_scale: [d.ln(); 3],
                rotation: quat::IDENTITY,
                opacity_logit: logit(opacity) + if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 },
                color_raw: c.map(|v| logit(v.clamp(0.01, 0.99))),
            })
            .collect::<Vec<_>>(),
    ))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub guidance: f64,
    pub counts: [usize; 3],
    pub probe_psnr: f64,
}

impl LogRow {
    pub const HEADER: &'static str = "iteration\ttotal\tl_r\tl_g\tn_primary\tn_aux1\tn_aux2\tprobe_psnr";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:e}\t{:e}\t{:e}\t{}\t{}\t{}\t{:e}",
            self.iteration,
            self.total,
            self.reconstruction,
            self.guidance,
            self.counts[0],
            self.counts[1],
            self.counts[2],
            self.probe_psnr
        )
    }
}

/// A structural event (densification, patch control, edge spawning, pruning, freeze).
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub iteration: usize,
    pub kind: &'static str,
    pub detail: String,
}

impl Event {
    pub fn to_tsv(&self) -> String {
        format!("{}\t{}\t{}", self.iteration, self.kind, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalTable {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("view\tpsnr\tssim\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{:e}\t{:e}\n", r.view, r.psnr, r.ssim));
        }
        s.push_str(&format!("mean\t{:e}\t{:e}\n", self.mean_psnr, self.mean_ssim));
        s
    }
}

/// PSNR and SSIM of `field` against each view.
pub fn evaluate(field: &GaussianField, cameras: &[Camera], images: &[Image], background: [f64; 3]) -> Result<EvalTable> {
    if cameras.is_empty() {
        return Err(Error::NothingToEvaluate);
    }
    let rows = cameras
        .iter()
        .zip(images)
        .enumerate()
        .map(|(view, (c, img))| {
            let out = render(field, c, background);
            Ok(EvalRow {
                view,
                psnr: psnr(&out.rgb, img)?,
                ssim: ssim(&out.rgb, img)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    Ok(EvalTable {
        mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        rows,
    })
}

/// 1.1 times the largest distance of a camera center from their mean.
pub fn scene_radius(cameras: &[Camera]) -> f64 {
    let centers: Vec<_> = cameras.iter().map(|c| c.base_pose().center()).collect();
    let mean = centers.iter().fold(nalgebra::Vector3::zeros(), |a, c| a + c) / centers.len().max(1) as f64;
    1.1 * centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max)
}

/// Row edits made by one density-control pass over one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewEdit {
    /// False if the pass was skipped.
    pub applied: bool,
    /// Keep-mask over the field before the pass.
    pub keep: Vec<bool>,
    /// Rows appended after removal.
    pub spawned: usize,
    pub detail: String,
}

/// Rebalances per-patch splat counts of `field` as seen from `camera`.
/// Thresholds are ranked over patches with rendered coverage; new splats
/// prefer edge pixels of `image`.
pub fn patch_control_view(field: &mut GaussianField, camera: &Camera, image: &Image, cfg: &TrainConfig, seed: u64) -> Result<ViewEdit> {
    let m = cfg.patch_grid;
    let out = render(field, camera, cfg.background);
    let pc = patch_counts(field, camera, m);
    let (w, h) = (camera.width(), camera.height());
    let mut covered = vec![false; m * m];
    for y in 0..h {
        for x in 0..w {
            if out.alpha.get(x, y) > 0.5 {
                covered[patch_of(x, y, w, h, m)] = true;
            }
        }
    }
    let idx: Vec<usize> = (0..m * m).filter(|&p| covered[p]).collect();
    let sub: Vec<usize> = idx.iter().map(|&p| pc.counts[p]).collect();
    let Some(t) = thresholds_from_counts(&sub, cfg.tau_sparse_rank, cfg.tau_low_rank, cfg.tau_high_rank, cfg.lambda_low, cfg.lambda_high, cfg.c_min) else {
        return Ok(ViewEdit {
            applied: false,
            keep: vec![true; field.len()],
            spawned: 0,
            detail: format!("covered={}", idx.len()),
        });
    };
    let new = rebalance_counts(&sub, &t)?;
    let mut targets = pc.counts.clone();
    for (&p, &c) in idx.iter().zip(&new) {
        targets[p] = c;
    }
    let plan = plan_density(field, &pc, &targets);
    let mut keep = vec![true; field.len()];
    for &j in plan.prune.iter().flatten() {
        keep[j] = false;
    }
    let edges = detect_edges(image);
    let depth = normalized_depth(&out.depth, &out.alpha);
    let report = apply_plan(field, &plan, camera, &depth, &out.alpha, Some(&edges), cfg.knn, seed)?;
    Ok(ViewEdit {
        applied: true,
        keep,
        spawned: report.spawned,
        detail: format!(
            "tau=({},{},{}) pruned={} spawned={} skipped_patches={:?}",
            t.tau_sparse, t.tau_low, t.tau_high, report.pruned, report.spawned, report.skipped_patches
        ),
    })
}

/// Adds up to `budget` splats at edge pixels of `image`, placed at the
/// rendered depth and initialised from their nearest neighbours.
pub fn edge_spawn_view(field: &mut GaussianField, camera: &Camera, image: &Image, budget: usize, cfg: &TrainConfig, seed: u64) -> Result<ViewEdit> {
    let out = render(field, camera, cfg.background);
    let edges = detect_edges(image);
    let pixels = sample_edge_points(&edges, budget, seed);
    let depth = normalized_depth(&out.depth, &out.alpha);
    let (points, skipped) = backproject(&pixels, &depth, &out.alpha, camera);
    let before = field.len();
    let n = if points.is_empty() { 0 } else { spawn_gaussians(&points, field, cfg.knn)? };
    Ok(ViewEdit {
        applied: true,
        keep: vec![true; before],
        spawned: n,
        detail: format!("edges={} sampled={} spawned={n} skipped={skipped}", edges.count(), pixels.len()),
    })
}

/// Training state: the ensemble, labels, optimizer buffers and logs.
pub struct Trainer {
    config: TrainConfig,
    set: TrainSet,
    ensemble: FieldEnsemble,
    labels: Vec<PseudoLabel>,
    optimizers: Vec<FieldOptimizer>,
    stats: Vec<DensityStats>,
    pose_optimizers: Vec<PoseOptimizer>,
    /// One stream per field, so a field's draws do not depend on the others.
    rngs: [ChaCha8Rng; 3],
    iteration: usize,
    guidance_cursor: usize,
    radius: f64,
    delta_world: f64,
    log: Vec<LogRow>,
    events: Vec<Event>,
    last: LossBreakdown,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(set: TrainSet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        set.validate()?;
        let mut rngs: [ChaCha8Rng; 3] = std::array::from_fn(|f| {
            let mut r = ChaCha8Rng::seed_from_u64(config.seed);
            r.set_stream(f as u64);
            r
        });
        let primary = init_field(&set.points, &set.colors, config.init_opacity, 0.0, &mut rngs[0])?;
        let (aux1, aux2) = if config.enable_cpg {
            (
                init_field(&set.points, &set.colors, config.init_opacity, config.aux_jitter, &mut rngs[1])?,
                init_field(&set.points, &set.colors, config.init_opacity, config.aux_jitter, &mut rngs[2])?,
            )
        } else {
            (GaussianField::new(), GaussianField::new())
        };
        let ensemble = FieldEnsemble::new(primary, aux1, aux2);
        let counts = ensemble.counts();
        let labels = if config.enable_pseudo_labels { set.labels.clone() } else { Vec::new() };
        Ok(Self {
            radius: scene_radius(&set.cameras),
            delta_world: config.delta * camera_extent(&set.cameras),
            optimizers: counts.iter().map(|&n| FieldOptimizer::new(n)).collect(),
            stats: counts.iter().map(|&n| DensityStats::new(n)).collect(),
            pose_optimizers: vec![PoseOptimizer::default(); labels.len()],
            labels,
            config,
            set,
            ensemble,
            rngs,
            iteration: 0,
            guidance_cursor: 0,
            log: Vec::new(),
            events: Vec::new(),
            last: LossBreakdown::default(),
            out_dir: None,
        })
    }

    /// Directory for checkpoints and failure dumps.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn ensemble(&self) -> &FieldEnsemble {
        &self.ensemble
    }

    pub fn labels(&self) -> &[PseudoLabel] {
        &self.labels
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn last_loss(&self) -> &LossBreakdown {
        &self.last
    }

    pub fn train_set(&self) -> &TrainSet {
        &self.set
    }

    /// Distance threshold for co-pruning in scene units.
    pub fn delta_world(&self) -> f64 {
        self.delta_world
    }

    fn active_fields(&self) -> usize {
        if self.config.enable_cpg {
            3
        } else {
            1
        }
    }

    /// Row counts of every optimizer and statistics buffer match their fields.
    pub fn buffers_consistent(&self) -> bool {
        (0..3).all(|f| {
            let n = self.ensemble.field(f).len();
            self.optimizers[f].len() == n && self.stats[f].len() == n
        })
    }

    pub fn evaluate(&self) -> Result<EvalTable> {
        evaluate(&self.ensemble.primary, &self.set.holdout_cameras, &self.set.holdout_images, self.config.background)
    }

    /// Runs up to and including `iteration`.
    pub fn run_until(&mut self, iteration: usize) -> Result<()> {
        while self.iteration < iteration.min(self.config.total_iterations) {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.total_iterations)
    }

    /// One training iteration.
    pub fn step(&mut self) -> Result<()> {
        let i = self.iteration + 1;
        let cfg = self.config.clone();
        if !self.labels.is_empty() && i >= cfg.guidance_start && i.is_multiple_of(cfg.selection_every) {
            self.select_labels(i)?;
        }
        let view = (i - 1) % self.set.cameras.len();
        let guided = if !self.labels.is_empty()
            && cfg.guidance_schedule().is_active(i)
            && i.is_multiple_of(cfg.guidance_interval)
            && self.labels.iter().any(|l| l.selected)
        {
            Some(self.next_label())
        } else {
            None
        };
        let lambda_g = cfg.lambda_g(i);
        let w = cfg.loss_weights();
        let rates = GroupRates {
            position: cfg.position_lr(i) * self.radius,
            scale: cfg.lr_scale,
            rotation: cfg.lr_rotation,
            opacity: cfg.lr_opacity,
            color: cfg.lr_color,
        };
        let mut pose_grad = [0.0; 6];
        for f in 0..self.active_fields() {
            let field = self.ensemble.field(f);
            let cam = &self.set.cameras[view];
            let out = render(field, cam, cfg.background);
            let reference = self.set.depths.as_ref().map(|d| &d[view]);
            let terms = weighted_loss(&out.rgb, &out.depth, &out.alpha, &self.set.images[view], reference, &w)?;
            let mut grads = render_backward(field, cam, &out, &terms.grad_rgb, terms.grad_depth.as_ref())?;
            self.stats[f].record(&out, &grads);
            let mut gterms = None;
            if let Some(li) = guided {
                let label = &self.labels[li];
                let gout = render(field, &label.camera, cfg.background);
                let mut gt = guidance_loss(label, &gout, &w)?;
                gt.grad_rgb.data_mut().iter_mut().for_each(|v| *v *= lambda_g);
                if let Some(d) = gt.grad_depth.as_mut() {
                    d.data_mut().iter_mut().for_each(|v| *v *= lambda_g);
                }
                let gg = render_backward(field, &label.camera, &gout, &gt.grad_rgb, gt.grad_depth.as_ref())?;
                self.stats[f].record(&gout, &gg);
                if let Some(p) = gg.pose_delta {
                    for k in 0..6 {
                        pose_grad[k] += p[k];
                    }
                }
                let mut gg = gg;
                gg.pose_delta = None;
                grads.accumulate(&gg);
                gterms = Some(gt);
            }
            let breakdown = LossBreakdown::new(&terms, gterms.as_ref(), if guided.is_some() { lambda_g } else { 0.0 });
            if !breakdown.total.is_finite() || !grads.is_finite() {
                self.dump_failure(i);
                return Err(Error::NonFiniteLoss { iteration: i });
            }
            if f == 0 {
                self.last = breakdown;
            }
            let frozen = Frozen {
                shape: self.ensemble.shape_frozen(f),
                all: self.ensemble.fully_frozen(f),
            };
            self.optimizers[f].step(self.ensemble.field_mut(f), &grads, &rates, frozen);
        }
        if let Some(li) = guided {
            let label = &mut self.labels[li];
            let delta = label.camera.delta_mut().expect("pseudo-label cameras are learnable");
            self.pose_optimizers[li].step(delta, &pose_grad, cfg.lr_pose);
        }
        self.iteration = i;

        if i <= cfg.densify_until {
            if i >= cfg.densify_from && i.is_multiple_of(cfg.densify_every) {
                self.densify(i)?;
            }
            if i.is_multiple_of(cfg.opacity_reset_every) {
                for f in 0..self.active_fields() {
                    if !self.ensemble.fully_frozen(f) {
                        reset_opacity(self.ensemble.field_mut(f), 0.01);
                        self.optimizers[f].reset_opacity();
                    }
                }
                self.event(i, "opacity_reset", String::new());
            }
        }
        if cfg.enable_fadp && i == cfg.patch_control_iteration {
            self.patch_control(i)?;
        }
        if cfg.enable_fadp && i == cfg.fadp_edge_iteration {
            self.edge_spawn(i)?;
        }
        if cfg.enable_cpg && i >= cfg.coprune_start && i.is_multiple_of(cfg.coprune_every) {
            self.coprune(i)?;
        }
        if cfg.enable_cpg && i == cfg.n_iter {
            self.ensemble.freeze_auxiliaries(cfg.freeze())?;
            self.event(i, "freeze", format!("mode={:?}", cfg.freeze_mode).to_lowercase());
        }
        debug_assert!(self.buffers_consistent());
        if i.is_multiple_of(cfg.log_every) {
            let row = LogRow {
                iteration: i,
                total: self.last.total,
                reconstruction: self.last.reconstruction_total,
                guidance: self.last.guidance_total,
                counts: self.ensemble.counts(),
                probe_psnr: self.probe_psnr()?,
            };
            self.log.push(row);
        }
        if i.is_multiple_of(cfg.checkpoint_every) {
            if let Some(dir) = self.out_dir.clone() {
                self.save_checkpoint(&dir.join(format!("ckpt_{i}")))?;
            }
        }
        Ok(())
    }

    fn event(&mut self, iteration: usize, kind: &'static str, detail: String) {
        self.events.push(Event { iteration, kind, detail });
    }

    fn next_label(&mut self) -> usize {
        let selected: Vec<usize> = (0..self.labels.len()).filter(|&j| self.labels[j].selected).collect();
        let li = selected[self.guidance_cursor % selected.len()];
        self.guidance_cursor += 1;
        li
    }

    fn probe_psnr(&self) -> Result<f64> {
        let (cam, img) = match (self.set.holdout_cameras.first(), self.set.holdout_images.first()) {
            (Some(c), Some(i)) => (c, i),
            _ => (&self.set.cameras[0], &self.set.images[0]),
        };
        psnr(&render(&self.ensemble.primary, cam, self.config.background).rgb, img)
    }

    fn select_labels(&mut self, i: usize) -> Result<()> {
        let cfg = &self.config;
        for l in self.labels.iter_mut() {
            let out = render(&self.ensemble.primary, &l.camera, cfg.background);
            l.score = Some(score_pseudo_label(l, &out.rgb, cfg.lambda_l1, cfg.lambda_dssim, cfg.score_rule)?);
        }
        let chosen = select_top_half(&mut self.labels)?;
        let detail = chosen
            .iter()
            .map(|&j| format!("{}:{}", self.labels[j].pair, self.labels[j].step))
            .collect::<Vec<_>>()
            .join(",");
        self.event(i, "select", detail);
        Ok(())
    }

    fn apply_rows(&mut self, f: usize, keep: &[bool], added: usize) {
        self.optimizers[f].retain(keep);
        self.optimizers[f].extend(added);
        self.stats[f].retain(keep);
        self.stats[f].extend(added);
    }

    fn densify(&mut self, i: usize) -> Result<()> {
        let params = DensifyParams {
            grad_threshold: self.config.densify_grad_threshold,
            percent_dense: self.config.percent_dense,
            extent: self.radius,
            min_opacity: self.config.prune_opacity,
            prune_large: i > self.config.opacity_reset_every,
        };
        for f in 0..self.active_fields() {
            if self.ensemble.shape_frozen(f) {
                continue;
            }
            let edit = plan_densify(self.ensemble.field(f), &self.stats[f], &params, &mut self.rngs[f]);
            let survivors = edit.keep.iter().filter(|&&k| k).count() + edit.added.len();
            if survivors < self.config.knn.max(1) {
                self.event(i, "densify_skipped", format!("field={}", FIELD_NAMES[f]));
                continue;
            }
            let added = edit.added.len();
            let field = self.ensemble.field_mut(f);
            field.retain_mask(&edit.keep);
            field.extend(edit.added);
            self.apply_rows(f, &edit.keep, added);
            self.stats[f].clear();
            if edit.cloned + edit.split + edit.pruned > 0 {
                self.event(
                    i,
                    "densify",
                    format!("field={} cloned={} split={} pruned={}", FIELD_NAMES[f], edit.cloned, edit.split, edit.pruned),
                );
            }
        }
        Ok(())
    }

    fn patch_control(&mut self, i: usize) -> Result<()> {
        for f in 0..self.active_fields() {
            for v in 0..self.set.cameras.len() {
                let seed = self.rngs[f].random::<u64>();
                let cam = &self.set.cameras[v];
                let step = patch_control_view(self.ensemble.field_mut(f), cam, &self.set.images[v], &self.config, seed)?;
                let kind = if step.applied { "patch_control" } else { "patch_control_skipped" };
                self.apply_rows(f, &step.keep, step.spawned);
                self.event(i, kind, format!("field={} view={v} {}", FIELD_NAMES[f], step.detail));
            }
        }
        Ok(())
    }

    fn edge_spawn(&mut self, i: usize) -> Result<()> {
        for f in 0..self.active_fields() {
            let budget = (self.config.edge_budget_fraction * self.ensemble.field(f).len() as f64).floor() as usize;
            for v in 0..self.set.cameras.len() {
                let seed = self.rngs[f].random::<u64>();
                let cam = &self.set.cameras[v];
                let step = edge_spawn_view(self.ensemble.field_mut(f), cam, &self.set.images[v], budget, &self.config, seed)?;
                self.apply_rows(f, &step.keep, step.spawned);
                self.event(i, "edge_spawn", format!("field={} view={v} {}", FIELD_NAMES[f], step.detail));
            }
        }
        Ok(())
    }

    fn coprune(&mut self, i: usize) -> Result<()> {
        let (kind, outcome): (&'static str, PruneOutcome) = match self.ensemble.phase() {
            Phase::Mutual => ("coprune_mutual", self.ensemble.mutual_coprune(self.delta_world)?),
            Phase::PostFreeze => (
                "coprune_unilateral",
                self.ensemble.unilateral_coprune(self.delta_world, self.config.aggregation())?,
            ),
        };
        for f in 0..3 {
            let keep = &outcome.keep[f];
            if keep.contains(&false) {
                self.optimizers[f].retain(keep);
                self.stats[f].retain(keep);
            }
        }
        let r = outcome.removed();
        self.event(i, kind, format!("delta={} removed={},{},{}", self.delta_world, r[0], r[1], r[2]));
        Ok(())
    }

    /// Writes the three fields and the pseudo-label cameras to `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_ply(&self.ensemble.primary, dir.join("primary.ply"))?;
        save_ply(&self.ensemble.aux[0], dir.join("aux1.ply"))?;
        save_ply(&self.ensemble.aux[1], dir.join("aux2.ply"))?;
        let cams: Vec<Camera> = self.labels.iter().map(|l| l.camera.clone()).collect();
        save_cameras(&cams, dir.join("cameras.json"))
    }

    fn dump_failure(&self, i: usize) {
        if let Some(dir) = &self.out_dir {
            // best effort; the loss error is what gets reported
            let _ = self.save_checkpoint(&dir.join(format!("failed_{i}")));
        }
    }

    pub fn log_tsv(&self) -> String {
        let mut s = String::from(LogRow::HEADER);
        s.push('\n');
        for r in &self.log {
            s.push_str(&r.to_tsv());
            s.push('\n');
        }
        s
    }

    pub fn events_tsv(&self) -> String {
        let mut s = String::from("iteration\tkind\tdetail\n");
        for e in &self.events {
            s.push_str(&e.to_tsv());
            s.push('\n');
        }
        s
    }
}
