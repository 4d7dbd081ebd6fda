//! Training configuration and its `key = value` text form.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::cpg::{Aggregation, FreezeMode};
use crate::error::{Error, Result};
use crate::guidance::{GuidanceSchedule, ScoreRule};
use crate::losses::LossWeights;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationSetting {
    #[default]
    Or,
    And,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreezeSetting {
    #[default]
    Partial,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_iterations: usize,
    /// Iteration at which the auxiliary fields are frozen.
    pub n_iter: usize,
    pub fadp_edge_iteration: usize,
    pub patch_control_iteration: usize,
    /// Interpolation factor S.
    pub interp_factor: usize,
    /// Co-pruning distance in units of the camera bounding-box diagonal.
    pub delta: f64,
    pub patch_grid: usize,
    pub knn: usize,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub c_min: usize,
    pub tau_sparse_rank: f64,
    pub tau_low_rank: f64,
    pub tau_high_rank: f64,
    pub edge_budget_fraction: f64,
    pub lambda_l1: f64,
    pub lambda_dssim: f64,
    pub lambda_depth: f64,
    pub lambda_g_start: f64,
    pub lambda_g_end: f64,
    pub guidance_start: usize,
    pub guidance_on: usize,
    pub guidance_period: usize,
    pub guidance_interval: usize,
    pub selection_every: usize,
    pub score_rule: ScoreRule,
    pub coprune_start: usize,
    pub coprune_every: usize,
    pub aggregation: AggregationSetting,
    pub freeze_mode: FreezeSetting,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_every: usize,
    pub densify_grad_threshold: f64,
    pub percent_dense: f64,
    pub opacity_reset_every: usize,
    pub prune_opacity: f64,
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_color: f64,
    pub lr_pose: f64,
    pub init_opacity: f64,
    pub aux_jitter: f64,
    pub background: [f64; 3],
    pub seed: u64,
    pub enable_pseudo_labels: bool,
    pub enable_fadp: bool,
    pub enable_cpg: bool,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iterations: 20000,
            n_iter: 10000,
            fadp_edge_iteration: 10000,
            patch_control_iteration: 8000,
            interp_factor: 4,
            delta: 5.0,
            patch_grid: 8,
            knn: 3,
            lambda_low: 2.0,
            lambda_high: 0.8,
            c_min: 4,
            tau_sparse_rank: 0.9,
            tau_low_rank: 0.5,
            tau_high_rank: 0.1,
            edge_budget_fraction: 0.05,
            lambda_l1: 0.8,
            lambda_dssim: 0.2,
            lambda_depth: 0.05,
            lambda_g_start: 0.075,
            lambda_g_end: 0.15,
            guidance_start: 2000,
            guidance_on: 100,
            guidance_period: 200,
            guidance_interval: 10,
            selection_every: 1000,
            score_rule: ScoreRule::Product,
            coprune_start: 3000,
            coprune_every: 500,
            aggregation: AggregationSetting::Or,
            freeze_mode: FreezeSetting::Partial,
            densify_from: 500,
            densify_until: 15000,
            densify_every: 100,
            densify_grad_threshold: 2e-4,
            percent_dense: 0.01,
            opacity_reset_every: 3000,
            prune_opacity: 0.005,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_opacity: 0.05,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_color: 2.5e-3,
            lr_pose: 1e-4,
            init_opacity: 0.1,
            aux_jitter: 0.1,
            background: [0.0; 3],
            seed: 0,
            enable_pseudo_labels: true,
            enable_fadp: true,
            enable_cpg: true,
            log_every: 100,
            checkpoint_every: 5000,
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg.into()))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check(
            self.patch_control_iteration < self.fadp_edge_iteration
                && self.fadp_edge_iteration <= self.n_iter
                && self.n_iter <= self.total_iterations,
            "need patch_control_iteration < fadp_edge_iteration <= n_iter <= total_iterations",
        )?;
        check(self.interp_factor >= 2, "interp_factor must be >= 2")?;
        check(self.delta >= 0.0, "delta must be non-negative")?;
        check(self.patch_grid >= 1 && self.knn >= 1, "patch_grid and knn must be >= 1")?;
        check(self.lambda_low > 1.0, "lambda_low must exceed 1")?;
        check(self.lambda_high > 0.0 && self.lambda_high < 1.0, "lambda_high must lie in (0, 1)")?;
        check(
            (0.0..=1.0).contains(&self.tau_high_rank)
                && self.tau_high_rank <= self.tau_low_rank
                && self.tau_low_rank <= self.tau_sparse_rank
                && self.tau_sparse_rank <= 1.0,
            "need 0 <= tau_high_rank <= tau_low_rank <= tau_sparse_rank <= 1",
        )?;
        check((0.0..=1.0).contains(&self.edge_budget_fraction), "edge_budget_fraction must lie in [0, 1]")?;
        for (v, name) in [
            (self.lambda_l1, "lambda_l1"),
            (self.lambda_dssim, "lambda_dssim"),
            (self.lambda_depth, "lambda_depth"),
            (self.lambda_g_start, "lambda_g_start"),
        ] {
            check(v >= 0.0 && v.is_finite(), &format!("{name} must be finite and >= 0"))?;
        }
        check(self.lambda_g_end >= self.lambda_g_start, "lambda_g_end must be >= lambda_g_start")?;
        check(
            self.guidance_period >= 1 && self.guidance_on <= self.guidance_period,
            "need 1 <= guidance_period and guidance_on <= guidance_period",
        )?;
        for (v, name) in [
            (self.guidance_interval, "guidance_interval"),
            (self.selection_every, "selection_every"),
            (self.coprune_every, "coprune_every"),
            (self.densify_every, "densify_every"),
            (self.opacity_reset_every, "opacity_reset_every"),
            (self.log_every, "log_every"),
            (self.checkpoint_every, "checkpoint_every"),
        ] {
            check(v >= 1, &format!("{name} must be >= 1"))?;
        }
        check(self.init_opacity > 0.0 && self.init_opacity < 1.0, "init_opacity must lie in (0, 1)")?;
        check(self.background.iter().all(|c| (0.0..=1.0).contains(c)), "background must lie in [0, 1]")?;
        for (v, name) in [
            (self.lr_position_init, "lr_position_init"),
            (self.lr_position_final, "lr_position_final"),
            (self.lr_opacity, "lr_opacity"),
            (self.lr_scale, "lr_scale"),
            (self.lr_rotation, "lr_rotation"),
            (self.lr_color, "lr_color"),
            (self.lr_pose, "lr_pose"),
        ] {
            check(v >= 0.0 && v.is_finite(), &format!("{name} must be finite and >= 0"))?;
        }
        check(self.lr_position_final > 0.0 || self.lr_position_init == 0.0, "lr_position_final must be > 0")?;
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; values are JSON literals or bare words.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.split('#').next().unwrap_or("").trim();
            if !body.is_empty() {
                let (k, v) = body
                    .split_once('=')
                    .ok_or_else(|| Error::parse(offset, format!("expected key = value, got {body:?}")))?;
                self.set(k.trim(), v.trim()).map_err(|e| match e {
                    Error::InvalidConfig(m) => Error::parse(offset, m),
                    other => other,
                })?;
            }
            offset += line.len();
        }
        self.validate()
    }

    /// Sets one field by name from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parsed = serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let mut map: Map<String, Value> = match serde_json::to_value(&*self)? {
            Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        if !map.contains_key(key) {
            return Err(Error::InvalidConfig(format!("unknown key {key:?}")));
        }
        map.insert(key.to_string(), parsed);
        *self = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::InvalidConfig(format!("bad value for {key}: {e}")))?;
        Ok(())
    }

    /// `key = value` lines for every field, in declaration order.
    pub fn to_text(&self) -> String {
        let Ok(Value::Object(map)) = serde_json::to_value(self) else {
            unreachable!("config serializes to an object")
        };
        let mut out = String::new();
        for (k, v) in map {
            let v = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            l1: self.lambda_l1,
            dssim: self.lambda_dssim,
            depth: self.lambda_depth,
        }
    }

    pub fn guidance_schedule(&self) -> GuidanceSchedule {
        GuidanceSchedule {
            start: self.guidance_start,
            on: self.guidance_on,
            period: self.guidance_period,
        }
    }

    pub fn aggregation(&self) -> Aggregation {
        match self.aggregation {
            AggregationSetting::Or => Aggregation::Or,
            AggregationSetting::And => Aggregation::And,
        }
    }

    pub fn freeze(&self) -> FreezeMode {
        match self.freeze_mode {
            FreezeSetting::Partial => FreezeMode::Partial,
            FreezeSetting::Full => FreezeMode::Full,
        }
    }

    /// Guidance weight: zero before guidance starts, then linear from
    /// `lambda_g_start` to `lambda_g_end` at the last iteration.
    pub fn lambda_g(&self, iteration: usize) -> f64 {
        if iteration < self.guidance_start {
            return 0.0;
        }
        let span = self.total_iterations.saturating_sub(self.guidance_start).max(1) as f64;
        let t = ((iteration - self.guidance_start) as f64 / span).min(1.0);
        self.lambda_g_start + (self.lambda_g_end - self.lambda_g_start) * t
    }

    /// Log-linear decay of the position learning rate over the whole run.
    pub fn position_lr(&self, iteration: usize) -> f64 {
        if self.lr_position_init == 0.0 {
            return 0.0;
        }
        let t = (iteration as f64 / self.total_iterations.max(1) as f64).clamp(0.0, 1.0);
        (self.lr_position_init.ln() * (1.0 - t) + self.lr_position_final.ln() * t).exp()
    }

    /// Disables modules by name (`pl`, `fadp`, `cpg`), comma separated.
    pub fn ablate(&mut self, list: &str) -> Result<()> {
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "pl" => self.enable_pseudo_labels = false,
                "fadp" => self.enable_fadp = false,
                "cpg" => self.enable_cpg = false,
                other => return Err(Error::InvalidConfig(format!("unknown module {other:?} (expected pl, fadp, cpg)"))),
            }
        }
        Ok(())
    }
}
