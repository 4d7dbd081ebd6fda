//! Feature-adaptive densification and pruning: edge-guided spawning with
//! inverse-distance attribute inheritance, and patch-count rebalancing.

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};
use crate::render::project;
use crate::scene::{quat, Camera, GaussianField, Splat};

/// Distance offset in the inverse-distance weights.
pub const IDW_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    pub detector: &'static str,
    pub high: f64,
    pub low: f64,
}

impl EdgeMap {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Edge pixels in raster order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        (0..self.mask.len())
            .filter(|&i| self.mask[i])
            .map(|i| (i % self.width, i / self.width))
            .collect()
    }
}

/// Sobel magnitude, non-maximum suppression and hysteresis on luminance.
///
/// The high threshold is the 90th percentile of all gradient magnitudes, the
/// low threshold half of it; only pixels with nonzero magnitude qualify.
pub fn detect_edges(image: &Image) -> EdgeMap {
    let (w, h) = image.dims();
    let lum = image.luminance();
    let at = |x: isize, y: isize| lum[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut mag = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mag[i] = gx[i].hypot(gy[i]);
        }
    }
    let mut sorted = mag.clone();
    sorted.sort_by(f64::total_cmp);
    let high = sorted[((sorted.len() - 1) as f64 * 0.9).floor() as usize];
    let low = high / 2.0;

    let m = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if mag[i] == 0.0 {
                continue;
            }
            // quantize the gradient direction to one of four neighbor axes
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (dx, dy) = match angle {
                a if !(22.5..157.5).contains(&a) => (1, 0),
                a if a < 67.5 => (1, 1),
                a if a < 112.5 => (0, 1),
                _ => (-1, 1),
            };
            let (a, b) = (m(x + dx, y + dy), m(x - dx, y - dy));
            if mag[i] >= a && mag[i] > b {
                thin[i] = mag[i];
            }
        }
    }

    let mut mask = vec![false; w * h];
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| thin[i] > 0.0 && thin[i] >= high).collect();
    for &i in &stack {
        mask[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !mask[j] && thin[j] > 0.0 && thin[j] >= low {
                    mask[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    EdgeMap {
        width: w,
        height: h,
        mask,
        detector: "sobel-nms-hysteresis",
        high,
        low,
    }
}

/// Up to `budget` distinct edge pixels drawn uniformly without replacement.
pub fn sample_edge_points(edge: &EdgeMap, budget: usize, seed: u64) -> Vec<(usize, usize)> {
    let pixels = edge.pixels();
    let n = budget.min(pixels.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, pixels.len(), n).into_iter().map(|i| pixels[i]).collect()
}

/// Lifts pixels to world points `camera_to_world(d · K⁻¹ (u, v, 1))`.
///
/// Pixels with `alpha <= 0.5` are skipped; the second value counts them.
pub fn backproject(
    pixels: &[(usize, usize)],
    depth: &DepthMap,
    alpha: &DepthMap,
    camera: &Camera,
) -> (Vec<[f64; 3]>, usize) {
    let pose = camera.effective_pose();
    let k = camera.intrinsics;
    let mut out = Vec::with_capacity(pixels.len());
    let mut skipped = 0;
    for &(u, v) in pixels {
        if alpha.get(u, v) <= 0.5 {
            skipped += 1;
            continue;
        }
        let d = depth.get(u, v);
        let ray = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
        let p = pose.camera_to_world(&(ray * d));
        out.push([p.x, p.y, p.z]);
    }
    (out, skipped)
}

/// Alpha-normalized expected depth `D / alpha`; zero where nothing was hit.
pub fn normalized_depth(depth: &DepthMap, alpha: &DepthMap) -> DepthMap {
    let data = depth
        .data()
        .iter()
        .zip(alpha.data())
        .map(|(&d, &a)| if a > 0.0 { d / a } else { 0.0 })
        .collect();
    DepthMap::from_vec(depth.width(), depth.height(), data).expect("matching dims")
}

/// New splats at `points` whose attributes are inverse-distance weighted
/// averages over the `k` nearest splats of `field` (rotation averaged
/// componentwise, then renormalized). The field itself is not modified.
pub fn inherit_attributes(points: &[[f64; 3]], field: &GaussianField, k: usize) -> Result<Vec<Splat>> {
    if field.len() < k || k == 0 {
        return Err(Error::InsufficientNeighbors {
            requested: k,
            available: field.len(),
        });
    }
    let index = field.build_index()?;
    points
        .iter()
        .map(|p| {
            let nn = index.k_nearest(p, k)?;
            let mut acc = [0.0; 14];
            let mut wsum = 0.0;
            for &(j, d) in &nn {
                let w = 1.0 / (d + IDW_EPSILON);
                let s = field.splat(j);
                let attrs = [
                    s.color_raw[0],
                    s.color_raw[1],
                    s.color_raw[2],
                    s.opacity_logit,
                    s.log_scale[0],
                    s.log_scale[1],
                    s.log_scale[2],
                    s.rotation[0],
                    s.rotation[1],
                    s.rotation[2],
                    s.rotation[3],
                ];
                for (a, v) in acc.iter_mut().zip(attrs) {
                    *a += w * v;
                }
                wsum += w;
            }
            let a: Vec<f64> = acc.iter().map(|v| v / wsum).collect();
            Ok(Splat {
                position: *p,
                color_raw: [a[0], a[1], a[2]],
                opacity_logit: a[3],
                log_scale: [a[4], a[5], a[6]],
                rotation: quat::normalize(&[a[7], a[8], a[9], a[10]]),
            })
        })
        .collect()
}

/// Appends one inherited splat per point; existing splats are untouched.
pub fn spawn_gaussians(points: &[[f64; 3]], field: &mut GaussianField, k: usize) -> Result<usize> {
    let new = inherit_attributes(points, field, k)?;
    let n = new.len();
    field.extend(new);
    Ok(n)
}

/// Thresholds and factors of the patch-count reweighting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityThresholds {
    pub tau_sparse: f64,
    pub tau_low: f64,
    pub tau_high: f64,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub c_min: usize,
}

impl DensityThresholds {
    pub fn validate(&self) -> Result<()> {
        let t = self;
        if !(0.0 <= t.tau_sparse && t.tau_sparse < t.tau_low && t.tau_low <= t.tau_high) {
            return Err(Error::InvalidThresholds(format!(
                "need 0 <= tau_sparse < tau_low <= tau_high, got {} {} {}",
                t.tau_sparse, t.tau_low, t.tau_high
            )));
        }
        if !(t.lambda_low > 1.0 && t.lambda_high > 0.0 && t.lambda_high < 1.0) {
            return Err(Error::InvalidThresholds(format!(
                "need lambda_low > 1 and 0 < lambda_high < 1, got {} {}",
                t.lambda_low, t.lambda_high
            )));
        }
        Ok(())
    }

    /// Piecewise target for a single patch count, before normalization.
    pub fn reweight(&self, c: usize) -> f64 {
        let cf = c as f64;
        if cf <= self.tau_sparse {
            self.c_min as f64
        } else if cf < self.tau_low {
            cf * self.lambda_low
        } else if cf <= self.tau_high {
            cf
        } else {
            cf * self.lambda_high
        }
    }
}

/// Count at `floor(frac · len)` in the counts sorted by density, descending.
pub fn rank_threshold(counts: &[usize], frac: f64) -> f64 {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let i = ((frac * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    sorted[i] as f64
}

/// Rank-based thresholds; `tau_sparse` is lowered below `tau_low` when the two
/// coincide. `None` if no valid ordering exists (e.g. `tau_low == 0`).
pub fn thresholds_from_counts(
    counts: &[usize],
    sparse_frac: f64,
    low_frac: f64,
    high_frac: f64,
    lambda_low: f64,
    lambda_high: f64,
    c_min: usize,
) -> Option<DensityThresholds> {
    if counts.is_empty() {
        return None;
    }
    let tau_low = rank_threshold(counts, low_frac);
    let mut tau_sparse = rank_threshold(counts, sparse_frac);
    if tau_sparse >= tau_low {
        tau_sparse = tau_low - 1.0;
    }
    let t = DensityThresholds {
        tau_sparse,
        tau_low,
        tau_high: rank_threshold(counts, high_frac),
        lambda_low,
        lambda_high,
        c_min,
    };
    t.validate().ok().map(|_| t)
}

/// Reweights counts, rescales to the original total with half-up rounding,
/// and corrects the rounding residual so the total is preserved exactly.
///
/// A positive residual goes one unit at a time to patches in descending
/// order of their pre-round fractional part (ties by index); a negative one
/// is taken one unit at a time from the currently largest count (ties by index).
pub fn rebalance_counts(counts: &[usize], t: &DensityThresholds) -> Result<Vec<usize>> {
    t.validate()?;
    let total: usize = counts.iter().sum();
    let raw: Vec<f64> = counts.iter().map(|&c| t.reweight(c)).collect();
    let raw_sum: f64 = raw.iter().sum();
    if raw_sum <= 0.0 {
        return Ok(counts.to_vec());
    }
    let scale = total as f64 / raw_sum;
    let scaled: Vec<f64> = raw.iter().map(|r| r * scale).collect();
    let mut out: Vec<usize> = scaled.iter().map(|s| (s + 0.5).floor() as usize).collect();
    let mut residual = total as i64 - out.iter().sum::<usize>() as i64;
    if residual > 0 {
        let mut order: Vec<usize> = (0..out.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = scaled[a] - scaled[a].floor();
            let fb = scaled[b] - scaled[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if residual == 0 {
                break;
            }
            out[i] += 1;
            residual -= 1;
        }
    }
    while residual < 0 {
        let i = (0..out.len()).max_by(|&a, &b| out[a].cmp(&out[b]).then(b.cmp(&a))).expect("non-empty");
        out[i] -= 1;
        residual += 1;
    }
    Ok(out)
}

/// Per-patch membership of splats whose projected mean rounds to a pixel inside the image.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchCounts {
    pub m: usize,
    pub counts: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

/// Patch index of pixel `(x, y)` on an `m × m` grid.
pub fn patch_of(x: usize, y: usize, width: usize, height: usize, m: usize) -> usize {
    (y * m / height) * m + x * m / width
}

pub fn patch_counts(field: &GaussianField, camera: &Camera, m: usize) -> PatchCounts {
    let (w, h) = (camera.width(), camera.height());
    let mut members = vec![Vec::new(); m * m];
    for (i, p) in project(camera, field).iter().enumerate() {
        if !p.in_frustum {
            continue;
        }
        let (x, y) = (p.mean[0].round(), p.mean[1].round());
        if x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64 {
            members[patch_of(x as usize, y as usize, w, h, m)].push(i);
        }
    }
    PatchCounts {
        m,
        counts: members.iter().map(Vec::len).collect(),
        members,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityPlan {
    pub targets: Vec<usize>,
    /// Splats to remove, per patch.
    pub prune: Vec<Vec<usize>>,
    /// Splats to add, per patch.
    pub spawn: Vec<usize>,
}

impl DensityPlan {
    pub fn is_empty(&self) -> bool {
        self.prune.iter().all(Vec::is_empty) && self.spawn.iter().all(|&s| s == 0)
    }
}

/// Prunes the lowest-opacity splats (ties by index) where the target is below
/// the count and schedules spawns where it is above.
pub fn plan_density(field: &GaussianField, counts: &PatchCounts, targets: &[usize]) -> DensityPlan {
    let opac = field.activate().opacities;
    let mut prune = vec![Vec::new(); counts.counts.len()];
    let mut spawn = vec![0; counts.counts.len()];
    for (p, (&c, &t)) in counts.counts.iter().zip(targets).enumerate() {
        if t < c {
            let mut m = counts.members[p].clone();
            m.sort_by(|&a, &b| opac[a].total_cmp(&opac[b]).then(a.cmp(&b)));
            m.truncate(c - t);
            m.sort_unstable();
            prune[p] = m;
        } else {
            spawn[p] = t - c;
        }
    }
    DensityPlan {
        targets: targets.to_vec(),
        prune,
        spawn,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApplyReport {
    pub pruned: usize,
    pub spawned: usize,
    /// Patches that needed spawns but had no pixel with alpha > 0.5.
    pub skipped_patches: Vec<usize>,
}

/// Executes a plan for one camera. Spawn sites are edge pixels of the patch
/// first, then its other covered pixels, cycling when more are needed;
/// attributes are inherited from the field as it was before the plan.
#[allow(clippy::too_many_arguments)]
pub fn apply_plan(
    field: &mut GaussianField,
    plan: &DensityPlan,
    camera: &Camera,
    depth: &DepthMap,
    alpha: &DepthMap,
    edges: Option<&EdgeMap>,
    k: usize,
    seed: u64,
) -> Result<ApplyReport> {
    if plan.is_empty() {
        return Ok(ApplyReport::default());
    }
    let (w, h) = (camera.width(), camera.height());
    let m = (plan.targets.len() as f64).sqrt().round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ApplyReport::default();
    let mut sites = Vec::new();
    for (p, &n) in plan.spawn.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let (py, px) = (p / m, p % m);
        let ys = (py * h).div_ceil(m)..((py + 1) * h).div_ceil(m);
        let xs = (px * w).div_ceil(m)..((px + 1) * w).div_ceil(m);
        let mut edge_px = Vec::new();
        let mut other_px = Vec::new();
        for y in ys {
            for x in xs.clone() {
                if alpha.get(x, y) <= 0.5 {
                    continue;
                }
                if edges.is_some_and(|e| e.get(x, y)) {
                    edge_px.push((x, y));
                } else {
                    other_px.push((x, y));
                }
            }
        }
        let avail = edge_px.len() + other_px.len();
        if avail == 0 {
            report.skipped_patches.push(p);
            continue;
        }
        shuffle(&mut edge_px, &mut rng);
        shuffle(&mut other_px, &mut rng);
        let pool: Vec<(usize, usize)> = edge_px.into_iter().chain(other_px).collect();
        for i in 0..n {
            let px = if i < pool.len() { pool[i] } else { pool[rng.random_range(0..pool.len())] };
            sites.push(px);
        }
    }
    let (points, _) = backproject(&sites, depth, alpha, camera);
    let new = if points.is_empty() { Vec::new() } else { inherit_attributes(&points, field, k)? };

    let mut keep = vec![true; field.len()];
    for i in plan.prune.iter().flatten() {
        if keep[*i] {
            keep[*i] = false;
            report.pruned += 1;
        }
    }
    field.retain_mask(&keep);
    report.spawned = new.len();
    field.extend(new);
    Ok(report)
}

fn shuffle<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
}

#[cfg(test)]
mod tests;
