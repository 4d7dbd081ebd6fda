use rayon::prelude::*;

use super::project::{project, Projected, EXTENT_SIGMAS};
use super::{Contribution, RenderOutput, ROWS_PER_CHUNK, TRANSMITTANCE_CUTOFF};
use crate::image::{DepthMap, Image};
use crate::scene::{Camera, GaussianField};

const SPAN: usize = 8;
const MAX_POWER: f64 = EXTENT_SIGMAS * EXTENT_SIGMAS;

struct ChunkOut {
    rgb: Vec<f64>,
    depth: Vec<f64>,
    alpha: Vec<f64>,
    records: Vec<Contribution>,
    counts: Vec<u32>,
}

#[inline]
fn power(p: &Projected, x: f64, y: f64) -> f64 {
    let dx = x - p.mean[0];
    let dy = y - p.mean[1];
    p.conic[(0, 0)] * dx * dx + 2.0 * p.conic[(0, 1)] * dx * dy + p.conic[(1, 1)] * dy * dy
}

#[inline]
pub(super) fn falloff(p: &Projected, x: f64, y: f64) -> (f64, f64) {
    let power = power(p, x, y);
    (power, (-0.5 * power).exp())
}

/// Per-splat data the rasterizer reads, laid out in front-to-back order.
struct Packed {
    splat: u32,
    mean: [f64; 2],
    conic: [f64; 3],
    depth: f64,
    opacity: f64,
    color: [f64; 3],
}

impl Packed {
    /// Same arithmetic as [`power`].
    #[inline]
    fn power(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean[0];
        let dy = y - self.mean[1];
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }
}

/// In-frustum splats front to back: depth, then index.
fn depth_order(proj: &[Projected], field: &GaussianField) -> Vec<Packed> {
    let mut keys: Vec<(f64, u32)> = proj
        .iter()
        .enumerate()
        .filter(|(_, p)| p.in_frustum)
        .map(|(i, p)| (p.depth, i as u32))
        .collect();
    keys.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let view = field.activate();
    keys.into_iter()
        .map(|(_, i)| {
            let p = &proj[i as usize];
            Packed {
                splat: i,
                mean: p.mean,
                conic: [p.conic[(0, 0)], p.conic[(0, 1)], p.conic[(1, 1)]],
                depth: p.depth,
                opacity: view.opacities[i as usize],
                color: view.colors[i as usize],
            }
        })
        .collect()
}

/// Integer pixel coordinates inside `[lo, hi]`, clamped to `0..n`.
#[inline]
fn pixel_range(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    if !(hi >= 0.0 && lo <= (n - 1) as f64) {
        return None;
    }
    let first = if lo <= 0.0 {
        0
    } else {
        let t = lo as usize;
        t + ((t as f64) < lo) as usize
    };
    let last = (hi as usize).min(n - 1);
    (first <= last).then_some((first, last))
}

/// Bins in-frustum splats into one-row spans of `SPAN` pixels, keeping depth
/// order within each bin. A splat enters a bin when its 3σ ellipse, slightly
/// padded, crosses that row inside the span.
fn bin_spans(packed: &[Packed], width: usize, height: usize) -> Bins {
    let sx = width.div_ceil(SPAN);
    let mut entries: Vec<(u32, u32)> = Vec::with_capacity(packed.len() * 8);
    let limit = MAX_POWER * (1.0 + 1e-6);
    for (rank, p) in packed.iter().enumerate() {
        let [a, b, c] = p.conic;
        // power = a (dx + b dy / a)^2 + (c - b^2 / a) dy^2
        let k = c - b * b / a;
        if !(a > 0.0 && k > 0.0) {
            continue;
        }
        let ry = (limit / k).sqrt() + 1e-6;
        let Some((y0, y1)) = pixel_range(p.mean[1] - ry, p.mean[1] + ry, height) else {
            continue;
        };
        let (inv_a, b_a) = (1.0 / a, b / a);
        for y in y0..=y1 {
            let dy = y as f64 - p.mean[1];
            let rest = limit - k * dy * dy;
            if rest < 0.0 {
                continue;
            }
            let cx = p.mean[0] - b_a * dy;
            let hw = (rest * inv_a).sqrt() + 1e-6;
            let Some((x0, x1)) = pixel_range(cx - hw, cx + hw, width) else {
                continue;
            };
            for s in x0 / SPAN..=x1 / SPAN {
                entries.push(((y * sx + s) as u32, rank as u32));
            }
        }
    }
    // stable counting sort by bin keeps depth order inside each bin
    let mut start = vec![0u32; sx * height + 1];
    for &(b, _) in &entries {
        start[b as usize + 1] += 1;
    }
    for k in 1..start.len() {
        start[k] += start[k - 1];
    }
    let mut fill = start.clone();
    let mut items = vec![0u32; entries.len()];
    for &(b, i) in &entries {
        items[fill[b as usize] as usize] = i;
        fill[b as usize] += 1;
    }
    Bins { per_row: sx, start, items }
}

struct Bins {
    per_row: usize,
    start: Vec<u32>,
    items: Vec<u32>,
}

impl Bins {
    fn get(&self, x: usize, y: usize) -> &[u32] {
        let b = y * self.per_row + x / SPAN;
        &self.items[self.start[b] as usize..self.start[b + 1] as usize]
    }
}

/// Renders color, depth and accumulated alpha.
///
/// Each pixel composites the splats whose 3σ ellipse covers it, front to
/// back; compositing stops once transmittance falls below 1e-4 (the splat
/// that crosses the threshold is still included).
pub fn render(field: &GaussianField, camera: &Camera, background: [f64; 3]) -> RenderOutput {
    let width = camera.width();
    let height = camera.height();
    let proj = project(camera, field);
    let packed = depth_order(&proj, field);
    let bins = bin_spans(&packed, width, height);

    let chunks: Vec<ChunkOut> = (0..height.div_ceil(ROWS_PER_CHUNK))
        .into_par_iter()
        .map(|c| {
            let y_start = c * ROWS_PER_CHUNK;
            let y_end = (y_start + ROWS_PER_CHUNK).min(height);
            let n = (y_end - y_start) * width;
            let mut out = ChunkOut {
                rgb: Vec::with_capacity(n * 3),
                depth: Vec::with_capacity(n),
                alpha: Vec::with_capacity(n),
                records: Vec::new(),
                counts: Vec::with_capacity(n),
            };
            for y in y_start..y_end {
                for x in 0..width {
                    let list = bins.get(x, y);
                    let before = out.records.len();
                    let mut t = 1.0;
                    let mut rgb = [0.0; 3];
                    let mut depth = 0.0;
                    for &r in list {
                        let p = &packed[r as usize];
                        let power = p.power(x as f64, y as f64);
                        if power > MAX_POWER {
                            continue;
                        }
                        let g = (-0.5 * power).exp();
                        let alpha = p.opacity * g;
                        let w = alpha * t;
                        let c = &p.color;
                        rgb[0] += c[0] * w;
                        rgb[1] += c[1] * w;
                        rgb[2] += c[2] * w;
                        depth += p.depth * w;
                        out.records.push(Contribution {
                            splat: p.splat,
                            alpha,
                            trans: t,
                            falloff: g,
                        });
                        t *= 1.0 - alpha;
                        if t < TRANSMITTANCE_CUTOFF {
                            break;
                        }
                    }
                    for k in 0..3 {
                        out.rgb.push(rgb[k] + t * background[k]);
                    }
                    out.depth.push(depth);
                    out.alpha.push(1.0 - t);
                    out.counts.push((out.records.len() - before) as u32);
                }
            }
            out
        })
        .collect();

    let mut rgb = Vec::with_capacity(width * height * 3);
    let mut depth = Vec::with_capacity(width * height);
    let mut alpha = Vec::with_capacity(width * height);
    let mut records = Vec::with_capacity(chunks.iter().map(|c| c.records.len()).sum());
    let mut offsets = Vec::with_capacity(width * height + 1);
    offsets.push(0u32);
    for c in chunks {
        rgb.extend_from_slice(&c.rgb);
        depth.extend_from_slice(&c.depth);
        alpha.extend_from_slice(&c.alpha);
        for n in c.counts {
            let last = *offsets.last().unwrap();
            offsets.push(last + n);
        }
        records.extend(c.records);
    }

    RenderOutput {
        rgb: Image::from_vec(width, height, rgb).expect("render buffer size"),
        depth: DepthMap::from_vec(width, height, depth).expect("render buffer size"),
        alpha: DepthMap::from_vec(width, height, alpha).expect("render buffer size"),
        background,
        revision: field.revision(),
        splat_count: field.len(),
        projections: proj,
        records,
        offsets,
    }
}

/// Re-evaluates compositing with the per-pixel contribution lists of an
/// earlier render held fixed: same splats, same order, same truncation point,
/// and no cutoff tests.
///
/// This is the piecewise-smooth function whose derivative `render_backward`
/// computes; finite differences through it are free of cutoff and
/// sort-order discontinuities.
pub fn render_frozen(
    field: &GaussianField,
    camera: &Camera,
    structure: &RenderOutput,
) -> (Image, DepthMap) {
    let width = camera.width();
    let height = camera.height();
    let proj = project(camera, field);
    let view = field.activate();
    let bg = structure.background;
    let mut rgb = Image::new(width, height);
    let mut depth = DepthMap::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let mut t = 1.0;
            let mut c_acc = [0.0; 3];
            let mut d_acc = 0.0;
            for rec in structure.pixel_records(x, y) {
                let i = rec.splat as usize;
                let p = &proj[i];
                let (_, g) = falloff(p, x as f64, y as f64);
                let alpha = view.opacities[i] * g;
                let w = alpha * t;
                for k in 0..3 {
                    c_acc[k] += view.colors[i][k] * w;
                }
                d_acc += p.depth * w;
                t *= 1.0 - alpha;
            }
            rgb.set(
                x,
                y,
                [
                    c_acc[0] + t * bg[0],
                    c_acc[1] + t * bg[1],
                    c_acc[2] + t * bg[2],
                ],
            );
            depth.set(x, y, d_acc);
        }
    }
    (rgb, depth)
}
