//! Photometric and depth losses with analytic gradients, plus PSNR/SSIM metrics.

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};

/// Side length of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
/// Floor on `σa·σb` in the correlation denominator.
pub const CORR_FLOOR: f64 = 1e-8;
/// Minimum number of masked pixels for the depth correlation loss.
pub const MIN_DEPTH_PIXELS: usize = 16;
pub const PSNR_CAP: f64 = 100.0;

/// Mean absolute difference over pixels and channels.
pub fn l1_loss(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// L1 loss and its gradient with respect to `rendered` (subgradient 0 at equality).
pub fn l1_with_grad(rendered: &Image, target: &Image) -> Result<(f64, Image)> {
    rendered.check_same_shape(target)?;
    let n = rendered.data().len().max(1) as f64;
    let mut sum = 0.0;
    let grad: Vec<f64> = rendered
        .data()
        .iter()
        .zip(target.data())
        .map(|(x, y)| {
            let d = x - y;
            sum += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((sum / n, Image::from_vec(rendered.width(), rendered.height(), grad)?))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut g: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        let d = i as f64 - c;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian filter over valid window positions.
struct Filter {
    taps: [f64; SSIM_WINDOW],
    w: usize,
    h: usize,
    ow: usize,
    oh: usize,
}

impl Filter {
    fn new(w: usize, h: usize) -> Result<Self> {
        if w < SSIM_WINDOW || h < SSIM_WINDOW {
            return Err(Error::ImageTooSmall {
                width: w,
                height: h,
                window: SSIM_WINDOW,
            });
        }
        Ok(Self {
            taps: gaussian_taps(),
            w,
            h,
            ow: w - SSIM_WINDOW + 1,
            oh: h - SSIM_WINDOW + 1,
        })
    }

    fn apply(&self, src: &[f64]) -> Vec<f64> {
        let mut tmp = vec![0.0; self.ow * self.h];
        for y in 0..self.h {
            let row = &src[y * self.w..(y + 1) * self.w];
            for x in 0..self.ow {
                tmp[y * self.ow + x] = self.taps.iter().zip(&row[x..]).map(|(g, v)| g * v).sum();
            }
        }
        let mut out = vec![0.0; self.ow * self.oh];
        for y in 0..self.oh {
            for (j, g) in self.taps.iter().enumerate() {
                let src = &tmp[(y + j) * self.ow..(y + j + 1) * self.ow];
                let dst = &mut out[y * self.ow..(y + 1) * self.ow];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += g * s;
                }
            }
        }
        out
    }

    /// Adjoint of [`Filter::apply`]: spreads a valid-size map back onto the full grid.
    fn adjoint(&self, map: &[f64]) -> Vec<f64> {
        let mut tmp = vec![0.0; self.ow * self.h];
        for y in 0..self.oh {
            let src = &map[y * self.ow..(y + 1) * self.ow];
            for (j, g) in self.taps.iter().enumerate() {
                let dst = &mut tmp[(y + j) * self.ow..(y + j + 1) * self.ow];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += g * s;
                }
            }
        }
        let mut out = vec![0.0; self.w * self.h];
        for y in 0..self.h {
            let row = &tmp[y * self.ow..(y + 1) * self.ow];
            let dst = &mut out[y * self.w..(y + 1) * self.w];
            for (x, &v) in row.iter().enumerate() {
                for (i, g) in self.taps.iter().enumerate() {
                    dst[x + i] += g * v;
                }
            }
        }
        out
    }
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM of one channel; with `grad`, also dSSIM/dx on the full grid.
fn ssim_plane(f: &Filter, x: &[f64], y: &[f64], grad: bool) -> (f64, Option<Vec<f64>>) {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = f.apply(x);
    let my = f.apply(y);
    let pxx = f.apply(&sq(x, x));
    let pyy = f.apply(&sq(y, y));
    let pxy = f.apply(&sq(x, y));
    let n = mx.len();
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let (mut d_mu, mut d_pxx, mut d_pxy) = if grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let a1 = 2.0 * ux * uy + C1;
        let a2 = 2.0 * (pxy[i] - ux * uy) + C2;
        let b1 = ux * ux + uy * uy + C1;
        let b2 = (pxx[i] - ux * ux) + (pyy[i] - uy * uy) + C2;
        let d = b1 * b2;
        let s = a1 * a2 / d;
        total += s;
        if grad {
            d_mu[i] = inv_n * (2.0 * uy * (a2 - a1) / d - 2.0 * ux * s / b1 + 2.0 * ux * s / b2);
            d_pxx[i] = -inv_n * s / b2;
            d_pxy[i] = inv_n * 2.0 * a1 / d;
        }
    }
    let value = total * inv_n;
    if !grad {
        return (value, None);
    }
    let g_mu = f.adjoint(&d_mu);
    let g_pxx = f.adjoint(&d_pxx);
    let g_pxy = f.adjoint(&d_pxy);
    let g = (0..x.len())
        .map(|p| g_mu[p] + 2.0 * x[p] * g_pxx[p] + y[p] * g_pxy[p])
        .collect();
    (value, Some(g))
}

/// SSIM averaged over valid window positions and the three channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let f = Filter::new(a.width(), a.height())?;
    Ok((0..3).map(|c| ssim_plane(&f, &plane(a, c), &plane(b, c), false).0).sum::<f64>() / 3.0)
}

/// `(1 − SSIM) / 2`.
pub fn dssim_loss(a: &Image, b: &Image) -> Result<f64> {
    Ok((1.0 - ssim(a, b)?) / 2.0)
}

/// D-SSIM and its gradient with respect to `rendered`.
pub fn dssim_with_grad(rendered: &Image, target: &Image) -> Result<(f64, Image)> {
    rendered.check_same_shape(target)?;
    let f = Filter::new(rendered.width(), rendered.height())?;
    let mut grad = Image::new(rendered.width(), rendered.height());
    let mut s = 0.0;
    for c in 0..3 {
        let (v, g) = ssim_plane(&f, &plane(rendered, c), &plane(target, c), true);
        s += v / 3.0;
        let g = g.expect("gradient requested");
        for (dst, gv) in grad.data_mut().iter_mut().skip(c).step_by(3).zip(g) {
            // d/dx of (1 − mean_c SSIM_c) / 2
            *dst = -gv / 6.0;
        }
    }
    Ok(((1.0 - s) / 2.0, grad))
}

/// Pearson correlation `cov / max(σa·σb, 1e-8)` over paired samples.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    correlation_parts(a, b).0
}

/// Correlation plus the means and deviations needed for its gradient.
fn correlation_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    let (cov, sa, sb) = (cov / n, (va / n).sqrt(), (vb / n).sqrt());
    (cov / (sa * sb).max(CORR_FLOOR), ma, mb, sa, sb)
}

/// Pearson correlation between two images over all pixels and channels.
pub fn image_correlation(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(correlation(a.data(), b.data()))
}

fn depth_mask(reference: &DepthMap, rendered: &DepthMap, alpha: Option<&DepthMap>) -> Result<Vec<usize>> {
    for other in std::iter::once(rendered.dims()).chain(alpha.map(|a| a.dims())) {
        if reference.dims() != other {
            return Err(Error::ShapeMismatch {
                left: reference.dims(),
                right: other,
            });
        }
    }
    let idx: Vec<usize> = match alpha {
        Some(a) => (0..a.data().len()).filter(|&i| a.data()[i] > 0.5).collect(),
        None => (0..reference.data().len()).collect(),
    };
    if idx.len() < MIN_DEPTH_PIXELS {
        return Err(Error::InsufficientCoverage {
            valid: idx.len(),
            required: MIN_DEPTH_PIXELS,
        });
    }
    Ok(idx)
}

/// `1 − corr(reference, rendered)` over pixels whose rendered alpha exceeds 0.5
/// (all pixels when `alpha` is `None`).
pub fn pearson_depth_loss(reference: &DepthMap, rendered: &DepthMap, alpha: Option<&DepthMap>) -> Result<f64> {
    Ok(pearson_depth_with_grad(reference, rendered, alpha)?.0)
}

/// Depth correlation loss and its gradient with respect to `rendered`.
/// The mask is treated as constant.
pub fn pearson_depth_with_grad(
    reference: &DepthMap,
    rendered: &DepthMap,
    alpha: Option<&DepthMap>,
) -> Result<(f64, DepthMap)> {
    let idx = depth_mask(reference, rendered, alpha)?;
    let a: Vec<f64> = idx.iter().map(|&i| reference.data()[i]).collect();
    let b: Vec<f64> = idx.iter().map(|&i| rendered.data()[i]).collect();
    let (corr, ma, mb, sa, sb) = correlation_parts(&a, &b);
    let n = a.len() as f64;
    let mut grad = DepthMap::new(rendered.width(), rendered.height());
    let denom = sa * sb;
    for (k, &i) in idx.iter().enumerate() {
        let dcorr = if denom > CORR_FLOOR {
            ((a[k] - ma) / denom - corr * (b[k] - mb) / (sb * sb)) / n
        } else {
            (a[k] - ma) / (CORR_FLOOR * n)
        };
        grad.data_mut()[i] = -dcorr;
    }
    Ok((1.0 - corr, grad))
}

/// Peak signal-to-noise ratio for unit peak, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.data().len().max(1) as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Weights of the three-term photometric/depth objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub dssim: f64,
    pub depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 0.8,
            dssim: 0.2,
            depth: 0.05,
        }
    }
}

/// Component values of one weighted objective and its upstream gradients.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub l1: f64,
    pub dssim: f64,
    /// `1 − corr`; `None` without reference depth or with too little coverage.
    pub pearson: Option<f64>,
    pub total: f64,
    pub grad_rgb: Image,
    pub grad_depth: Option<DepthMap>,
}

/// `λ1·L1 + λ2·D-SSIM + λ3·(1 − corr)` against a target image and optional
/// reference depth, with gradients on the rendered color and depth.
pub fn weighted_loss(
    rgb: &Image,
    depth: &DepthMap,
    alpha: &DepthMap,
    target: &Image,
    reference_depth: Option<&DepthMap>,
    w: &LossWeights,
) -> Result<LossTerms> {
    let (l1, g1) = l1_with_grad(rgb, target)?;
    let (ds, g2) = dssim_with_grad(rgb, target)?;
    let mut grad_rgb = g1;
    for (g, s) in grad_rgb.data_mut().iter_mut().zip(g2.data()) {
        *g = w.l1 * *g + w.dssim * s;
    }
    let mut total = w.l1 * l1 + w.dssim * ds;
    let (mut pearson, mut grad_depth) = (None, None);
    if let (Some(r), true) = (reference_depth, w.depth != 0.0) {
        match pearson_depth_with_grad(r, depth, Some(alpha)) {
            Ok((p, mut g)) => {
                g.data_mut().iter_mut().for_each(|v| *v *= w.depth);
                total += w.depth * p;
                pearson = Some(p);
                grad_depth = Some(g);
            }
            Err(Error::InsufficientCoverage { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(LossTerms {
        l1,
        dssim: ds,
        pearson,
        total,
        grad_rgb,
        grad_depth,
    })
}

/// Per-step loss record; `total = λ_g · guidance_total + reconstruction_total`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub dssim: f64,
    pub pearson_depth: Option<f64>,
    pub guidance_total: f64,
    pub reconstruction_total: f64,
    pub lambda_g: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(recon: &LossTerms, guidance: Option<&LossTerms>, lambda_g: f64) -> Self {
        let guidance_total = guidance.map_or(0.0, |g| g.total);
        Self {
            l1: recon.l1,
            dssim: recon.dssim,
            pearson_depth: recon.pearson,
            guidance_total,
            reconstruction_total: recon.total,
            lambda_g,
            total: lambda_g * guidance_total + recon.total,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::from_vec(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn random_depth(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DepthMap {
        DepthMap::from_vec(w, h, (0..w * h).map(|_| rng.random_range(1.0..5.0)).collect()).unwrap()
    }

    /// Literal SSIM: 2D window sums at every valid position, no separability.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let r = 5i64;
        let s2 = 2.0 * 1.5 * 1.5;
        let mut win = vec![vec![0.0; 11]; 11];
        let mut tot = 0.0;
        for j in -r..=r {
            for i in -r..=r {
                let v = (-((i * i + j * j) as f64) / s2).exp();
                win[(j + r) as usize][(i + r) as usize] = v;
                tot += v;
            }
        }
        let (w, h) = a.dims();
        let mut sum = 0.0;
        let mut count = 0.0;
        for c in 0..3 {
            for cy in 5..h - 5 {
                for cx in 5..w - 5 {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for j in 0..11 {
                        for i in 0..11 {
                            let g = win[j][i] / tot;
                            let x = a.get(cx + i - 5, cy + j - 5)[c];
                            let y = b.get(cx + i - 5, cy + j - 5)[c];
                            mx += g * x;
                            my += g * y;
                            xx += g * x * x;
                            yy += g * y * y;
                            xy += g * x * y;
                        }
                    }
                    let vx = xx - mx * mx;
                    let vy = yy - my * my;
                    let cxy = xy - mx * my;
                    let c1 = 0.0001;
                    let c2 = 0.0009;
                    sum += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1.0;
                }
            }
        }
        sum / count
    }

    #[test]
    fn l1_examples() {
        let a = Image::filled(4, 4, [0.2; 3]);
        let b = Image::filled(4, 4, [0.5; 3]);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert!((l1_loss(&a, &b).unwrap() - 0.3).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, y) = (random_image(&mut rng, 8, 8), random_image(&mut rng, 8, 8));
        let mut s = 0.0;
        for yy in 0..8 {
            for xx in 0..8 {
                for c in 0..3 {
                    s += (x.get(xx, yy)[c] - y.get(xx, yy)[c]).abs();
                }
            }
        }
        assert!((l1_loss(&x, &y).unwrap() - s / 192.0).abs() < 1e-15);
        assert!(matches!(l1_loss(&a, &Image::new(3, 4)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_image(&mut rng, 16, 16);
        assert!(dssim_loss(&a, &a).unwrap().abs() < 1e-15);
        let b = random_image(&mut rng, 16, 16);
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-12);
        // negation around mid-gray keeps the mean, flips the structure
        let mut neg = a.clone();
        neg.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        let mut a_mid = a.clone();
        a_mid.data_mut().iter_mut().for_each(|v| *v = 0.25 + 0.5 * *v);
        let mut n_mid = neg.clone();
        n_mid.data_mut().iter_mut().for_each(|v| *v = 0.25 + 0.5 * *v);
        assert!(dssim_loss(&a_mid, &n_mid).unwrap() > 0.0);
        assert!(matches!(
            ssim(&Image::new(10, 20), &Image::new(10, 20)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn pearson_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = random_depth(&mut rng, 32, 32);
        for a in [0.1, 1.0, 10.0] {
            for b in [-5.0, 0.0, 5.0] {
                let mut e = d.clone();
                e.data_mut().iter_mut().for_each(|v| *v = a * *v + b);
                assert!(pearson_depth_loss(&d, &e, None).unwrap() < 1e-6);
            }
        }
        let mut n = d.clone();
        n.data_mut().iter_mut().for_each(|v| *v = -*v);
        assert!((pearson_depth_loss(&d, &n, None).unwrap() - 2.0).abs() < 1e-6);

        let e = random_depth(&mut rng, 32, 32);
        let (x, y) = (d.data(), e.data());
        let len = x.len() as f64;
        let mx = x.iter().sum::<f64>() / len;
        let my = y.iter().sum::<f64>() / len;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        let oracle = 1.0 - cov / (vx.sqrt() * vy.sqrt());
        assert!((pearson_depth_loss(&d, &e, None).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn pearson_coverage() {
        let d = DepthMap::from_vec(8, 8, (0..64).map(|v| v as f64).collect()).unwrap();
        let mut alpha = DepthMap::new(8, 8);
        for i in 0..15 {
            alpha.data_mut()[i] = 1.0;
        }
        assert!(matches!(
            pearson_depth_loss(&d, &d, Some(&alpha)),
            Err(Error::InsufficientCoverage { valid: 15, required: 16 })
        ));
        alpha.data_mut()[40] = 0.9;
        assert!(pearson_depth_loss(&d, &d, Some(&alpha)).unwrap() < 1e-12);
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, [0.0; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b = Image::filled(4, 4, [0.5; 3]);
        assert!((psnr(&a, &b).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
        let c = Image::filled(4, 4, [0.1; 3]);
        assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn weighted_sum_arithmetic() {
        let w = LossWeights {
            l1: 0.8,
            dssim: 0.2,
            depth: 0.05,
        };
        assert!((w.l1 * 0.1 + w.dssim * 0.05 + w.depth * 0.2 - 0.10).abs() < 1e-15);
    }

    fn fd_image(f: &dyn Fn(&Image) -> f64, x: &Image, i: usize) -> f64 {
        let h = 1e-6;
        let mut p = x.clone();
        p.data_mut()[i] += h;
        let mut m = x.clone();
        m.data_mut()[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    }

    #[test]
    fn dssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (x, y) = (random_image(&mut rng, 14, 13), random_image(&mut rng, 14, 13));
        let (_, g) = dssim_with_grad(&x, &y).unwrap();
        let f = |im: &Image| dssim_loss(im, &y).unwrap();
        for i in 0..x.data().len() {
            let n = fd_image(&f, &x, i);
            let a = g.data()[i];
            assert!((a - n).abs() <= 1e-3 * a.abs().max(n.abs()).max(1e-6), "{i}: {a} vs {n}");
        }
    }

    #[test]
    fn l1_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, y) = (random_image(&mut rng, 5, 4), random_image(&mut rng, 5, 4));
        let (_, g) = l1_with_grad(&x, &y).unwrap();
        let f = |im: &Image| l1_loss(im, &y).unwrap();
        for i in 0..x.data().len() {
            assert!((g.data()[i] - fd_image(&f, &x, i)).abs() < 1e-9);
        }
    }

    #[test]
    fn pearson_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (d, e) = (random_depth(&mut rng, 8, 8), random_depth(&mut rng, 8, 8));
        let mut alpha = DepthMap::new(8, 8);
        for i in 0..64 {
            alpha.data_mut()[i] = if i % 3 == 0 { 0.2 } else { 1.0 };
        }
        let (_, g) = pearson_depth_with_grad(&d, &e, Some(&alpha)).unwrap();
        let h = 1e-6;
        for i in 0..64 {
            let mut p = e.clone();
            p.data_mut()[i] += h;
            let mut m = e.clone();
            m.data_mut()[i] -= h;
            let n = (pearson_depth_loss(&d, &p, Some(&alpha)).unwrap()
                - pearson_depth_loss(&d, &m, Some(&alpha)).unwrap())
                / (2.0 * h);
            let a = g.data()[i];
            assert!((a - n).abs() <= 1e-3 * a.abs().max(n.abs()).max(1e-6));
        }
    }

    proptest! {
        #[test]
        fn losses_non_negative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y) = (random_image(&mut rng, 12, 12), random_image(&mut rng, 12, 12));
            prop_assert!(l1_loss(&x, &y).unwrap() > 0.0);
            let d = dssim_loss(&x, &y).unwrap();
            prop_assert!(d > 0.0 && d <= 1.0);
        }
    }
}
