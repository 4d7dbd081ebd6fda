use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::scene::{quat, Camera, GaussianField, Intrinsics, Splat};

fn intr(w: usize, h: usize, f: f64) -> Intrinsics {
    Intrinsics {
        fx: f,
        fy: f,
        cx: w as f64 / 2.0,
        cy: h as f64 / 2.0,
        width: w,
        height: h,
    }
}

fn axis_cam() -> Camera {
    Camera::new(intr(32, 32, 100.0), quat::IDENTITY, Vector3::zeros()).unwrap()
}

fn splat(p: [f64; 3], log_s: f64, logit: f64, color: [f64; 3]) -> Splat {
    Splat {
        position: p,
        log_scale: [log_s; 3],
        rotation: quat::IDENTITY,
        opacity_logit: logit,
        color_raw: color,
    }
}

#[test]
fn empty_field_renders_background() {
    let out = render(&GaussianField::new(), &axis_cam(), [0.2, 0.4, 0.6]);
    for y in 0..32 {
        for x in 0..32 {
            assert_eq!(out.rgb.get(x, y), [0.2, 0.4, 0.6]);
            assert_eq!(out.alpha.get(x, y), 0.0);
            assert_eq!(out.depth.get(x, y), 0.0);
        }
    }
}

#[test]
fn single_opaque_splat_depth() {
    // logit 40 rounds to opacity 1.0 in f64; the mean sits exactly on pixel (16, 16)
    let field = GaussianField::from_splats([splat([0.0, 0.0, 3.0], -3.0, 40.0, [0.0; 3])]);
    let out = render(&field, &axis_cam(), [0.0; 3]);
    assert_eq!(out.depth.get(16, 16), 3.0);
    assert_eq!(out.alpha.get(16, 16), 1.0);
}

#[test]
fn two_splat_depth_composite() {
    // modulated opacities 0.5 (front, depth 1) and 1.0 (back, depth 2) at the center pixel
    let field = GaussianField::from_splats([
        splat([0.0, 0.0, 2.0], -3.0, 40.0, [0.0; 3]),
        splat([0.0, 0.0, 1.0], -3.0, 0.0, [0.0; 3]),
    ]);
    let out = render(&field, &axis_cam(), [0.0; 3]);
    let expected = 0.5 * 1.0 + 1.0 * 2.0 * 0.5;
    assert_eq!(out.depth.get(16, 16), expected);
    assert_eq!(expected, 1.5);
    assert_eq!(out.alpha.get(16, 16), 1.0);
    let recs = out.pixel_records(16, 16);
    assert_eq!(recs.iter().map(|r| r.splat).collect::<Vec<_>>(), vec![1, 0]);
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize, w: usize) -> (GaussianField, Camera) {
    let splats = (0..n).map(|_| Splat {
        position: [
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
            rng.random_range(2.0..4.0),
        ],
        log_scale: [
            rng.random_range(-2.5..-1.2),
            rng.random_range(-2.5..-1.2),
            rng.random_range(-2.5..-1.2),
        ],
        rotation: quat::normalize(&[
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]),
        opacity_logit: rng.random_range(-2.0..2.0),
        color_raw: [
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ],
    });
    let field = GaussianField::from_splats(splats.collect::<Vec<_>>());
    let cam = Camera::new(intr(w, w, 40.0), quat::IDENTITY, Vector3::zeros()).unwrap();
    (field, cam)
}

#[test]
fn contributor_lists_match_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..4 {
        let (mut field, cam) = random_scene(&mut rng, 120, 40);
        // needle-thin splats stress the per-row span culling
        for s in field.log_scales_mut().iter_mut().step_by(2) {
            s[0] = -5.0;
            s[1] = -0.8;
        }
        let out = render(&field, &cam, [0.0; 3]);
        let proj = out.projections();
        let opac = field.activate().opacities;
        let mut order: Vec<u32> = (0..proj.len() as u32).filter(|&i| proj[i as usize].in_frustum).collect();
        order.sort_by(|&a, &b| proj[a as usize].depth.total_cmp(&proj[b as usize].depth).then(a.cmp(&b)));
        for y in 0..40 {
            for x in 0..40 {
                let mut t = 1.0;
                let mut expected = Vec::new();
                for &i in &order {
                    let p = &proj[i as usize];
                    let (dx, dy) = (x as f64 - p.mean[0], y as f64 - p.mean[1]);
                    let power = p.conic[(0, 0)] * dx * dx + 2.0 * p.conic[(0, 1)] * dx * dy + p.conic[(1, 1)] * dy * dy;
                    if power > 9.0 {
                        continue;
                    }
                    let alpha = opac[i as usize] * (-0.5 * power).exp();
                    expected.push((i, alpha));
                    t *= 1.0 - alpha;
                    if t < TRANSMITTANCE_CUTOFF {
                        break;
                    }
                }
                let got: Vec<(u32, f64)> = out.pixel_records(x, y).iter().map(|r| (r.splat, r.alpha)).collect();
                assert_eq!(got, expected, "pixel ({x}, {y})");
            }
        }
    }
}

#[test]
fn weights_sum_to_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (field, cam) = random_scene(&mut rng, 40, 32);
    let out = render(&field, &cam, [0.0; 3]);
    for y in 0..32 {
        for x in 0..32 {
            let sum: f64 = out.pixel_records(x, y).iter().map(|r| r.alpha * r.trans).sum();
            let a = out.alpha.get(x, y);
            assert!((sum - a).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&a));
        }
    }
}

#[test]
fn storage_order_does_not_change_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (field, cam) = random_scene(&mut rng, 30, 32);
    let a = render(&field, &cam, [0.1, 0.2, 0.3]);
    let reversed = GaussianField::from_splats(field.splats().collect::<Vec<_>>().into_iter().rev());
    let b = render(&reversed, &cam, [0.1, 0.2, 0.3]);
    assert_eq!(a.rgb, b.rgb);
    assert_eq!(a.depth, b.depth);
}

#[test]
fn render_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (field, cam) = random_scene(&mut rng, 30, 32);
    let a = render(&field, &cam, [0.0; 3]);
    let b = render(&field, &cam, [0.0; 3]);
    assert_eq!(a.rgb.data(), b.rgb.data());
    assert_eq!(a.depth.data(), b.depth.data());
}

#[test]
fn zero_upstream_gives_zero_bundle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (field, cam) = random_scene(&mut rng, 10, 32);
    let cam = cam.into_learnable();
    let out = render(&field, &cam, [0.3; 3]);
    let g = render_backward(&field, &cam, &out, &Image::new(32, 32), None).unwrap();
    let mut zero = GradientBundle::zeros(10);
    zero.pose_delta = Some([0.0; 6]);
    assert_eq!(g, zero);
}

#[test]
fn stale_output_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut field, cam) = random_scene(&mut rng, 5, 32);
    let out = render(&field, &cam, [0.0; 3]);
    field.opacity_logits_mut()[0] += 1.0;
    let r = render_backward(&field, &cam, &out, &Image::new(32, 32), None);
    assert!(matches!(r, Err(crate::Error::StaleRenderOutput { .. })));
}

#[test]
fn pose_gradient_only_for_learnable_cameras() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (field, cam) = random_scene(&mut rng, 5, 32);
    let out = render(&field, &cam, [0.0; 3]);
    let g = render_backward(&field, &cam, &out, &Image::filled(32, 32, [1.0; 3]), None).unwrap();
    assert!(g.pose_delta.is_none());
}

#[test]
fn single_splat_opacity_gradient_closed_form() {
    // D = d·o at the center pixel, so ∂D/∂logit = d · o(1-o)
    let logit: f64 = 0.3;
    let field = GaussianField::from_splats([splat([0.0, 0.0, 3.0], -3.0, logit, [0.0; 3])]);
    let cam = axis_cam();
    let out = render(&field, &cam, [0.0; 3]);
    let mut gd = DepthMap::new(32, 32);
    gd.set(16, 16, 1.0);
    let g = render_backward(&field, &cam, &out, &Image::new(32, 32), Some(&gd)).unwrap();
    let o = 1.0 / (1.0 + (-logit).exp());
    assert!((g.opacity_logits[0] - 3.0 * o * (1.0 - o)).abs() < 1e-14);
}

/// Linear probe objective `Σ wc·rgb + Σ wd·depth` through the frozen structure.
fn probe(field: &GaussianField, cam: &Camera, st: &RenderOutput, wc: &Image, wd: &DepthMap) -> f64 {
    let (rgb, depth) = render_frozen(field, cam, st);
    rgb.data().iter().zip(wc.data()).map(|(a, b)| a * b).sum::<f64>()
        + depth.data().iter().zip(wd.data()).map(|(a, b)| a * b).sum::<f64>()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

#[test]
fn gradients_match_finite_differences() {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (field, cam) = random_scene(&mut rng, 12, 24);
        let mut cam = cam.into_learnable();
        cam.set_delta(std::array::from_fn(|_| rng.random_range(-0.05..0.05))).unwrap();
        let bg = [0.2, 0.5, 0.7];
        let st = render(&field, &cam, bg);
        let wc = Image::from_vec(24, 24, (0..24 * 24 * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let wd = DepthMap::from_vec(24, 24, (0..24 * 24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let g = render_backward(&field, &cam, &st, &wc, Some(&wd)).unwrap();

        let fd = |f: &dyn Fn(&mut GaussianField, f64)| {
            let mut p = field.clone();
            f(&mut p, h);
            let lp = probe(&p, &cam, &st, &wc, &wd);
            let mut m = field.clone();
            f(&mut m, -h);
            let lm = probe(&m, &cam, &st, &wc, &wd);
            (lp - lm) / (2.0 * h)
        };
        for i in 0..field.len() {
            for k in 0..3 {
                worst = worst.max(rel_err(g.positions[i][k], fd(&|f, e| f.positions_mut()[i][k] += e)));
                worst = worst.max(rel_err(g.log_scales[i][k], fd(&|f, e| f.log_scales_mut()[i][k] += e)));
                worst = worst.max(rel_err(g.colors[i][k], fd(&|f, e| f.colors_raw_mut()[i][k] += e)));
            }
            for k in 0..4 {
                worst = worst.max(rel_err(g.rotations[i][k], fd(&|f, e| f.rotations_mut()[i][k] += e)));
            }
            worst = worst.max(rel_err(g.opacity_logits[i], fd(&|f, e| f.opacity_logits_mut()[i] += e)));
        }
        let gp = g.pose_delta.unwrap();
        for k in 0..6 {
            let eval = |e: f64| {
                let mut c = cam.clone();
                let mut d = c.delta();
                d[k] += e;
                c.set_delta(d).unwrap();
                probe(&field, &c, &st, &wc, &wd)
            };
            let n = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(rel_err(gp[k], n));
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}
