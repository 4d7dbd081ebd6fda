use nalgebra::Vector3;
use proptest::prelude::*;

use super::*;
use crate::io::{synth_scene, SynthConfig};
use crate::render::render;
use crate::scene::Intrinsics;

fn intr(w: usize, h: usize) -> Intrinsics {
    Intrinsics {
        fx: 20.0,
        fy: 20.0,
        cx: 10.0,
        cy: 8.0,
        width: w,
        height: h,
    }
}

fn splat(p: [f64; 3], v: f64) -> Splat {
    Splat {
        position: p,
        log_scale: [v; 3],
        rotation: quat::normalize(&[1.0, v, 0.0, 0.0]),
        opacity_logit: v,
        color_raw: [v, -v, 2.0 * v],
    }
}

#[test]
fn uniform_image_has_no_edges() {
    let e = detect_edges(&Image::filled(20, 20, [0.4, 0.2, 0.9]));
    assert_eq!(e.count(), 0);
    assert_eq!((e.width, e.height), (20, 20));
}

#[test]
fn vertical_step_gives_one_column() {
    let mut img = Image::new(16, 12);
    for y in 0..12 {
        for x in 8..16 {
            img.set(x, y, [1.0; 3]);
        }
    }
    let e = detect_edges(&img);
    for y in 0..12 {
        for x in 0..16 {
            assert_eq!(e.get(x, y), x == 7, "pixel ({x},{y})");
        }
    }
}

#[test]
fn disc_edges_follow_the_circle() {
    let (n, c, r) = (41usize, 20.0, 10.0);
    let mut img = Image::new(n, n);
    for y in 0..n {
        for x in 0..n {
            if (x as f64 - c).hypot(y as f64 - c) <= r {
                img.set(x, y, [1.0; 3]);
            }
        }
    }
    let e = detect_edges(&img);
    let px = e.pixels();
    assert!(!px.is_empty());
    for &(x, y) in &px {
        let d = (x as f64 - c).hypot(y as f64 - c);
        assert!((d - r).abs() <= 1.0, "edge pixel ({x},{y}) at radius {d}");
    }
    // every point on the analytic circle has an edge pixel nearby
    for k in 0..360 {
        let t = (k as f64).to_radians();
        let (cx, cy) = (c + r * t.cos(), c + r * t.sin());
        let near = px.iter().any(|&(x, y)| (x as f64 - cx).hypot(y as f64 - cy) <= 1.5);
        assert!(near, "no edge near angle {k}");
    }
}

fn square_edges(n: usize) -> EdgeMap {
    let mut mask = vec![false; 100 * 100];
    for i in 0..n {
        mask[i * 37 % 10000] = true;
    }
    EdgeMap {
        width: 100,
        height: 100,
        mask,
        detector: "test",
        high: 0.0,
        low: 0.0,
    }
}

#[test]
fn edge_sampling() {
    let e = square_edges(100);
    assert!(sample_edge_points(&e, 0, 1).is_empty());
    let mut all = sample_edge_points(&e, 500, 1);
    all.sort_by_key(|&(x, y)| (y, x));
    assert_eq!(all, e.pixels());
    let a = sample_edge_points(&e, 10, 42);
    assert_eq!(a, sample_edge_points(&e, 10, 42));
    assert_ne!(a, sample_edge_points(&e, 10, 43));
    let mut uniq = a.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), 10);
    assert!(a.iter().all(|&(x, y)| e.get(x, y)));
    assert!(sample_edge_points(&square_edges(0), 5, 1).is_empty());
}

#[test]
fn edge_sampling_is_roughly_uniform() {
    let e = square_edges(20);
    let mut hits = [0usize; 20];
    let px = e.pixels();
    for seed in 0..2000 {
        for p in sample_edge_points(&e, 5, seed) {
            hits[px.iter().position(|&q| q == p).unwrap()] += 1;
        }
    }
    // expected 500 per pixel
    assert!(hits.iter().all(|&h| (400..600).contains(&h)), "{hits:?}");
}

fn full_alpha(w: usize, h: usize) -> DepthMap {
    DepthMap::from_vec(w, h, vec![1.0; w * h]).unwrap()
}

#[test]
fn backprojection_geometry() {
    let cam = Camera::new(intr(20, 16), quat::IDENTITY, Vector3::zeros()).unwrap();
    let mut depth = DepthMap::new(20, 16);
    depth.set(10, 8, 2.0);
    depth.set(30 - 20, 8, 2.0);
    let (p, skipped) = backproject(&[(10, 8)], &depth, &full_alpha(20, 16), &cam);
    assert_eq!(skipped, 0);
    assert_eq!(p, vec![[0.0, 0.0, 2.0]]);
    let cam = Camera::new(
        Intrinsics {
            fx: 5.0,
            ..intr(20, 16)
        },
        quat::IDENTITY,
        Vector3::zeros(),
    )
    .unwrap();
    depth.set(15, 8, 1.0);
    let (p, _) = backproject(&[(15, 8)], &depth, &full_alpha(20, 16), &cam);
    assert_eq!(p, vec![[1.0, 0.0, 1.0]]);
    let mut alpha = full_alpha(20, 16);
    alpha.set(15, 8, 0.5);
    let (p, skipped) = backproject(&[(15, 8), (10, 8)], &depth, &alpha, &cam);
    assert_eq!((p.len(), skipped), (1, 1));
}

#[test]
fn backprojection_round_trip() {
    let cam = Camera::look_at(
        intr(20, 16),
        Vector3::new(1.0, 0.5, -3.0),
        Vector3::new(0.1, 0.0, 0.2),
        Vector3::y(),
    )
    .unwrap();
    let depth = DepthMap::from_vec(20, 16, (0..320).map(|i| 1.0 + (i % 7) as f64 * 0.3).collect()).unwrap();
    let pixels: Vec<(usize, usize)> = (0..16).flat_map(|y| (0..20).map(move |x| (x, y))).collect();
    let (pts, _) = backproject(&pixels, &depth, &full_alpha(20, 16), &cam);
    let field = GaussianField::from_splats(pts.iter().map(|&p| splat(p, -3.0)).collect::<Vec<_>>());
    for (proj, &(x, y)) in project(&cam, &field).iter().zip(&pixels) {
        assert!((proj.mean[0] - x as f64).abs() < 1e-9);
        assert!((proj.mean[1] - y as f64).abs() < 1e-9);
        assert!((proj.depth - depth.get(x, y)).abs() < 1e-9);
    }
}

#[test]
fn idw_hand_example() {
    let mut field = GaussianField::new();
    for (d, v) in [(1.0, 1.0), (2.0, 2.0), (4.0, 4.0), (9.0, 100.0)] {
        field.push(splat([d, 0.0, 0.0], v));
    }
    let s = inherit_attributes(&[[0.0; 3]], &field, 3).unwrap().remove(0);
    // weights 1/(d + 1e-8); the oracle ignores the epsilon
    assert!((s.opacity_logit - 12.0 / 7.0).abs() < 1e-7);
    assert!((s.log_scale[2] - 12.0 / 7.0).abs() < 1e-7);
    assert!((s.color_raw[1] + 12.0 / 7.0).abs() < 1e-7);
    assert_eq!(s.position, [0.0; 3]);
}

#[test]
fn idw_equidistant_and_coincident() {
    let field = GaussianField::from_splats([
        splat([1.0, 0.0, 0.0], 0.3),
        splat([-1.0, 0.0, 0.0], -0.9),
        splat([0.0, 1.0, 0.0], 1.5),
        splat([0.0, 0.0, 5.0], 7.0),
    ]);
    let s = inherit_attributes(&[[0.0; 3]], &field, 3).unwrap().remove(0);
    assert!((s.opacity_logit - 0.3).abs() < 1e-12);
    let s = inherit_attributes(&[[0.0, 1.0, 0.0]], &field, 3).unwrap().remove(0);
    assert!((s.opacity_logit - 1.5).abs() < 1e-7);
    assert!((quat::norm(&s.rotation) - 1.0).abs() < 1e-12);
}

#[test]
fn spawn_keeps_existing_splats() {
    let field = GaussianField::from_splats([
        splat([1.0, 0.0, 0.0], 0.3),
        splat([-1.0, 0.0, 0.0], -0.9),
        splat([0.0, 1.0, 0.0], 1.5),
    ]);
    let mut grown = field.clone();
    assert_eq!(spawn_gaussians(&[[0.2, 0.1, 0.0], [3.0, 3.0, 3.0]], &mut grown, 3).unwrap(), 2);
    assert_eq!(grown.len(), 5);
    for i in 0..3 {
        assert_eq!(grown.splat(i), field.splat(i));
    }
    let mut small = GaussianField::from_splats([splat([0.0; 3], 0.0)]);
    assert!(matches!(
        spawn_gaussians(&[[0.0; 3]], &mut small, 3),
        Err(Error::InsufficientNeighbors { requested: 3, available: 1 })
    ));
}

fn thresholds(s: f64, l: f64, h: f64) -> DensityThresholds {
    DensityThresholds {
        tau_sparse: s,
        tau_low: l,
        tau_high: h,
        lambda_low: 2.0,
        lambda_high: 0.8,
        c_min: 4,
    }
}

/// Direct evaluation of the piecewise rule, rescale, half-up rounding and
/// fractional-part residual assignment, written independently of the module.
fn scripted_rebalance(c: &[usize], s: f64, l: f64, h: f64) -> Vec<usize> {
    let raw: Vec<f64> = c
        .iter()
        .map(|&v| {
            let v = v as f64;
            match () {
                _ if v <= s => 4.0,
                _ if v < l => 2.0 * v,
                _ if v <= h => v,
                _ => 0.8 * v,
            }
        })
        .collect();
    let total: usize = c.iter().sum();
    let f = total as f64 / raw.iter().sum::<f64>();
    let x: Vec<f64> = raw.iter().map(|r| r * f).collect();
    let mut out: Vec<usize> = x.iter().map(|v| (v + 0.5).floor() as usize).collect();
    let mut idx: Vec<usize> = (0..c.len()).collect();
    idx.sort_by(|&a, &b| (x[b] - x[b].floor()).partial_cmp(&(x[a] - x[a].floor())).unwrap().then(a.cmp(&b)));
    let mut k = 0;
    while out.iter().sum::<usize>() < total {
        out[idx[k % idx.len()]] += 1;
        k += 1;
    }
    out
}

#[test]
fn worked_patch_example() {
    let c = [0, 5, 10, 100];
    let t = thresholds(1.0, 8.0, 50.0);
    let raw: Vec<f64> = c.iter().map(|&v| t.reweight(v)).collect();
    assert_eq!(raw, vec![4.0, 10.0, 10.0, 80.0]);
    let out = rebalance_counts(&c, &t).unwrap();
    assert_eq!(out.iter().sum::<usize>(), 115);
    assert_eq!(out, vec![4, 11, 11, 89]);
    assert_eq!(out, scripted_rebalance(&c, 1.0, 8.0, 50.0));
}

#[test]
fn identity_branch() {
    let c = [10, 20, 30, 40];
    assert_eq!(rebalance_counts(&c, &thresholds(5.0, 10.0, 40.0)).unwrap(), c.to_vec());
}

#[test]
fn negative_residual_taken_from_largest() {
    let out = rebalance_counts(&[1; 6], &thresholds(1.0, 2.0, 3.0)).unwrap();
    assert_eq!(out, vec![1; 6]);
    // counts (3, 3, 0, 0): raw (6, 6, 4, 4), scaled 0.3 → (1.8, 1.8, 1.2, 1.2) → (2, 2, 1, 1) = 6
    let out = rebalance_counts(&[3, 3, 0, 0], &thresholds(0.0, 4.0, 9.0)).unwrap();
    assert_eq!(out, vec![2, 2, 1, 1]);
    // counts (0, 0, 2): raw (4, 4, 4), scaled 2/3 each → (1, 1, 1) = 3, one unit comes off index 0
    let out = rebalance_counts(&[0, 0, 2], &thresholds(0.0, 4.0, 9.0)).unwrap();
    assert_eq!(out, vec![0, 1, 1]);
}

#[test]
fn invalid_thresholds_rejected() {
    for t in [
        thresholds(5.0, 5.0, 9.0),
        thresholds(-1.0, 5.0, 9.0),
        thresholds(1.0, 9.0, 5.0),
        DensityThresholds {
            lambda_low: 1.0,
            ..thresholds(1.0, 2.0, 3.0)
        },
        DensityThresholds {
            lambda_high: 1.0,
            ..thresholds(1.0, 2.0, 3.0)
        },
    ] {
        assert!(matches!(rebalance_counts(&[1, 2], &t), Err(Error::InvalidThresholds(_))));
    }
}

#[test]
fn rank_thresholds() {
    let counts: Vec<usize> = (1..=10).collect();
    let t = thresholds_from_counts(&counts, 0.9, 0.5, 0.1, 2.0, 0.8, 4).unwrap();
    // descending 10..1: rank 9 → 1, rank 5 → 5, rank 1 → 9
    assert_eq!((t.tau_sparse, t.tau_low, t.tau_high), (1.0, 5.0, 9.0));
    let t = thresholds_from_counts(&[7; 8], 0.9, 0.5, 0.1, 2.0, 0.8, 4).unwrap();
    assert_eq!((t.tau_sparse, t.tau_low, t.tau_high), (6.0, 7.0, 7.0));
    assert!(thresholds_from_counts(&[0, 0, 0, 5], 0.9, 0.5, 0.1, 2.0, 0.8, 4).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rebalance_conserves_total(
        c in prop::collection::vec(0usize..300, 1..70),
        s in 0.0f64..50.0,
        dl in 0.5f64..80.0,
        dh in 0.0f64..150.0,
        ll in 1.01f64..4.0,
        lh in 0.05f64..0.99,
        cmin in 0usize..10,
    ) {
        let t = DensityThresholds { tau_sparse: s, tau_low: s + dl, tau_high: s + dl + dh, lambda_low: ll, lambda_high: lh, c_min: cmin };
        let out = rebalance_counts(&c, &t).unwrap();
        prop_assert_eq!(out.len(), c.len());
        prop_assert_eq!(out.iter().sum::<usize>(), c.iter().sum::<usize>());
    }

    #[test]
    fn rebalance_matches_script(c in prop::collection::vec(0usize..200, 4..20), s in 0.0f64..20.0, dl in 1.0f64..40.0, dh in 0.0f64..80.0) {
        let out = rebalance_counts(&c, &thresholds(s, s + dl, s + dl + dh)).unwrap();
        let sum: usize = c.iter().sum();
        // the script only covers the non-negative residual case
        let script = scripted_rebalance(&c, s, s + dl, s + dl + dh);
        if script.iter().sum::<usize>() == sum && sum > 0 {
            prop_assert_eq!(out, script);
        }
    }

    #[test]
    fn reweight_monotone_within_branches(a in 0usize..500, b in 0usize..500, s in 0.0f64..50.0, dl in 1.0f64..80.0, dh in 0.0f64..150.0) {
        let t = thresholds(s, s + dl, s + dl + dh);
        let branch = |c: usize| {
            let c = c as f64;
            (c > t.tau_sparse) as u8 + (c >= t.tau_low) as u8 + (c > t.tau_high) as u8
        };
        let (lo, hi) = (a.min(b), a.max(b));
        if branch(lo) == branch(hi) {
            prop_assert!(t.reweight(lo) <= t.reweight(hi));
        }
    }

    #[test]
    fn inherited_attributes_are_convex(
        attrs in prop::collection::vec((-3.0f64..3.0, prop::array::uniform3(-2.0f64..2.0)), 3..12),
        q in prop::array::uniform3(-2.0f64..2.0),
    ) {
        let field = GaussianField::from_splats(attrs.iter().map(|&(v, p)| splat(p, v)).collect::<Vec<_>>());
        let s = inherit_attributes(&[q], &field, 3).unwrap().remove(0);
        let index = field.build_index().unwrap();
        let nn = index.k_nearest(&q, 3).unwrap();
        let vals: Vec<f64> = nn.iter().map(|&(j, _)| attrs[j].0).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.opacity_logit >= lo - 1e-12 && s.opacity_logit <= hi + 1e-12);
        prop_assert!(s.color_raw[2] >= 2.0 * lo - 1e-12 && s.color_raw[2] <= 2.0 * hi + 1e-12);
    }
}

fn scene() -> crate::io::SyntheticScene {
    synth_scene(&SynthConfig {
        n_splats: 200,
        resolution: 48,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn patch_counts_cover_visible_splats() {
    let s = scene();
    let cam = &s.cameras[0];
    let pc = patch_counts(&s.gt, cam, 8);
    assert_eq!(pc.counts.len(), 64);
    let visible = project(cam, &s.gt)
        .iter()
        .filter(|p| p.in_frustum && p.mean[0].round() >= 0.0 && p.mean[1].round() >= 0.0)
        .filter(|p| p.mean[0].round() < 48.0 && p.mean[1].round() < 48.0)
        .count();
    assert_eq!(pc.counts.iter().sum::<usize>(), visible);
    assert_eq!(visible, 200);
}

#[test]
fn unchanged_targets_give_empty_plan() {
    let s = scene();
    let pc = patch_counts(&s.gt, &s.cameras[0], 8);
    let plan = plan_density(&s.gt, &pc, &pc.counts);
    assert!(plan.is_empty());
    let mut f = s.gt.clone();
    let out = render(&f, &s.cameras[0], [0.0; 3]);
    let r = apply_plan(&mut f, &plan, &s.cameras[0], &out.depth, &out.alpha, None, 3, 0).unwrap();
    assert_eq!(r, ApplyReport::default());
    assert_eq!(f, s.gt);
}

#[test]
fn prune_lowest_opacity_in_patch() {
    let s = scene();
    let pc = patch_counts(&s.gt, &s.cameras[0], 8);
    let p = (0..64).find(|&p| pc.counts[p] >= 5).unwrap();
    let mut targets = pc.counts.clone();
    targets[p] -= 2;
    let plan = plan_density(&s.gt, &pc, &targets);
    let opac = s.gt.activate().opacities;
    let mut members = pc.members[p].clone();
    members.sort_by(|&a, &b| opac[a].partial_cmp(&opac[b]).unwrap());
    let mut expected = members[..2].to_vec();
    expected.sort();
    assert_eq!(plan.prune[p], expected);
    assert_eq!(plan.prune.iter().map(Vec::len).sum::<usize>(), 2);
}

#[test]
fn applied_plan_matches_per_patch_deltas() {
    let s = scene();
    let cam = &s.cameras[0];
    let mut field = s.gt.clone();
    let pc = patch_counts(&field, cam, 8);
    let covered: Vec<usize> = (0..64).filter(|&p| pc.counts[p] > 0).collect();
    let t = thresholds_from_counts(
        &covered.iter().map(|&p| pc.counts[p]).collect::<Vec<_>>(),
        0.9,
        0.5,
        0.1,
        2.0,
        0.8,
        4,
    )
    .unwrap();
    let sub = rebalance_counts(&covered.iter().map(|&p| pc.counts[p]).collect::<Vec<_>>(), &t).unwrap();
    let mut targets = pc.counts.clone();
    for (&p, &c) in covered.iter().zip(&sub) {
        targets[p] = c;
    }
    let plan = plan_density(&field, &pc, &targets);
    assert!(!plan.is_empty());
    assert_eq!(targets.iter().sum::<usize>(), pc.counts.iter().sum::<usize>());
    let out = render(&field, cam, [0.0; 3]);
    let depth = normalized_depth(&out.depth, &out.alpha);
    let edges = detect_edges(&s.images[0]);
    let report = apply_plan(&mut field, &plan, cam, &depth, &out.alpha, Some(&edges), 3, 7).unwrap();
    assert!(report.spawned > 0 && report.pruned > 0);
    let after = patch_counts(&field, cam, 8);
    for p in 0..64 {
        let expected = if report.skipped_patches.contains(&p) { pc.counts[p] - plan.prune[p].len() } else { targets[p] };
        assert_eq!(after.counts[p], expected, "patch {p}");
    }

    let mut again = s.gt.clone();
    apply_plan(&mut again, &plan, cam, &depth, &out.alpha, Some(&edges), 3, 7).unwrap();
    assert_eq!(again, field);
}
