//! Co-pruned geometry consistency over a primary field and two auxiliary fields.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{quat::Quat, Camera, GaussianField};

pub const FIELD_NAMES: [&str; 3] = ["primary", "aux1", "aux2"];

/// `mask[y]` is true when source splat `y` is farther than `delta` from every target splat.
pub fn coprune_mask(source: &GaussianField, target: &GaussianField, delta: f64) -> Result<Vec<bool>> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let index = target.build_index()?;
    Ok(source.positions().iter().map(|p| index.nearest(p).1 > delta).collect())
}

/// Diagonal of the axis-aligned bounding box of the camera centers.
pub fn camera_extent(cameras: &[Camera]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in cameras {
        let p = c.base_pose().center();
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if cameras.is_empty() {
        return 0.0;
    }
    (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Phase {
    #[default]
    Mutual,
    PostFreeze,
}

/// How auxiliary fields are frozen at the phase switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FreezeMode {
    /// Scales and rotations fixed; positions, opacities and colors keep training.
    #[default]
    Partial,
    /// Every auxiliary parameter fixed.
    Full,
}

/// How the two reference fields vote in unilateral pruning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Prune when inconsistent with either auxiliary field.
    #[default]
    Or,
    /// Prune only when inconsistent with both.
    And,
}

/// Keep-masks over each field as it was before a pruning call.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneOutcome {
    pub keep: [Vec<bool>; 3],
}

impl PruneOutcome {
    pub fn removed(&self) -> [usize; 3] {
        std::array::from_fn(|i| self.keep[i].iter().filter(|&&k| !k).count())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct FrozenSnapshot {
    log_scales: [Vec<[f64; 3]>; 2],
    rotations: [Vec<Quat>; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldEnsemble {
    pub primary: GaussianField,
    pub aux: [GaussianField; 2],
    phase: Phase,
    freeze_mode: FreezeMode,
    snapshot: Option<FrozenSnapshot>,
}

impl FieldEnsemble {
    pub fn new(primary: GaussianField, aux1: GaussianField, aux2: GaussianField) -> Self {
        Self {
            primary,
            aux: [aux1, aux2],
            phase: Phase::Mutual,
            freeze_mode: FreezeMode::Partial,
            snapshot: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn freeze_mode(&self) -> FreezeMode {
        self.freeze_mode
    }

    /// Field `0` is the primary, `1` and `2` the auxiliaries.
    pub fn field(&self, i: usize) -> &GaussianField {
        match i {
            0 => &self.primary,
            _ => &self.aux[i - 1],
        }
    }

    pub fn field_mut(&mut self, i: usize) -> &mut GaussianField {
        match i {
            0 => &mut self.primary,
            _ => &mut self.aux[i - 1],
        }
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.primary.len(), self.aux[0].len(), self.aux[1].len()]
    }

    /// True if field `i`'s log-scales and rotations must not change.
    pub fn shape_frozen(&self, i: usize) -> bool {
        i > 0 && self.phase == Phase::PostFreeze
    }

    /// True if every parameter of field `i` is fixed.
    pub fn fully_frozen(&self, i: usize) -> bool {
        self.shape_frozen(i) && self.freeze_mode == FreezeMode::Full
    }

    /// Removes splats from all three fields; each one is flagged against the
    /// other two fields as they were before any removal.
    pub fn mutual_coprune(&mut self, delta: f64) -> Result<PruneOutcome> {
        if self.phase != Phase::Mutual {
            return Err(Error::WrongPhase { expected: "mutual" });
        }
        let order: Vec<(usize, usize)> = (0..3).flat_map(|s| (0..3).filter(move |&t| t != s).map(move |t| (s, t))).collect();
        let masks = mutual_masks([&self.primary, &self.aux[0], &self.aux[1]], delta, &order)?;
        for (i, m) in masks.iter().enumerate() {
            if m.iter().all(|&b| b) {
                return Err(Error::EnsembleCollapse { field: FIELD_NAMES[i] });
            }
        }
        let keep: [Vec<bool>; 3] = std::array::from_fn(|i| masks[i].iter().map(|&b| !b).collect());
        for (i, k) in keep.iter().enumerate() {
            if k.contains(&false) {
                self.field_mut(i).retain_mask(k);
            }
        }
        Ok(PruneOutcome { keep })
    }

    /// Switches to the post-freeze phase and records the auxiliary shapes.
    pub fn freeze_auxiliaries(&mut self, mode: FreezeMode) -> Result<()> {
        if self.phase == Phase::PostFreeze {
            return Err(Error::AlreadyFrozen);
        }
        self.phase = Phase::PostFreeze;
        self.freeze_mode = mode;
        self.snapshot = Some(FrozenSnapshot {
            log_scales: [self.aux[0].log_scales().to_vec(), self.aux[1].log_scales().to_vec()],
            rotations: [self.aux[0].rotations().to_vec(), self.aux[1].rotations().to_vec()],
        });
        Ok(())
    }

    /// Bitwise comparison of the auxiliary scales and rotations against the
    /// values recorded at freeze time. `None` before freezing.
    pub fn freeze_intact(&self) -> Option<bool> {
        let s = self.snapshot.as_ref()?;
        let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        Some((0..2).all(|i| {
            same(s.log_scales[i].as_flattened(), self.aux[i].log_scales().as_flattened())
                && same(s.rotations[i].as_flattened(), self.aux[i].rotations().as_flattened())
        }))
    }

    /// Prunes only the primary field, using both auxiliaries as references.
    pub fn unilateral_coprune(&mut self, delta: f64, agg: Aggregation) -> Result<PruneOutcome> {
        if self.phase != Phase::PostFreeze {
            return Err(Error::WrongPhase { expected: "post-freeze" });
        }
        let (a, b) = rayon::join(
            || coprune_mask(&self.primary, &self.aux[0], delta),
            || coprune_mask(&self.primary, &self.aux[1], delta),
        );
        let (a, b) = (a?, b?);
        let flagged: Vec<bool> = a
            .iter()
            .zip(&b)
            .map(|(&x, &y)| match agg {
                Aggregation::Or => x || y,
                Aggregation::And => x && y,
            })
            .collect();
        if flagged.iter().all(|&f| f) {
            return Err(Error::EnsembleCollapse { field: FIELD_NAMES[0] });
        }
        let keep: Vec<bool> = flagged.iter().map(|&f| !f).collect();
        if flagged.contains(&true) {
            self.primary.retain_mask(&keep);
        }
        Ok(PruneOutcome {
            keep: [keep, vec![true; self.aux[0].len()], vec![true; self.aux[1].len()]],
        })
    }
}

/// Per-field removal masks for mutual pruning, evaluating `(source, target)`
/// pairs in the given order. Every pair reads the unmodified fields.
pub fn mutual_masks(fields: [&GaussianField; 3], delta: f64, order: &[(usize, usize)]) -> Result<[Vec<bool>; 3]> {
    let pair_masks: Vec<((usize, usize), Vec<bool>)> = order
        .par_iter()
        .map(|&(s, t)| coprune_mask(fields[s], fields[t], delta).map(|m| ((s, t), m)))
        .collect::<Result<_>>()?;
    let mut out: [Vec<bool>; 3] = std::array::from_fn(|i| vec![false; fields[i].len()]);
    for ((s, _), m) in pair_masks {
        for (o, f) in out[s].iter_mut().zip(m) {
            *o |= f;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{quat, Splat};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn at(p: [f64; 3]) -> Splat {
        Splat {
            position: p,
            log_scale: [-2.0; 3],
            rotation: quat::IDENTITY,
            opacity_logit: 0.0,
            color_raw: [0.0; 3],
        }
    }

    fn field(points: &[[f64; 3]]) -> GaussianField {
        GaussianField::from_splats(points.iter().map(|&p| at(p)).collect::<Vec<_>>())
    }

    fn random_field(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> GaussianField {
        field(&(0..n).map(|_| std::array::from_fn(|_| rng.random_range(-spread..spread))).collect::<Vec<_>>())
    }

    fn brute(source: &GaussianField, target: &GaussianField, delta: f64) -> Vec<bool> {
        source
            .positions()
            .iter()
            .map(|p| {
                let d = target
                    .positions()
                    .iter()
                    .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                d > delta
            })
            .collect()
    }

    #[test]
    fn identical_fields_prune_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = random_field(&mut rng, 50, 3.0);
        assert!(coprune_mask(&f, &f, 0.0).unwrap().iter().all(|&m| !m));
        let mut e = FieldEnsemble::new(f.clone(), f.clone(), f.clone());
        assert_eq!(e.mutual_coprune(0.1).unwrap().removed(), [0; 3]);
    }

    #[test]
    fn isolated_splat_threshold() {
        let t = field(&[[0.0; 3]]);
        assert_eq!(coprune_mask(&field(&[[6.0, 0.0, 0.0]]), &t, 5.0).unwrap(), vec![true]);
        assert_eq!(coprune_mask(&field(&[[4.0, 0.0, 0.0]]), &t, 5.0).unwrap(), vec![false]);
        assert!(matches!(coprune_mask(&t, &GaussianField::new(), 5.0), Err(Error::EmptyTarget)));
    }

    #[test]
    fn index_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_field(&mut rng, 500, 2.0);
            let b = random_field(&mut rng, 300, 2.0);
            let delta = rng.random_range(0.0..0.5);
            assert_eq!(coprune_mask(&a, &b, delta).unwrap(), brute(&a, &b, delta));
        }
    }

    #[test]
    fn outlier_in_one_aux_removed() {
        let base = [[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let mut with_outlier = base.to_vec();
        with_outlier.push([20.0, 0.0, 0.0]);
        let mut e = FieldEnsemble::new(field(&base), field(&with_outlier), field(&base));
        assert_eq!(e.mutual_coprune(5.0).unwrap().removed(), [0, 1, 0]);
        assert_eq!(e.aux[0].positions(), &base);
    }

    #[test]
    fn mutual_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fs: Vec<GaussianField> = (0..3).map(|_| random_field(&mut rng, 300, 1.0)).collect();
        let refs = [&fs[0], &fs[1], &fs[2]];
        let fwd: Vec<(usize, usize)> = vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)];
        let mut rev = fwd.clone();
        rev.reverse();
        let shuffled = vec![(1, 2), (0, 2), (2, 0), (1, 0), (2, 1), (0, 1)];
        let a = mutual_masks(refs, 0.15, &fwd).unwrap();
        assert_eq!(a, mutual_masks(refs, 0.15, &rev).unwrap());
        assert_eq!(a, mutual_masks(refs, 0.15, &shuffled).unwrap());
        assert!(a.iter().any(|m| m.iter().any(|&b| b)));
    }

    #[test]
    fn collapse_detected() {
        let mut e = FieldEnsemble::new(field(&[[0.0; 3]]), field(&[[10.0, 0.0, 0.0]]), field(&[[0.0; 3]]));
        assert!(matches!(e.mutual_coprune(1.0), Err(Error::EnsembleCollapse { field: "primary" })));
        assert_eq!(e.counts(), [1, 1, 1]);
    }

    #[test]
    fn phases_and_freeze() {
        let f = field(&[[0.0; 3], [1.0, 1.0, 1.0]]);
        let mut e = FieldEnsemble::new(f.clone(), f.clone(), f.clone());
        assert_eq!(e.freeze_intact(), None);
        assert!(matches!(e.unilateral_coprune(1.0, Aggregation::Or), Err(Error::WrongPhase { .. })));
        e.freeze_auxiliaries(FreezeMode::Partial).unwrap();
        assert!(matches!(e.freeze_auxiliaries(FreezeMode::Partial), Err(Error::AlreadyFrozen)));
        assert!(matches!(e.mutual_coprune(1.0), Err(Error::WrongPhase { .. })));
        assert!(e.shape_frozen(1) && e.shape_frozen(2) && !e.shape_frozen(0));
        assert!(!e.fully_frozen(1));
        assert_eq!(e.freeze_intact(), Some(true));
        e.aux[1].positions_mut()[0][0] += 1.0;
        assert_eq!(e.freeze_intact(), Some(true));
        e.aux[1].log_scales_mut()[0][0] += 1e-9;
        assert_eq!(e.freeze_intact(), Some(false));
    }

    #[test]
    fn unilateral_or_and() {
        // one primary splat near aux1 only
        let p = field(&[[0.0; 3], [10.0, 0.0, 0.0]]);
        let a1 = field(&[[0.0; 3], [10.0, 0.0, 0.0]]);
        let a2 = field(&[[0.0; 3]]);
        let mut e = FieldEnsemble::new(p.clone(), a1.clone(), a2.clone());
        e.freeze_auxiliaries(FreezeMode::Partial).unwrap();
        let mut and = e.clone();
        assert_eq!(e.unilateral_coprune(5.0, Aggregation::Or).unwrap().removed(), [1, 0, 0]);
        assert_eq!(e.primary.positions(), &[[0.0; 3]]);
        assert_eq!(e.counts()[1..], [2, 1]);
        assert_eq!(and.unilateral_coprune(5.0, Aggregation::And).unwrap().removed(), [0; 3]);
        assert_eq!(e.freeze_intact(), Some(true));
    }

    #[test]
    fn camera_extent_diagonal() {
        use crate::scene::Intrinsics;
        let intr = Intrinsics {
            fx: 10.0,
            fy: 10.0,
            cx: 5.0,
            cy: 5.0,
            width: 10,
            height: 10,
        };
        let cams: Vec<Camera> = [[0.0, 0.0, -3.0], [3.0, 0.0, -3.0], [3.0, 4.0, -3.0]]
            .iter()
            .map(|&e| Camera::look_at(intr, nalgebra::Vector3::from(e), nalgebra::Vector3::new(0.0, 0.0, 1.0), nalgebra::Vector3::y()).unwrap())
            .collect();
        assert!((camera_extent(&cams) - 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pruning_monotone_in_delta(seed in 0u64..1000, d1 in 0.0f64..1.0, extra in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_field(&mut rng, 80, 1.5);
            let b = random_field(&mut rng, 40, 1.5);
            let lo = coprune_mask(&a, &b, d1).unwrap();
            let hi = coprune_mask(&a, &b, d1 + extra).unwrap();
            prop_assert!(hi.iter().zip(&lo).all(|(&h, &l)| !h || l));
        }
    }
}
