//! Image-level guidance: pseudo-labels at interpolated poses, their quality
//! scores and selection, and the on/off activation schedule.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};
use crate::losses::{dssim_loss, image_correlation, l1_loss, weighted_loss, LossTerms, LossWeights};
use crate::render::RenderOutput;
use crate::pose::{PoseTrack, TrackPoint};
use crate::scene::Camera;

/// Produces the frame at `point.alpha` between the images of its source pair.
pub trait FrameInterpolator: Sync {
    fn interpolate(&self, point: &TrackPoint, start: &Image, end: &Image) -> Result<Image>;
}

/// `(1 − α)·start + α·end`.
#[derive(Clone, Copy, Debug, Default)]
pub struct CrossFade;

impl FrameInterpolator for CrossFade {
    fn interpolate(&self, point: &TrackPoint, start: &Image, end: &Image) -> Result<Image> {
        start.check_same_shape(end)?;
        let a = point.alpha;
        let data = start.data().iter().zip(end.data()).map(|(s, e)| (1.0 - a) * s + a * e).collect();
        Image::from_vec(start.width(), start.height(), data)
    }
}

/// Loads precomputed frames named `pair{n}_alpha{k}of{S}.png` from a directory.
#[derive(Clone, Debug)]
pub struct FrameDirectory {
    pub dir: PathBuf,
}

impl FrameDirectory {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn frame_name(pair: usize, step: usize, factor: usize) -> String {
        format!("pair{pair}_alpha{step}of{factor}.png")
    }
}

impl FrameInterpolator for FrameDirectory {
    fn interpolate(&self, point: &TrackPoint, _start: &Image, _end: &Image) -> Result<Image> {
        crate::io::read_png_rgb(self.dir.join(Self::frame_name(point.pair, point.step, point.factor)))
    }
}

/// In-memory frames keyed by `(pair, step)`.
#[derive(Clone, Debug, Default)]
pub struct FrameSet {
    frames: HashMap<(usize, usize), Image>,
}

impl FrameSet {
    pub fn insert(&mut self, pair: usize, step: usize, image: Image) {
        self.frames.insert((pair, step), image);
    }

    /// Fills the set by calling `f` for every point of `track`.
    pub fn from_track(track: &PoseTrack, mut f: impl FnMut(&TrackPoint) -> Image) -> Self {
        let mut set = Self::default();
        for p in &track.points {
            set.insert(p.pair, p.step, f(p));
        }
        set
    }
}

impl FrameInterpolator for FrameSet {
    fn interpolate(&self, point: &TrackPoint, _start: &Image, _end: &Image) -> Result<Image> {
        self.frames
            .get(&(point.pair, point.step))
            .cloned()
            .ok_or_else(|| Error::InvalidConfig(format!("no frame for pair {} step {}", point.pair, point.step)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub image: Image,
    /// Reference depth on an arbitrary monotone scale; `None` until a source provides one.
    pub depth: Option<DepthMap>,
    /// Learnable camera at the interpolated pose.
    pub camera: Camera,
    pub pair: usize,
    pub step: usize,
    pub factor: usize,
    pub alpha: f64,
    /// Quality score from the latest selection round; lower is better.
    pub score: Option<f64>,
    pub selected: bool,
}

/// One label per track point. `images` are the training images in track order;
/// `depths`, when given, holds one reference depth per track point.
pub fn generate_pseudo_labels(
    images: &[Image],
    track: &PoseTrack,
    interpolator: &dyn FrameInterpolator,
    depths: Option<&[DepthMap]>,
) -> Result<Vec<PseudoLabel>> {
    if images.len() != track.cameras.len() {
        return Err(Error::InvalidConfig(format!(
            "{} training images for a track over {} cameras",
            images.len(),
            track.cameras.len()
        )));
    }
    if let Some(d) = depths {
        if d.len() != track.len() {
            return Err(Error::InvalidConfig(format!(
                "{} depth maps for {} interpolated views",
                d.len(),
                track.len()
            )));
        }
    }
    track
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let image = interpolator.interpolate(p, &images[p.pair], &images[p.pair + 1])?;
            let expected = (p.camera.width(), p.camera.height());
            if image.dims() != expected {
                return Err(Error::InterpolatorContractViolation {
                    expected,
                    found: image.dims(),
                });
            }
            Ok(PseudoLabel {
                image,
                depth: depths.map(|d| d[i].clone()),
                camera: p.camera.clone(),
                pair: p.pair,
                step: p.step,
                factor: p.factor,
                alpha: p.alpha,
                score: None,
                selected: false,
            })
        })
        .collect()
}

/// How the structural term enters the quality score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRule {
    /// `λ1·L1 + λ2·D-SSIM·corr(Î, I)`
    #[default]
    Product,
    /// `λ1·L1 + λ2·D-SSIM + (1 − corr(Î, I))`
    Additive,
}

/// Quality score `M` of a label against the current render at its pose.
pub fn score_pseudo_label(label: &PseudoLabel, rendered: &Image, l1_weight: f64, dssim_weight: f64, rule: ScoreRule) -> Result<f64> {
    let l1 = l1_loss(&label.image, rendered)?;
    let ds = dssim_loss(&label.image, rendered)?;
    let corr = image_correlation(rendered, &label.image)?;
    Ok(match rule {
        ScoreRule::Product => l1_weight * l1 + dssim_weight * ds * corr,
        ScoreRule::Additive => l1_weight * l1 + dssim_weight * ds + (1.0 - corr),
    })
}

/// Marks the `⌊N/2⌋` labels with the smallest scores as selected (ties by
/// pair, then step) and clears every other flag. Unscored labels rank last.
/// Returns the selected indices in rank order.
pub fn select_top_half(labels: &mut [PseudoLabel]) -> Result<Vec<usize>> {
    if labels.len() < 2 {
        return Err(Error::NothingToSelect(labels.len()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        let (la, lb) = (&labels[a], &labels[b]);
        la.score
            .unwrap_or(f64::INFINITY)
            .total_cmp(&lb.score.unwrap_or(f64::INFINITY))
            .then(la.pair.cmp(&lb.pair))
            .then(la.step.cmp(&lb.step))
    });
    order.truncate(labels.len() / 2);
    for l in labels.iter_mut() {
        l.selected = false;
    }
    for &i in &order {
        labels[i].selected = true;
    }
    Ok(order)
}

/// Periodic on/off window after a warm-up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    pub start: usize,
    pub on: usize,
    pub period: usize,
}

impl Default for GuidanceSchedule {
    fn default() -> Self {
        Self {
            start: 2000,
            on: 100,
            period: 200,
        }
    }
}

impl GuidanceSchedule {
    pub fn is_active(&self, iteration: usize) -> bool {
        iteration >= self.start && (iteration - self.start) % self.period < self.on
    }
}

/// Default schedule: off before 2000, then on for the first 100 of every 200 iterations.
pub fn guidance_active(iteration: usize) -> bool {
    GuidanceSchedule::default().is_active(iteration)
}

/// Guidance objective of one label against a render from its camera, with
/// the label's reference depth in the correlation term when it has one.
pub fn guidance_loss(label: &PseudoLabel, rendered: &RenderOutput, w: &LossWeights) -> Result<LossTerms> {
    weighted_loss(&rendered.rgb, &rendered.depth, &rendered.alpha, &label.image, label.depth.as_ref(), w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ssim;
    use crate::pose::build_track;
    use crate::scene::Intrinsics;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cams(n: usize, w: usize) -> Vec<Camera> {
        let intr = Intrinsics {
            fx: 20.0,
            fy: 20.0,
            cx: w as f64 / 2.0,
            cy: w as f64 / 2.0,
            width: w,
            height: w,
        };
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.3;
                Camera::look_at(intr, Vector3::new(2.0 * t.cos(), 0.2, 2.0 * t.sin()), Vector3::zeros(), Vector3::y())
                    .unwrap()
            })
            .collect()
    }

    fn label_with(image: Image, pair: usize, step: usize, score: f64) -> PseudoLabel {
        let cam = cams(1, image.width()).remove(0);
        PseudoLabel {
            image,
            depth: None,
            camera: cam,
            pair,
            step,
            factor: 4,
            alpha: step as f64 / 4.0,
            score: Some(score),
            selected: false,
        }
    }

    #[test]
    fn label_counts_and_crossfade() {
        let track = build_track(&cams(3, 16), 4).unwrap();
        let imgs = vec![Image::filled(16, 16, [0.3, 0.6, 0.9]); 3];
        let labels = generate_pseudo_labels(&imgs, &track, &CrossFade, None).unwrap();
        assert_eq!(labels.len(), 6);
        assert!(labels.iter().all(|l| !l.selected && l.camera.is_learnable()));
        for l in &labels {
            for (a, b) in l.image.data().iter().zip(imgs[0].data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let track = build_track(&cams(2, 16), 2).unwrap();
        let imgs = vec![Image::filled(16, 16, [0.0; 3]), Image::filled(16, 16, [1.0; 3])];
        let labels = generate_pseudo_labels(&imgs, &track, &CrossFade, None).unwrap();
        assert!(labels[0].image.data().iter().all(|&v| v == 0.5));
    }

    struct Wrong;
    impl FrameInterpolator for Wrong {
        fn interpolate(&self, _: &TrackPoint, _: &Image, _: &Image) -> Result<Image> {
            Ok(Image::new(3, 3))
        }
    }

    #[test]
    fn contract_violation() {
        let track = build_track(&cams(2, 16), 2).unwrap();
        let imgs = vec![Image::new(16, 16); 2];
        assert!(matches!(
            generate_pseudo_labels(&imgs, &track, &Wrong, None),
            Err(Error::InterpolatorContractViolation { expected: (16, 16), found: (3, 3) })
        ));
    }

    #[test]
    fn frame_directory_reads_named_frames() {
        let dir = tempfile::tempdir().unwrap();
        let track = build_track(&cams(2, 16), 2).unwrap();
        let frame = Image::filled(16, 16, [0.2, 0.4, 0.6]);
        crate::io::write_png_rgb(dir.path().join("pair0_alpha1of2.png"), &frame).unwrap();
        let imgs = vec![Image::new(16, 16); 2];
        let labels = generate_pseudo_labels(&imgs, &track, &FrameDirectory::new(dir.path()), None).unwrap();
        assert!((labels[0].image.get(3, 3)[1] - 0.4).abs() < 1.0 / 255.0);
    }

    fn random_image(rng: &mut ChaCha8Rng, w: usize) -> Image {
        Image::from_vec(w, w, (0..w * w * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn score_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 16);
        let l = label_with(img.clone(), 0, 1, 0.0);
        assert_eq!(score_pseudo_label(&l, &img, 0.8, 0.2, ScoreRule::Product).unwrap(), 0.0);
        let mut shifted = img.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += 0.1);
        let m = score_pseudo_label(&l, &shifted, 1.0, 0.0, ScoreRule::Product).unwrap();
        assert!((m - 0.1).abs() < 1e-12);

        // structured pair against a straightforward evaluation of the formula
        let mut a = Image::new(16, 16);
        let mut b = Image::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                let v = ((x as f64) * 0.4).sin() * 0.3 + 0.5;
                a.set(x, y, [v, 0.5 + 0.02 * y as f64, 0.2]);
                b.set(x, y, [v * 0.9 + 0.03, 0.45 + 0.025 * y as f64, 0.25 + 0.01 * x as f64]);
            }
        }
        let l = label_with(a.clone(), 0, 1, 0.0);
        let n = a.data().len() as f64;
        let l1: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / n;
        let ma = a.data().iter().sum::<f64>() / n;
        let mb = b.data().iter().sum::<f64>() / n;
        let cov: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - ma) * (q - mb)).sum();
        let va: f64 = a.data().iter().map(|p| (p - ma).powi(2)).sum();
        let vb: f64 = b.data().iter().map(|q| (q - mb).powi(2)).sum();
        let corr = cov / (va * vb).sqrt();
        let expected = 0.8 * l1 + 0.2 * (1.0 - ssim(&a, &b).unwrap()) / 2.0 * corr;
        let m = score_pseudo_label(&l, &b, 0.8, 0.2, ScoreRule::Product).unwrap();
        assert!((m - expected).abs() < 1e-12);
        let add = score_pseudo_label(&l, &b, 0.8, 0.2, ScoreRule::Additive).unwrap();
        assert!((add - (0.8 * l1 + 0.2 * (1.0 - ssim(&a, &b).unwrap()) / 2.0 + 1.0 - corr)).abs() < 1e-12);
    }

    fn scored(scores: &[f64]) -> Vec<PseudoLabel> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| label_with(Image::new(4, 4), i / 3, i % 3 + 1, s))
            .collect()
    }

    #[test]
    fn selection_examples() {
        let mut l = scored(&[3.0, 1.0, 2.0, 9.0, 8.0, 7.0]);
        let mut sel = select_top_half(&mut l).unwrap();
        sel.sort();
        assert_eq!(sel, vec![0, 1, 2]);
        assert_eq!(l.iter().filter(|x| x.selected).count(), 3);

        let mut l = scored(&[1.0; 8]);
        assert_eq!(select_top_half(&mut l).unwrap(), vec![0, 1, 2, 3]);

        // re-selection replaces the previous flags
        for (x, s) in l.iter_mut().zip([9.0, 9.0, 9.0, 9.0, 0.0, 0.0, 0.0, 0.0]) {
            x.score = Some(s);
        }
        select_top_half(&mut l).unwrap();
        assert_eq!(l.iter().map(|x| x.selected).collect::<Vec<_>>(), [false, false, false, false, true, true, true, true]);

        assert!(matches!(select_top_half(&mut scored(&[1.0])), Err(Error::NothingToSelect(1))));
    }

    #[test]
    fn schedule_examples() {
        assert!(!guidance_active(1999));
        assert!(guidance_active(2000));
        assert!(guidance_active(2050));
        assert!(!guidance_active(2150));
        assert!(guidance_active(2200));
    }

    proptest! {
        #[test]
        fn selection_ignores_storage_order(scores in prop::collection::vec(0u8..5, 2..20), seed in 0u64..100) {
            let mut a = scored(&scores.iter().map(|&s| s as f64).collect::<Vec<_>>());
            let mut b = a.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..b.len()).rev() {
                b.swap(i, rng.random_range(0..=i));
            }
            select_top_half(&mut a).unwrap();
            select_top_half(&mut b).unwrap();
            let key = |v: &[PseudoLabel]| {
                let mut k: Vec<(usize, usize)> = v.iter().filter(|l| l.selected).map(|l| (l.pair, l.step)).collect();
                k.sort();
                k
            };
            prop_assert_eq!(key(&a), key(&b));
            prop_assert_eq!(a.iter().filter(|l| l.selected).count(), scores.len() / 2);
        }

        #[test]
        fn crossfade_bounded(seed in 0u64..200, alpha in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_image(&mut rng, 5), random_image(&mut rng, 5));
            let track = build_track(&cams(2, 5), 2).unwrap();
            let mut p = track.points[0].clone();
            p.alpha = alpha;
            let out = CrossFade.interpolate(&p, &a, &b).unwrap();
            for ((o, x), y) in out.data().iter().zip(a.data()).zip(b.data()) {
                prop_assert!(*o >= x.min(*y) - 1e-15 && *o <= x.max(*y) + 1e-15);
            }
        }
    }

    #[test]
    fn schedule_has_period_200() {
        for i in 2000..100_000 {
            assert_eq!(guidance_active(i), guidance_active(i + 200));
        }
    }
}
