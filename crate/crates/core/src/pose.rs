//! Pose interpolation between adjacent training cameras.

use crate::error::{Error, Result};
use crate::scene::quat::{self, Quat};
use crate::scene::Camera;

const UNIT_TOLERANCE: f64 = 1e-6;
const SMALL_ANGLE: f64 = 1e-6;

fn check_unit(q: &Quat) -> Result<()> {
    let n = quat::norm(q);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::InvalidQuaternion { norm: n });
    }
    Ok(())
}

/// Spherical linear interpolation along the shortest arc.
///
/// Falls back to normalized linear interpolation when the two rotations are
/// less than 1e-6 rad apart.
pub fn slerp(q0: &Quat, q1: &Quat, alpha: f64) -> Result<Quat> {
    check_unit(q0)?;
    check_unit(q1)?;
    let mut d = quat::dot(q0, q1);
    let mut q1 = *q1;
    if d < 0.0 {
        d = -d;
        q1 = q1.map(|v| -v);
    }
    // angle between the quaternions as 4-vectors, from chord lengths for accuracy near zero
    let diff: Quat = std::array::from_fn(|k| q1[k] - q0[k]);
    let sum: Quat = std::array::from_fn(|k| q1[k] + q0[k]);
    let theta = 2.0 * quat::norm(&diff).atan2(quat::norm(&sum));
    let (a, b) = if theta < SMALL_ANGLE || d >= 1.0 {
        (1.0 - alpha, alpha)
    } else {
        let s = theta.sin();
        (((1.0 - alpha) * theta).sin() / s, (alpha * theta).sin() / s)
    };
    let q = std::array::from_fn(|k| a * q0[k] + b * q1[k]);
    Ok(quat::normalize(&q))
}

/// Interpolated camera at weight `alpha` between `a` and `b`; learnable with a zero delta.
pub fn interpolate_pose(a: &Camera, b: &Camera, alpha: f64) -> Result<Camera> {
    if a.intrinsics != b.intrinsics {
        return Err(Error::IntrinsicsMismatch);
    }
    let rotation = slerp(&a.rotation(), &b.rotation(), alpha)?;
    let translation = a.translation() * (1.0 - alpha) + b.translation() * alpha;
    Ok(Camera::new(a.intrinsics, rotation, translation)?.into_learnable())
}

/// One interpolated viewpoint and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackPoint {
    pub camera: Camera,
    /// Index `n` of the source pair `(n, n + 1)`.
    pub pair: usize,
    /// `alpha = step / factor`.
    pub step: usize,
    pub factor: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseTrack {
    pub cameras: Vec<Camera>,
    pub points: Vec<TrackPoint>,
}

impl PoseTrack {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Inserts `factor - 1` cameras between every adjacent pair, at `alpha = k / factor`.
pub fn build_track(cameras: &[Camera], factor: usize) -> Result<PoseTrack> {
    if cameras.len() < 2 {
        return Err(Error::InsufficientViews(cameras.len()));
    }
    if factor < 2 {
        return Err(Error::InvalidInterpolationFactor(factor));
    }
    let mut points = Vec::with_capacity((factor - 1) * (cameras.len() - 1));
    for (pair, w) in cameras.windows(2).enumerate() {
        for step in 1..factor {
            let alpha = step as f64 / factor as f64;
            points.push(TrackPoint {
                camera: interpolate_pose(&w[0], &w[1], alpha)?,
                pair,
                step,
                factor,
                alpha,
            });
        }
    }
    Ok(PoseTrack {
        cameras: cameras.to_vec(),
        points,
    })
}
