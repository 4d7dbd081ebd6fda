use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::quat::{self, Quat};
use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels. Pixel `(x, y)` is sampled at coordinate `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// World-to-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat::to_matrix(&self.rotation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().transpose() * (p - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation)
    }
}

/// A pinhole camera with a world-to-camera pose.
///
/// Learnable cameras carry a 6-component pose delta `[ωx, ωy, ωz, tx, ty, tz]`:
/// an axis-angle rotation left-multiplied onto the base rotation and a
/// translation offset added to the base translation. Non-learnable cameras
/// keep a zero delta.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    rotation: Quat,
    translation: Vector3<f64>,
    learnable: bool,
    delta: [f64; 6],
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, rotation: Quat, translation: Vector3<f64>) -> Result<Self> {
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be positive, got fx={} fy={}",
                intrinsics.fx, intrinsics.fy
            )));
        }
        if intrinsics.width == 0 || intrinsics.height == 0 {
            return Err(Error::InvalidConfig("camera width/height must be >= 1".into()));
        }
        let n = quat::norm(&rotation);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidQuaternion { norm: n });
        }
        Ok(Self {
            intrinsics,
            rotation: quat::normalize(&rotation),
            translation,
            learnable: false,
            delta: [0.0; 6],
        })
    }

    /// Camera at `eye` looking at `target`, with image-down along world `-up`.
    pub fn look_at(
        intrinsics: Intrinsics,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        // Rows of the world-to-camera rotation are the camera axes in world space.
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let q = matrix_to_quat(&r);
        let t = -(r * eye);
        Self::new(intrinsics, q, t)
    }

    pub fn rotation(&self) -> Quat {
        self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn is_learnable(&self) -> bool {
        self.learnable
    }

    pub fn delta(&self) -> [f64; 6] {
        self.delta
    }

    /// Marks the camera learnable, keeping its current delta (zero unless set before).
    pub fn into_learnable(mut self) -> Self {
        self.learnable = true;
        self
    }

    pub fn set_delta(&mut self, delta: [f64; 6]) -> Result<()> {
        if !self.learnable {
            return Err(Error::InvalidConfig(
                "pose delta can only be set on a learnable camera".into(),
            ));
        }
        self.delta = delta;
        Ok(())
    }

    pub fn delta_mut(&mut self) -> Option<&mut [f64; 6]> {
        self.learnable.then_some(&mut self.delta)
    }

    pub fn base_pose(&self) -> Pose {
        Pose {
            rotation: self.rotation,
            translation: self.translation,
        }
    }

    /// Effective pose after applying the learnable delta.
    pub fn effective_pose(&self) -> Pose {
        compose_delta(self)
    }
}

/// `exp(ω) · R_base` and `T_base + offset`; a zero delta returns the base pose unchanged.
pub fn compose_delta(camera: &Camera) -> Pose {
    let d = camera.delta;
    if d == [0.0; 6] {
        return camera.base_pose();
    }
    let w = Vector3::new(d[0], d[1], d[2]);
    let dq = quat::from_axis_angle(&w);
    Pose {
        rotation: quat::mul(&dq, &camera.rotation),
        translation: camera.translation + Vector3::new(d[3], d[4], d[5]),
    }
}

/// Shepperd's method; returns a unit quaternion with `w >= 0`.
pub fn matrix_to_quat(m: &Matrix3<f64>) -> Quat {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let q = quat::normalize(&q);
    if q[0] < 0.0 {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}
