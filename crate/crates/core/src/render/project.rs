use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use crate::scene::{quat, Camera, GaussianField, Intrinsics};

/// Splats at camera depth `<= NEAR_PLANE` are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to the diagonal of every 2D covariance, in px².
pub const COV2D_FLOOR: f64 = 0.3;
/// Screen-space extent of a splat in standard deviations.
pub const EXTENT_SIGMAS: f64 = 3.0;

/// Screen-space footprint of one splat.
#[derive(Clone, Copy, Debug)]
pub struct Projected {
    pub mean: [f64; 2],
    /// 2D covariance including the diagonal floor.
    pub cov: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub in_frustum: bool,
    /// Radius of the 3σ bounding circle in pixels.
    pub radius: f64,
}

impl Projected {
    fn culled(depth: f64) -> Self {
        Self {
            mean: [f64::NAN; 2],
            cov: Matrix2::zeros(),
            conic: Matrix2::zeros(),
            depth,
            in_frustum: false,
            radius: 0.0,
        }
    }

    /// True if the projected mean lies inside the image rectangle.
    pub fn mean_inside(&self, width: usize, height: usize) -> bool {
        self.in_frustum
            && self.mean[0] >= 0.0
            && self.mean[1] >= 0.0
            && self.mean[0] < width as f64
            && self.mean[1] < height as f64
    }
}

/// Intermediate quantities of one projection, reused by the backward pass.
pub(crate) struct ProjectionTrace {
    pub cam_point: Vector3<f64>,
    pub jac: Matrix2x3<f64>,
    pub cov_cam: Matrix3<f64>,
    pub cov_world: Matrix3<f64>,
    pub rot: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub q_unit: quat::Quat,
}

/// Pinhole Jacobian of `(fx·x/z + cx, fy·y/z + cy)` at camera point `p`.
#[inline]
pub(crate) fn pinhole_jacobian(intr: &Intrinsics, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        intr.fx * iz,
        0.0,
        -intr.fx * p.x * iz * iz,
        0.0,
        intr.fy * iz,
        -intr.fy * p.y * iz * iz,
    )
}

pub(crate) fn trace_one(
    intr: &Intrinsics,
    w2c: &Matrix3<f64>,
    t: &Vector3<f64>,
    position: &[f64; 3],
    log_scale: &[f64; 3],
    rotation: &quat::Quat,
) -> ProjectionTrace {
    let p = Vector3::from(*position);
    let cam_point = w2c * p + t;
    let q_unit = quat::normalize(rotation);
    let rot = quat::to_matrix(&q_unit);
    let scale = Vector3::new(log_scale[0].exp(), log_scale[1].exp(), log_scale[2].exp());
    let m = rot * Matrix3::from_diagonal(&scale);
    let cov_world = m * m.transpose();
    let cov_cam = w2c * cov_world * w2c.transpose();
    let jac = pinhole_jacobian(intr, &cam_point);
    ProjectionTrace {
        cam_point,
        jac,
        cov_cam,
        cov_world,
        rot,
        scale,
        q_unit,
    }
}

pub(crate) fn project_one(
    intr: &Intrinsics,
    w2c: &Matrix3<f64>,
    t: &Vector3<f64>,
    position: &[f64; 3],
    log_scale: &[f64; 3],
    rotation: &quat::Quat,
) -> Projected {
    let p = Vector3::from(*position);
    let depth = (w2c * p + t).z;
    if depth <= NEAR_PLANE {
        return Projected::culled(depth);
    }
    let tr = trace_one(intr, w2c, t, position, log_scale, rotation);
    let c = tr.cam_point;
    let mean = [intr.fx * c.x / c.z + intr.cx, intr.fy * c.y / c.z + intr.cy];
    let cov = tr.jac * tr.cov_cam * tr.jac.transpose() + Matrix2::identity() * COV2D_FLOOR;
    // symmetrize against rounding so the conic is exactly symmetric
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    let cov = Matrix2::new(cov[(0, 0)], off, off, cov[(1, 1)]);
    let det = cov[(0, 0)] * cov[(1, 1)] - off * off;
    if !(det > 0.0) || !det.is_finite() {
        return Projected::culled(depth);
    }
    let conic = Matrix2::new(cov[(1, 1)] / det, -off / det, -off / det, cov[(0, 0)] / det);
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    Projected {
        mean,
        cov,
        conic,
        depth,
        in_frustum: true,
        radius: EXTENT_SIGMAS * lambda_max.sqrt(),
    }
}

/// Projects every splat through the camera's effective pose.
pub fn project(camera: &Camera, field: &GaussianField) -> Vec<Projected> {
    let pose = camera.effective_pose();
    let w2c = pose.rotation_matrix();
    let t = pose.translation;
    let intr = camera.intrinsics;
    (0..field.len())
        .map(|i| {
            project_one(
                &intr,
                &w2c,
                &t,
                &field.positions()[i],
                &field.log_scales()[i],
                &field.rotations()[i],
            )
        })
        .collect()
}
