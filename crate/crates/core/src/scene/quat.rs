//! Quaternion helpers on `[w, x, y, z]` arrays.
//!
//! Rotations are kept as plain arrays because the renderer differentiates
//! through each component; `nalgebra::UnitQuaternion` hides the raw layout.

use nalgebra::{Matrix3, Vector3};

pub type Quat = [f64; 4];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

#[inline]
pub fn norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

#[inline]
pub fn dot(a: &Quat, b: &Quat) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub fn normalize(q: &Quat) -> Quat {
    let n = norm(q);
    if n == 0.0 {
        return IDENTITY;
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Hamilton product `a ⊗ b`.
pub fn mul(a: &Quat, b: &Quat) -> Quat {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn conj(q: &Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

/// Rotation matrix of a unit quaternion.
pub fn to_matrix(q: &Quat) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the entries of `to_matrix(q)` back onto `q`.
pub fn matrix_grad_to_quat(q: &Quat, g: &Matrix3<f64>) -> Quat {
    let [w, x, y, z] = *q;
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [dw, dx, dy, dz]
}

/// Gradient through `q / |q|`: given dL/d(q̂), returns dL/dq.
pub fn normalize_backward(q: &Quat, g_unit: &Quat) -> Quat {
    let n = norm(q);
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let d = dot(&u, g_unit);
    [
        (g_unit[0] - u[0] * d) / n,
        (g_unit[1] - u[1] * d) / n,
        (g_unit[2] - u[2] * d) / n,
        (g_unit[3] - u[3] * d) / n,
    ]
}

/// Exponential map: axis-angle vector (angle = norm) to unit quaternion.
pub fn from_axis_angle(w: &Vector3<f64>) -> Quat {
    let theta = w.norm();
    let (c, f) = half_angle_terms(theta);
    [c, f * w.x, f * w.y, f * w.z]
}

/// `cos(θ/2)` and `sin(θ/2)/θ`, the latter by series near zero.
fn half_angle_terms(theta: f64) -> (f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (1.0 - t2 / 8.0 + t2 * t2 / 384.0, 0.5 - t2 / 48.0 + t2 * t2 / 3840.0)
    } else {
        ((0.5 * theta).cos(), (0.5 * theta).sin() / theta)
    }
}

/// Jacobian of [`from_axis_angle`], rows = quaternion components.
pub fn axis_angle_jacobian(w: &Vector3<f64>) -> [[f64; 3]; 4] {
    let theta = w.norm();
    // d cos(θ/2)/dω = -sin(θ/2)/(2θ) · ω
    // d (f ω)/dω    = f I + (f'(θ)/θ) ω ωᵀ
    let (_, f) = half_angle_terms(theta);
    let (g, h) = if theta < 1e-4 {
        let t2 = theta * theta;
        (-0.5 * (0.5 - t2 / 48.0), -1.0 / 24.0 + t2 / 960.0)
    } else {
        let s = (0.5 * theta).sin();
        let c = (0.5 * theta).cos();
        (-0.5 * s / theta, (0.5 * theta * c - s) / (theta * theta * theta))
    };
    let mut jac = [[0.0; 3]; 4];
    for k in 0..3 {
        jac[0][k] = g * w[k];
        for r in 0..3 {
            jac[r + 1][k] = h * w[r] * w[k] + if r == k { f } else { 0.0 };
        }
    }
    jac
}

/// dL/da for `a ⊗ b`, given dL/d(a ⊗ b).
pub fn mul_grad_left(b: &Quat, g: &Quat) -> Quat {
    // a ⊗ b = M(b) a where M(b) is the right-multiplication matrix.
    let [bw, bx, by, bz] = *b;
    let m = [
        [bw, -bx, -by, -bz],
        [bx, bw, bz, -by],
        [by, -bz, bw, bx],
        [bz, by, -bx, bw],
    ];
    let mut out = [0.0; 4];
    for (r, row) in m.iter().enumerate() {
        for c in 0..4 {
            out[c] += row[c] * g[r];
        }
    }
    out
}

/// Angle of the rotation taking `a` to `b` (shortest arc), in radians.
pub fn angle_between(a: &Quat, b: &Quat) -> f64 {
    // 2·atan2(|v|, |w|) is better conditioned than 2·acos(|a·b|) near zero.
    let rel = mul(&conj(&normalize(a)), &normalize(b));
    let v = (rel[1] * rel[1] + rel[2] * rel[2] + rel[3] * rel[3]).sqrt();
    2.0 * v.atan2(rel[0].abs())
}
