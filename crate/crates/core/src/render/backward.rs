//! Analytic adjoint of [`render`](super::render).
//!
//! The per-pixel reverse scan produces gradients on each splat's 2D mean,
//! conic, color, opacity and depth. Those are reduced across row chunks in
//! chunk order, then pulled back through the projection to the 3D
//! parameters and, for learnable cameras, to the pose delta.

use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use super::project::trace_one;
use super::{GradientBundle, RenderOutput, ROWS_PER_CHUNK};
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};
use crate::scene::{quat, Camera, GaussianField};

const MEAN_X: usize = 0;
const MEAN_Y: usize = 1;
const CON_00: usize = 2;
const CON_01: usize = 3;
const CON_11: usize = 4;
const COLOR: usize = 5;
const OPACITY: usize = 8;
const DEPTH: usize = 9;
const SLOTS: usize = 10;

struct SplatGrad {
    position: [f64; 3],
    log_scale: [f64; 3],
    rotation: [f64; 4],
    opacity_logit: f64,
    color: [f64; 3],
    mean2d_norm: f64,
    d_w2c: Matrix3<f64>,
    d_t: Vector3<f64>,
}

/// Gradients of `Σ grad_rgb·rgb + Σ grad_depth·depth` with respect to every
/// field parameter and, when the camera is learnable, its pose delta.
pub fn render_backward(
    field: &GaussianField,
    camera: &Camera,
    output: &RenderOutput,
    grad_rgb: &Image,
    grad_depth: Option<&DepthMap>,
) -> Result<GradientBundle> {
    if field.revision() != output.revision || field.len() != output.splat_count {
        return Err(Error::StaleRenderOutput {
            expected: output.revision,
            found: field.revision(),
        });
    }
    grad_rgb.check_same_shape(&output.rgb)?;
    if let Some(gd) = grad_depth {
        if gd.dims() != output.depth.dims() {
            return Err(Error::ShapeMismatch {
                left: gd.dims(),
                right: output.depth.dims(),
            });
        }
    }

    let n = field.len();
    let width = camera.width();
    let height = camera.height();
    let view = field.activate();
    let proj = &output.projections;
    let bg = output.background;

    let partials: Vec<Vec<[f64; SLOTS]>> = (0..height.div_ceil(ROWS_PER_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![[0.0; SLOTS]; n];
            let y_end = ((c + 1) * ROWS_PER_CHUNK).min(height);
            for y in c * ROWS_PER_CHUNK..y_end {
                for x in 0..width {
                    let g_rgb = grad_rgb.get(x, y);
                    let g_d = grad_depth.map_or(0.0, |d| d.get(x, y));
                    let recs = output.pixel_records(x, y);
                    if recs.is_empty() || (g_rgb == [0.0; 3] && g_d == 0.0) {
                        continue;
                    }
                    // dL/dT after the last contribution: only the background sees it.
                    let mut g_t = g_rgb[0] * bg[0] + g_rgb[1] * bg[1] + g_rgb[2] * bg[2];
                    for rec in recs.iter().rev() {
                        let i = rec.splat as usize;
                        let p = &proj[i];
                        let col = &view.colors[i];
                        let w = rec.alpha * rec.trans;
                        let a = &mut acc[i];
                        a[COLOR] += g_rgb[0] * w;
                        a[COLOR + 1] += g_rgb[1] * w;
                        a[COLOR + 2] += g_rgb[2] * w;
                        a[DEPTH] += g_d * w;
                        let s = g_rgb[0] * col[0] + g_rgb[1] * col[1] + g_rgb[2] * col[2] + g_d * p.depth;
                        let g_alpha = rec.trans * (s - g_t);
                        g_t = rec.alpha * s + (1.0 - rec.alpha) * g_t;

                        let o = view.opacities[i];
                        a[OPACITY] += g_alpha * rec.falloff;
                        let g_fall = g_alpha * o * rec.falloff;
                        if g_fall == 0.0 {
                            continue;
                        }
                        let dx = x as f64 - p.mean[0];
                        let dy = y as f64 - p.mean[1];
                        // ∂G/∂mean = G · conic · d,  ∂G/∂conic = -½ G d dᵀ
                        a[MEAN_X] += g_fall * (p.conic[(0, 0)] * dx + p.conic[(0, 1)] * dy);
                        a[MEAN_Y] += g_fall * (p.conic[(1, 0)] * dx + p.conic[(1, 1)] * dy);
                        a[CON_00] += -0.5 * g_fall * dx * dx;
                        a[CON_01] += -0.5 * g_fall * dx * dy;
                        a[CON_11] += -0.5 * g_fall * dy * dy;
                    }
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![[0.0; SLOTS]; n];
    for part in &partials {
        for (dst, src) in screen.iter_mut().zip(part) {
            for k in 0..SLOTS {
                dst[k] += src[k];
            }
        }
    }
    drop(partials);

    let pose = camera.effective_pose();
    let w2c = pose.rotation_matrix();
    let t = pose.translation;
    let intr = camera.intrinsics;

    let per_splat: Vec<SplatGrad> = (0..n)
        .into_par_iter()
        .map(|i| {
            let g = &screen[i];
            let o = view.opacities[i];
            let col = view.colors[i];
            let mut out = SplatGrad {
                position: [0.0; 3],
                log_scale: [0.0; 3],
                rotation: [0.0; 4],
                opacity_logit: g[OPACITY] * o * (1.0 - o),
                color: [
                    g[COLOR] * col[0] * (1.0 - col[0]),
                    g[COLOR + 1] * col[1] * (1.0 - col[1]),
                    g[COLOR + 2] * col[2] * (1.0 - col[2]),
                ],
                mean2d_norm: 0.0,
                d_w2c: Matrix3::zeros(),
                d_t: Vector3::zeros(),
            };
            let p = &proj[i];
            if !p.in_frustum || g.iter().all(|&v| v == 0.0) {
                return out;
            }
            let tr = trace_one(
                &intr,
                &w2c,
                &t,
                &field.positions()[i],
                &field.log_scales()[i],
                &field.rotations()[i],
            );
            let c = tr.cam_point;
            let iz = 1.0 / c.z;

            // conic = cov⁻¹  ⇒  dL/dcov = -conic · dL/dconic · conic
            let g_con = Matrix2::new(g[CON_00], g[CON_01], g[CON_01], g[CON_11]);
            let g_cov2d = -(p.conic * g_con * p.conic);
            // cov2d = J Σc Jᵀ + floor
            let g_jac = 2.0 * g_cov2d * tr.jac * tr.cov_cam;
            let g_cov_cam = tr.jac.transpose() * g_cov2d * tr.jac;
            // Σc = W Σw Wᵀ
            let g_w_cov = 2.0 * g_cov_cam * w2c * tr.cov_world;
            let g_cov_world = w2c.transpose() * g_cov_cam * w2c;
            // Σw = M Mᵀ, M = R S
            let m = tr.rot * Matrix3::from_diagonal(&tr.scale);
            let g_m = 2.0 * g_cov_world * m;
            let mut g_rot = Matrix3::zeros();
            for k in 0..3 {
                let mut ds = 0.0;
                for r in 0..3 {
                    g_rot[(r, k)] = g_m[(r, k)] * tr.scale[k];
                    ds += g_m[(r, k)] * tr.rot[(r, k)];
                }
                out.log_scale[k] = ds * tr.scale[k];
            }
            let g_q_unit = quat::matrix_grad_to_quat(&tr.q_unit, &g_rot);
            out.rotation = quat::normalize_backward(&field.rotations()[i], &g_q_unit);

            // mean = (fx x/z + cx, fy y/z + cy), depth = z, plus the Jacobian's dependence on (x, y, z)
            let (gu, gv) = (g[MEAN_X], g[MEAN_Y]);
            let mut g_cam = Vector3::new(
                intr.fx * iz * gu,
                intr.fy * iz * gv,
                -intr.fx * c.x * iz * iz * gu - intr.fy * c.y * iz * iz * gv + g[DEPTH],
            );
            let iz2 = iz * iz;
            let iz3 = iz2 * iz;
            g_cam.x += g_jac[(0, 2)] * (-intr.fx * iz2);
            g_cam.y += g_jac[(1, 2)] * (-intr.fy * iz2);
            g_cam.z += g_jac[(0, 0)] * (-intr.fx * iz2)
                + g_jac[(0, 2)] * (2.0 * intr.fx * c.x * iz3)
                + g_jac[(1, 1)] * (-intr.fy * iz2)
                + g_jac[(1, 2)] * (2.0 * intr.fy * c.y * iz3);

            let pos = Vector3::from(field.positions()[i]);
            let g_pos = w2c.transpose() * g_cam;
            out.position = [g_pos.x, g_pos.y, g_pos.z];
            out.d_w2c = g_w_cov + g_cam * pos.transpose();
            out.d_t = g_cam;
            out.mean2d_norm = (gu * 0.5 * width as f64).hypot(gv * 0.5 * height as f64);
            out
        })
        .collect();

    let mut bundle = GradientBundle::zeros(n);
    let mut d_w2c = Matrix3::zeros();
    let mut d_t = Vector3::zeros();
    for (i, s) in per_splat.into_iter().enumerate() {
        bundle.positions[i] = s.position;
        bundle.log_scales[i] = s.log_scale;
        bundle.rotations[i] = s.rotation;
        bundle.opacity_logits[i] = s.opacity_logit;
        bundle.colors[i] = s.color;
        bundle.mean2d_norm[i] = s.mean2d_norm;
        d_w2c += s.d_w2c;
        d_t += s.d_t;
    }

    if camera.is_learnable() {
        let delta = camera.delta();
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let g_q_eff = quat::matrix_grad_to_quat(&pose.rotation, &d_w2c);
        let g_dq = quat::mul_grad_left(&camera.rotation(), &g_q_eff);
        let jac = quat::axis_angle_jacobian(&omega);
        let mut g = [0.0; 6];
        for k in 0..3 {
            g[k] = (0..4).map(|r| jac[r][k] * g_dq[r]).sum();
        }
        g[3] = d_t.x;
        g[4] = d_t.y;
        g[5] = d_t.z;
        bundle.pose_delta = Some(g);
    }
    Ok(bundle)
}
