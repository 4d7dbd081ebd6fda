//! Camera lists as JSON, and conversion from COLMAP text exports.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Camera, Intrinsics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub id: usize,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation `[w, x, y, z]`.
    pub quaternion: [f64; 4],
    /// World-to-camera translation.
    pub translation: [f64; 3],
    #[serde(default)]
    pub learnable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<[f64; 6]>,
}

impl CameraRecord {
    pub fn from_camera(id: usize, cam: &Camera) -> Self {
        let t = cam.translation();
        let i = cam.intrinsics;
        Self {
            id,
            width: i.width,
            height: i.height,
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            quaternion: cam.rotation(),
            translation: [t.x, t.y, t.z],
            learnable: cam.is_learnable(),
            delta: (cam.delta() != [0.0; 6]).then(|| cam.delta()),
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let intr = Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        let t = Vector3::from(self.translation);
        let mut cam = Camera::new(intr, self.quaternion, t)?;
        if self.learnable {
            cam = cam.into_learnable();
            if let Some(d) = self.delta {
                cam.set_delta(d)?;
            }
        } else if self.delta.is_some_and(|d| d != [0.0; 6]) {
            return Err(Error::InvalidConfig(format!(
                "camera {}: non-learnable camera with a nonzero delta",
                self.id
            )));
        }
        Ok(cam)
    }
}

pub(crate) fn json_error(text: &str, e: serde_json::Error) -> Error {
    let offset = text
        .split_inclusive('\n')
        .take(e.line().saturating_sub(1))
        .map(str::len)
        .sum::<usize>()
        + e.column().saturating_sub(1);
    Error::parse(offset, e.to_string())
}

pub fn cameras_to_json(cams: &[Camera]) -> String {
    let recs: Vec<CameraRecord> = cams.iter().enumerate().map(|(i, c)| CameraRecord::from_camera(i, c)).collect();
    serde_json::to_string_pretty(&recs).expect("camera records serialize")
}

pub fn cameras_from_json(text: &str) -> Result<Vec<Camera>> {
    let recs: Vec<CameraRecord> = serde_json::from_str(text).map_err(|e| json_error(text, e))?;
    recs.iter().map(CameraRecord::to_camera).collect()
}

pub fn save_cameras(cams: &[Camera], path: impl AsRef<Path>) -> Result<()> {
    super::raster::write_all(path.as_ref(), cameras_to_json(cams).as_bytes())
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    cameras_from_json(&text)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').filter_map(move |l| {
        let start = offset;
        offset += l.len();
        let t = l.trim();
        (!t.starts_with('#')).then_some((start, t))
    })
}

fn num<T: std::str::FromStr>(tok: Option<&str>, offset: usize, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse(offset, format!("expected {what}")))
}

/// Converts COLMAP `cameras.txt` and `images.txt` into named cameras, ordered by image id.
///
/// COLMAP poses are already world-to-camera with x right, y down, z forward.
/// COLMAP puts pixel centers at half-integer coordinates while pixel `(x, y)`
/// here is sampled at `(x, y)`, so the principal point shifts by −0.5.
/// Supported models: `PINHOLE` and `SIMPLE_PINHOLE`.
pub fn colmap_to_cameras(cameras_txt: &str, images_txt: &str) -> Result<Vec<(String, Camera)>> {
    let mut intr = std::collections::HashMap::new();
    for (off, line) in data_lines(cameras_txt) {
        if line.is_empty() {
            continue;
        }
        let mut t = line.split_whitespace();
        let id: u64 = num(t.next(), off, "camera id")?;
        let model = t.next().unwrap_or("");
        let width = num(t.next(), off, "width")?;
        let height = num(t.next(), off, "height")?;
        let p: Vec<f64> = t.map(|v| num(Some(v), off, "camera parameter")).collect::<Result<_>>()?;
        let (fx, fy, cx, cy) = match (model, p.as_slice()) {
            ("PINHOLE", [fx, fy, cx, cy]) => (*fx, *fy, *cx, *cy),
            ("SIMPLE_PINHOLE", [f, cx, cy]) => (*f, *f, *cx, *cy),
            _ => return Err(Error::parse(off, format!("unsupported camera model `{model}`"))),
        };
        intr.insert(
            id,
            Intrinsics {
                fx,
                fy,
                cx: cx - 0.5,
                cy: cy - 0.5,
                width,
                height,
            },
        );
    }

    let mut out = Vec::new();
    let mut expect_pose = true;
    for (off, line) in data_lines(images_txt) {
        if !expect_pose {
            // the 2D keypoint line that follows every pose line (possibly empty)
            expect_pose = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut t = line.split_whitespace();
        let image_id: u64 = num(t.next(), off, "image id")?;
        let q: Vec<f64> = (0..4).map(|_| num(t.next(), off, "quaternion")).collect::<Result<_>>()?;
        let tr: Vec<f64> = (0..3).map(|_| num(t.next(), off, "translation")).collect::<Result<_>>()?;
        let cam_id: u64 = num(t.next(), off, "camera id")?;
        let name = t.next().ok_or_else(|| Error::parse(off, "expected image name"))?.to_string();
        let i = *intr
            .get(&cam_id)
            .ok_or_else(|| Error::parse(off, format!("unknown camera id {cam_id}")))?;
        let qn = crate::scene::quat::normalize(&[q[0], q[1], q[2], q[3]]);
        let cam = Camera::new(i, qn, Vector3::new(tr[0], tr[1], tr[2]))?;
        out.push((image_id, name, cam));
        expect_pose = false;
    }
    out.sort_by_key(|(id, _, _)| *id);
    Ok(out.into_iter().map(|(_, n, c)| (n, c)).collect())
}
