//! Binary little-endian PLY in the usual splat property layout.
//!
//! Writes `double` properties so round trips are bit-exact; reads `float`
//! or `double` for the known properties and skips any other scalar property.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{GaussianField, Splat};

const NAMES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
    "rot_2", "rot_3",
];

fn values(s: &Splat) -> [f64; 14] {
    [
        s.position[0],
        s.position[1],
        s.position[2],
        s.color_raw[0],
        s.color_raw[1],
        s.color_raw[2],
        s.opacity_logit,
        s.log_scale[0],
        s.log_scale[1],
        s.log_scale[2],
        s.rotation[0],
        s.rotation[1],
        s.rotation[2],
        s.rotation[3],
    ]
}

fn from_values(v: &[f64; 14]) -> Splat {
    Splat {
        position: [v[0], v[1], v[2]],
        color_raw: [v[3], v[4], v[5]],
        opacity_logit: v[6],
        log_scale: [v[7], v[8], v[9]],
        rotation: [v[10], v[11], v[12], v[13]],
    }
}

pub fn ply_bytes(field: &GaussianField) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        field.len()
    );
    for n in NAMES {
        out.push_str(&format!("property double {n}\n"));
    }
    out.push_str("end_header\n");
    let mut bytes = out.into_bytes();
    bytes.reserve(field.len() * 14 * 8);
    for s in field.splats() {
        for v in values(&s) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save_ply(field: &GaussianField, path: impl AsRef<Path>) -> Result<()> {
    super::raster::write_all(path.as_ref(), &ply_bytes(field))
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianField> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

#[derive(Clone, Copy)]
enum Scalar {
    F32,
    F64,
    Skip(usize),
}

fn scalar_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "float" | "int32" | "uint32" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

pub fn parse_ply(bytes: &[u8]) -> Result<GaussianField> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(start, "unterminated header"))?;
        *pos = start + end + 1;
        let line = std::str::from_utf8(&bytes[start..start + end])
            .map_err(|_| Error::parse(start, "header is not UTF-8"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (off, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(Error::parse(off, "missing `ply` magic"));
    }
    let mut count: Option<usize> = None;
    let mut in_vertex = false;
    let mut layout: Vec<(Scalar, Option<usize>)> = Vec::new();
    let header_end;
    loop {
        let (off, line) = next_line(&mut pos)?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => {
                header_end = off;
                break;
            }
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::parse(off, format!("unsupported format `{fmt}`")));
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, n] => {
                if count.is_some() && in_vertex {
                    // properties of later elements are never read
                    in_vertex = false;
                    continue;
                }
                in_vertex = *name == "vertex";
                if !in_vertex {
                    return Err(Error::parse(off, format!("element `{name}` before vertex")));
                }
                count = Some(n.parse().map_err(|_| Error::parse(off, "bad element count"))?);
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::parse(off, "list properties are not supported"));
            }
            ["property", ty, name] if in_vertex => {
                let size = scalar_size(ty).ok_or_else(|| Error::parse(off, format!("unknown type `{ty}`")))?;
                let slot = NAMES.iter().position(|n| n == name);
                let scalar = match (slot, size) {
                    (Some(_), 4) if ty.starts_with("float") => Scalar::F32,
                    (Some(_), 8) => Scalar::F64,
                    (Some(_), _) => return Err(Error::parse(off, format!("property `{name}` must be float or double"))),
                    (None, s) => Scalar::Skip(s),
                };
                layout.push((scalar, slot));
            }
            ["property", ..] => {}
            _ => return Err(Error::parse(off, format!("unrecognized header line `{line}`"))),
        }
    }
    let count = count.ok_or_else(|| Error::parse(header_end, "no vertex element"))?;
    for (k, name) in NAMES.iter().enumerate() {
        if !layout.iter().any(|(_, s)| *s == Some(k)) {
            return Err(Error::parse(header_end, format!("missing property `{name}`")));
        }
    }
    let stride: usize = layout
        .iter()
        .map(|(s, _)| match s {
            Scalar::F32 => 4,
            Scalar::F64 => 8,
            Scalar::Skip(n) => *n,
        })
        .sum();
    let need = pos + count * stride;
    if bytes.len() < need {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: {count} vertices need {need} bytes"),
        ));
    }
    let mut field = GaussianField::new();
    let mut cur = pos;
    for _ in 0..count {
        let mut v = [0.0; 14];
        for (scalar, slot) in &layout {
            let (val, size) = match scalar {
                Scalar::F32 => (f32::from_le_bytes(bytes[cur..cur + 4].try_into().unwrap()) as f64, 4),
                Scalar::F64 => (f64::from_le_bytes(bytes[cur..cur + 8].try_into().unwrap()), 8),
                Scalar::Skip(n) => (0.0, *n),
            };
            if let Some(k) = slot {
                v[*k] = val;
            }
            cur += size;
        }
        field.push(from_values(&v));
    }
    Ok(field)
}
