//! PNG and raw float I/O for images, depth maps and masks.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};

/// 16-bit depth PNGs store `round(depth · DEPTH_PNG_SCALE)`.
pub const DEPTH_PNG_SCALE: f64 = 1000.0;
/// Magic of the float depth format: 8 bytes, then width and height as u32 LE, then f32 LE samples.
pub const DEPTH_F32_MAGIC: &[u8; 8] = b"DEPTHF32";

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn write_png(path: &Path, w: usize, h: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit RGB PNG, clamping to [0, 1].
pub fn write_png_rgb(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let data: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    write_png(path.as_ref(), img.width(), img.height(), ColorType::Rgb, BitDepth::Eight, &data)
}

/// Reads any 8- or 16-bit PNG as RGB in [0, 1]; alpha is dropped and gray is replicated.
pub fn read_png_rgb(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(Transformations::EXPAND | Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(png_err("indexed PNG not expanded")),
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            let px = &row[x * channels..];
            let rgb = if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
            data.extend(rgb.iter().map(|&v| v as f64 / 255.0));
        }
    }
    Image::from_vec(w, h, data)
}

/// Writes a 16-bit grayscale depth PNG: `raw = round(depth · 1000)`, clamped to u16.
pub fn write_depth_png16(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let mut data = Vec::with_capacity(depth.data().len() * 2);
    for &d in depth.data() {
        let raw = (d * DEPTH_PNG_SCALE).round().clamp(0.0, u16::MAX as f64) as u16;
        data.extend_from_slice(&raw.to_be_bytes());
    }
    write_png(path.as_ref(), depth.width(), depth.height(), ColorType::Grayscale, BitDepth::Sixteen, &data)
}

/// Reads a 16-bit grayscale depth PNG as `raw / 1000` scene units.
pub fn read_depth_png16(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.color_type != ColorType::Grayscale || info.bit_depth != BitDepth::Sixteen {
        return Err(png_err(format!(
            "depth PNG must be 16-bit grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            data.push(u16::from_be_bytes([row[2 * x], row[2 * x + 1]]) as f64 / DEPTH_PNG_SCALE);
        }
    }
    DepthMap::from_vec(w, h, data)
}

pub fn write_depth_f32(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(16 + depth.data().len() * 4);
    bytes.extend_from_slice(DEPTH_F32_MAGIC);
    bytes.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    for &d in depth.data() {
        bytes.extend_from_slice(&(d as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_depth_f32(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_depth_f32(&bytes)
}

pub fn parse_depth_f32(bytes: &[u8]) -> Result<DepthMap> {
    if bytes.len() < 16 {
        return Err(Error::parse(bytes.len(), "truncated depth header"));
    }
    if &bytes[..8] != DEPTH_F32_MAGIC {
        return Err(Error::parse(0, "bad depth magic"));
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let need = 16 + w * h * 4;
    if bytes.len() < need {
        return Err(Error::parse(bytes.len(), format!("truncated depth payload, need {need} bytes")));
    }
    let data = bytes[16..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    DepthMap::from_vec(w, h, data)
}

/// Writes a boolean mask as a 1-bit grayscale PNG (set = white).
pub fn write_mask_png(path: impl AsRef<Path>, mask: &[bool], width: usize, height: usize) -> Result<()> {
    let stride = width.div_ceil(8);
    let mut data = vec![0u8; stride * height];
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                data[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    write_png(path.as_ref(), width, height, ColorType::Grayscale, BitDepth::One, &data)
}

/// Writes bytes to `path`, mapping failures to [`Error::Io`].
pub(crate) fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}
