//! Persistence and synthetic data generation.

mod cameras;
mod ply;
mod raster;
mod synth;

pub use cameras::{
    cameras_from_json, cameras_to_json, colmap_to_cameras, load_cameras, save_cameras, CameraRecord,
};
pub use ply::{load_ply, parse_ply, ply_bytes, save_ply};
pub use raster::{
    parse_depth_f32, read_depth_f32, read_depth_png16, read_png_rgb, write_depth_f32, write_depth_png16,
    write_mask_png, write_png_rgb, DEPTH_F32_MAGIC, DEPTH_PNG_SCALE,
};
pub use synth::{ring_cameras, synth_scene, SynthConfig, SyntheticScene};
