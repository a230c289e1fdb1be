//! PNG renders of translated chips.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ImageChip;

/// Packed 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn unit_to_u8(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// R, G, B channels clipped to [0, 1] and quantized to 8 bits.
pub fn rgb_raster(rgb: &ImageChip) -> Result<Raster> {
    if rgb.channels() != 3 {
        return Err(Error::Shape(format!("rgb render needs 3 channels, got {}", rgb.channels())));
    }
    let n = rgb.plane_len();
    let mut pixels = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..3 {
            pixels.push(unit_to_u8(rgb.channel(c)[i]));
        }
    }
    Ok(Raster {
        width: rgb.width(),
        height: rgb.height(),
        pixels,
    })
}

const NEG: [f32; 3] = [0.0, 0.0, 255.0];
const MID: [f32; 3] = [255.0, 255.0, 255.0];
const POS: [f32; 3] = [0.0, 160.0, 0.0];

/// Diverging map: -1 blue, 0 white, +1 green; values outside [-1, 1] saturate.
pub fn diverging(v: f32) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    let (end, t) = if v < 0.0 { (NEG, -v) } else { (POS, v) };
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (MID[c] + (end[c] - MID[c]) * t).round() as u8;
    }
    out
}

pub fn index_raster(map: &ImageChip) -> Result<Raster> {
    if map.channels() != 1 {
        return Err(Error::Shape(format!("index render needs 1 channel, got {}", map.channels())));
    }
    Ok(Raster {
        width: map.width(),
        height: map.height(),
        pixels: map.data().iter().flat_map(|&v| diverging(v)).collect(),
    })
}

/// Places rasters left to right with a `gap`-pixel white separator.
pub fn side_by_side(parts: &[Raster], gap: usize) -> Result<Raster> {
    let height = parts.first().map(|r| r.height).unwrap_or(0);
    if parts.iter().any(|r| r.height != height) {
        return Err(Error::Shape("side-by-side renders need equal heights".into()));
    }
    let width = parts.iter().map(|r| r.width).sum::<usize>() + gap * parts.len().saturating_sub(1);
    let mut pixels = vec![255u8; 3 * width * height];
    let mut x0 = 0;
    for r in parts {
        for y in 0..height {
            let src = &r.pixels[3 * y * r.width..3 * (y + 1) * r.width];
            let start = 3 * (y * width + x0);
            pixels[start..start + src.len()].copy_from_slice(src);
        }
        x0 += r.width + gap;
    }
    Ok(Raster { width, height, pixels })
}

pub fn write_png(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), raster.width as u32, raster.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_source_srgb(png::SrgbRenderingIntent::Perceptual);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writer
        .write_image_data(&raster.pixels)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}
