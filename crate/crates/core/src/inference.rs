//! Euler integration of the learned velocity field, decoding and spectral
//! indices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::schedules::{Schedule, StepGrid};
use crate::tensor::{roles, ImageChip, LatentTensor};
use crate::velocity::VelocityField;

pub const INDEX_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub steps: usize,
    pub schedule: Schedule,
    pub index_eps: f64,
    /// Clamp decoded reflectance to [0, 1] before splitting and indices.
    pub clip_unit: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            schedule: Schedule::cosine(),
            index_eps: INDEX_EPS,
            clip_unit: false,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Domain(format!("inference needs at least 2 steps, got {}", self.steps)));
        }
        if !(self.index_eps > 0.0) {
            return Err(Error::Domain(format!("index_eps must be positive, got {}", self.index_eps)));
        }
        Ok(())
    }
}

/// Integrates `x' = v(x, z_src, s)` over the step grid starting at `z_src`.
/// The state is accumulated in f64 and handed to the model as f32.
pub fn translate(model: &dyn VelocityField, z_src: &LatentTensor, cfg: &InferConfig) -> Result<LatentTensor> {
    cfg.validate()?;
    let grid = StepGrid::for_schedule(&cfg.schedule, cfg.steps)?;
    let mut x: Vec<f64> = z_src.data().iter().map(|&v| v as f64).collect();
    let mut state = z_src.clone();
    for (i, (&s, &delta)) in grid.steps().iter().zip(grid.deltas()).enumerate() {
        let v = model.velocity(&state, z_src, s)?;
        z_src.check_compatible(&v)?;
        for (xi, &vi) in x.iter_mut().zip(v.data()) {
            *xi += vi as f64 * delta;
        }
        if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                format!("inference step {i}"),
                format!("state element {bad} is not finite"),
            ));
        }
        state = state.with_data(x.iter().map(|&v| v as f32).collect())?;
    }
    Ok(state)
}

/// `(rgb, nir)` views of an R, G, B, NIR chip.
pub fn split_channels(chip: &ImageChip) -> Result<(ImageChip, ImageChip)> {
    if chip.channels() != 4 {
        return Err(Error::Shape(format!(
            "expected 4 channels (R, G, B, NIR), got {}",
            chip.channels()
        )));
    }
    Ok((chip.select(0..3)?, chip.select(3..4)?))
}

fn normalized_difference(a: &[f32], b: &[f32], eps: f64) -> Result<Vec<f32>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("index inputs differ in size: {} vs {}", a.len(), b.len())));
    }
    Ok(a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x as f64, y as f64);
            ((x - y) / (x + y + eps)) as f32
        })
        .collect())
}

/// `(nir - red) / (nir + red + eps)`.
pub fn ndvi(nir: &[f32], red: &[f32], eps: f64) -> Result<Vec<f32>> {
    normalized_difference(nir, red, eps)
}

/// `(green - nir) / (green + nir + eps)`.
pub fn ndwi(green: &[f32], nir: &[f32], eps: f64) -> Result<Vec<f32>> {
    normalized_difference(green, nir, eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralViews {
    pub rgb: ImageChip,
    pub nir: ImageChip,
    pub ndvi: ImageChip,
    pub ndwi: ImageChip,
}

/// Splits a decoded optical chip and derives both indices.
pub fn spectral_views(optical: &ImageChip, eps: f64) -> Result<SpectralViews> {
    let (rgb, nir) = split_channels(optical)?;
    let (h, w) = (optical.height(), optical.width());
    let nd_v = ndvi(nir.channel(0), rgb.channel(0), eps)?;
    let nd_w = ndwi(rgb.channel(1), nir.channel(0), eps)?;
    Ok(SpectralViews {
        ndvi: ImageChip::new([roles::NDVI], h, w, nd_v)?,
        ndwi: ImageChip::new([roles::NDWI], h, w, nd_w)?,
        rgb,
        nir,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationResult {
    pub id: String,
    pub latent: LatentTensor,
    pub decoded: ImageChip,
    pub views: SpectralViews,
}

/// Encode, translate, decode, split and index every chip. Results come back
/// in input order; errors carry the chip id.
pub fn run_inference(
    model: &dyn VelocityField,
    codec_src: &dyn Codec,
    codec_dst: &dyn Codec,
    chips: &[(String, ImageChip)],
    cfg: &InferConfig,
) -> Result<Vec<TranslationResult>> {
    cfg.validate()?;
    if codec_src.tag() != codec_dst.tag() {
        return Err(Error::Tag {
            expected: codec_src.tag().to_string(),
            found: codec_dst.tag().to_string(),
        });
    }
    chips
        .par_iter()
        .map(|(id, chip)| {
            translate_chip(model, codec_src, codec_dst, id, chip, cfg).map_err(|e| e.with_chip(id.clone()))
        })
        .collect()
}

fn translate_chip(
    model: &dyn VelocityField,
    codec_src: &dyn Codec,
    codec_dst: &dyn Codec,
    id: &str,
    chip: &ImageChip,
    cfg: &InferConfig,
) -> Result<TranslationResult> {
    let z = codec_src.encode(chip)?;
    let latent = translate(model, &z, cfg)?;
    let mut decoded = codec_dst.decode(&latent)?;
    if cfg.clip_unit {
        decoded.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    let views = spectral_views(&decoded, cfg.index_eps)?;
    Ok(TranslationResult {
        id: id.to_string(),
        latent,
        decoded,
        views,
    })
}
