//! Image <-> latent codecs.
//!
//! All three codecs work on `(C, H, W)` chips and produce
//! `(channels, H/f, W/f)` latents. Radar and optical codecs of one
//! experiment are built from the same [`LatentSpec`] so their latents share a
//! [`LatentTag`] and can be subtracted.

mod identity;
mod patch;
mod vq;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::TensorArchive;
use crate::error::{Error, Result};
use crate::tensor::{CodecKind, ImageChip, LatentTag, LatentTensor};

pub use identity::IdentityCodec;
pub use patch::PatchCodec;
pub use vq::{train_vq, VqCodec, VqConfig, VqTrainConfig, VqTrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatentSpec {
    pub channels: usize,
    pub spatial_factor: usize,
    pub kind: CodecKind,
}

impl Default for LatentSpec {
    fn default() -> Self {
        Self {
            channels: 16,
            spatial_factor: 2,
            kind: CodecKind::Patch,
        }
    }
}

impl LatentSpec {
    pub fn tag(&self) -> LatentTag {
        LatentTag {
            kind: self.kind,
            channels: self.channels,
            spatial_factor: self.spatial_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.spatial_factor == 0 {
            return Err(Error::Config(format!(
                "latent spec needs positive channels and factor, got {self:?}"
            )));
        }
        if self.kind == CodecKind::Identity && self.spatial_factor != 1 {
            return Err(Error::Config("identity codec requires spatial_factor 1".into()));
        }
        Ok(())
    }
}

pub trait Codec: Send + Sync {
    fn tag(&self) -> LatentTag;

    /// Channel labels of the images this codec accepts and reproduces.
    fn labels(&self) -> &[String];

    fn encode(&self, chip: &ImageChip) -> Result<LatentTensor>;

    fn decode(&self, z: &LatentTensor) -> Result<ImageChip>;

    fn input_channels(&self) -> usize {
        self.labels().len()
    }
}

pub(crate) fn check_chip(tag: LatentTag, labels: &[String], chip: &ImageChip) -> Result<()> {
    let f = tag.spatial_factor;
    if chip.channels() != labels.len() {
        return Err(Error::Shape(format!(
            "{tag} codec expects {} input channels, got {}",
            labels.len(),
            chip.channels()
        )));
    }
    if chip.height() % f != 0 || chip.width() % f != 0 {
        return Err(Error::Shape(format!(
            "chip {}x{} is not divisible by spatial factor {f}",
            chip.height(),
            chip.width()
        )));
    }
    Ok(())
}

pub(crate) fn check_latent(tag: LatentTag, z: &LatentTensor) -> Result<()> {
    if z.tag() != tag {
        return Err(Error::Tag {
            expected: tag.to_string(),
            found: z.tag().to_string(),
        });
    }
    Ok(())
}

/// `(c, h, w)` -> `(c*f*f, h/f, w/f)`; output channel `c*f*f + dy*f + dx`.
pub fn space_to_depth(data: &[f32], c: usize, h: usize, w: usize, f: usize) -> Vec<f32> {
    let (ho, wo) = (h / f, w / f);
    let mut out = vec![0.0; data.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let oc = ch * f * f + (y % f) * f + (x % f);
                out[(oc * ho + y / f) * wo + x / f] = data[(ch * h + y) * w + x];
            }
        }
    }
    out
}

pub fn depth_to_space(data: &[f32], c: usize, h: usize, w: usize, f: usize) -> Vec<f32> {
    let (ho, wo) = (h / f, w / f);
    let mut out = vec![0.0; data.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let oc = ch * f * f + (y % f) * f + (x % f);
                out[(ch * h + y) * w + x] = data[(oc * ho + y / f) * wo + x / f];
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyCodec {
    Identity(IdentityCodec),
    Patch(PatchCodec),
    Vq(VqCodec),
}

impl AnyCodec {
    /// Builds an untrained codec of `spec.kind` for images with `labels`.
    pub fn build<S: Into<String>>(
        spec: LatentSpec,
        labels: impl IntoIterator<Item = S>,
        seed: u64,
    ) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        Ok(match spec.kind {
            CodecKind::Identity => AnyCodec::Identity(IdentityCodec::new(labels, spec.channels)?),
            CodecKind::Patch => AnyCodec::Patch(PatchCodec::new(labels, spec, seed)?),
            CodecKind::Vq => AnyCodec::Vq(VqCodec::new(
                labels,
                spec,
                VqConfig {
                    seed,
                    ..VqConfig::default()
                },
            )?),
        })
    }

    fn inner(&self) -> &dyn Codec {
        match self {
            AnyCodec::Identity(c) => c,
            AnyCodec::Patch(c) => c,
            AnyCodec::Vq(c) => c,
        }
    }

    pub fn spec(&self) -> LatentSpec {
        let tag = self.tag();
        LatentSpec {
            channels: tag.channels,
            spatial_factor: tag.spatial_factor,
            kind: tag.kind,
        }
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut meta = json!({
            "format": "latentflow-codec",
            "spec": self.spec(),
            "labels": self.labels(),
        });
        let mut archive = TensorArchive::default();
        match self {
            AnyCodec::Identity(_) => {}
            AnyCodec::Patch(c) => {
                meta["seed"] = json!(c.seed());
                let (rows, cols) = c.basis_shape();
                archive.push_f64("basis", &[rows, cols], c.basis().to_vec());
            }
            AnyCodec::Vq(c) => {
                meta["vq"] = json!(c.config());
                for (name, values) in c.params().named() {
                    let shape = &c.params().entry(name).unwrap().shape;
                    archive.push_f32(name, shape, values.to_vec());
                }
            }
        }
        archive.meta = meta;
        archive
    }

    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        let meta = &archive.meta;
        if meta.get("format").and_then(|v| v.as_str()) != Some("latentflow-codec") {
            return Err(Error::Parse("archive does not hold a codec".into()));
        }
        let field = |key: &str| {
            meta.get(key)
                .cloned()
                .ok_or_else(|| Error::Parse(format!("codec archive is missing `{key}`")))
        };
        let parse_err = |e: serde_json::Error| Error::Parse(format!("codec archive: {e}"));
        let spec: LatentSpec = serde_json::from_value(field("spec")?).map_err(parse_err)?;
        let labels: Vec<String> = serde_json::from_value(field("labels")?).map_err(parse_err)?;
        spec.validate()?;
        match spec.kind {
            CodecKind::Identity => Ok(AnyCodec::Identity(IdentityCodec::new(labels, spec.channels)?)),
            CodecKind::Patch => {
                let seed: u64 = serde_json::from_value(field("seed")?).map_err(parse_err)?;
                let basis = archive.f64("basis")?.to_vec();
                Ok(AnyCodec::Patch(PatchCodec::from_basis(labels, spec, seed, basis)?))
            }
            CodecKind::Vq => {
                let cfg: VqConfig = serde_json::from_value(field("vq")?).map_err(parse_err)?;
                let mut codec = VqCodec::new(labels, spec, cfg)?;
                let names: Vec<String> = codec.params().entries().iter().map(|e| e.name.clone()).collect();
                for name in names {
                    let stored = archive.f32(&name)?;
                    let slot = codec.params_mut().get_mut(&name).unwrap();
                    if slot.len() != stored.len() {
                        return Err(Error::Parse(format!(
                            "codec tensor {name} has {} values, expected {}",
                            stored.len(),
                            slot.len()
                        )));
                    }
                    slot.copy_from_slice(stored);
                }
                Ok(AnyCodec::Vq(codec))
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(path)?)
    }
}

impl Codec for AnyCodec {
    fn tag(&self) -> LatentTag {
        self.inner().tag()
    }

    fn labels(&self) -> &[String] {
        self.inner().labels()
    }

    fn encode(&self, chip: &ImageChip) -> Result<LatentTensor> {
        self.inner().encode(chip)
    }

    fn decode(&self, z: &LatentTensor) -> Result<ImageChip> {
        self.inner().decode(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::roles;

    fn chip(c: usize, h: usize, w: usize, seed: u32) -> ImageChip {
        let labels: Vec<String> = (0..c).map(|i| format!("c{i}")).collect();
        let data = (0..c * h * w).map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) % 1000) as f32 / 1000.0).collect();
        ImageChip::new(labels, h, w, data).unwrap()
    }

    #[test]
    fn space_to_depth_inverts() {
        let x = chip(3, 4, 6, 1);
        let d = space_to_depth(x.data(), 3, 4, 6, 2);
        assert_eq!(depth_to_space(&d, 3, 4, 6, 2), x.data());
        // pixel (0, 1, 0) of channel 0 goes to depth channel dy*f+dx = 2
        assert_eq!(d[2 * 6], x.get(0, 1, 0));
    }

    #[test]
    fn archive_round_trip_for_all_kinds() {
        for kind in [CodecKind::Identity, CodecKind::Patch, CodecKind::Vq] {
            let spec = LatentSpec {
                kind,
                spatial_factor: if kind == CodecKind::Identity { 1 } else { 2 },
                ..LatentSpec::default()
            };
            let codec = AnyCodec::build(spec, roles::OPTICAL, 3).unwrap();
            let back = AnyCodec::from_archive(&TensorArchive::from_bytes(&codec.to_archive().to_bytes()).unwrap()).unwrap();
            assert_eq!(back, codec);
            let x = chip(4, 8, 8, 5);
            let x = ImageChip::new(roles::OPTICAL, 8, 8, x.into_data()).unwrap();
            assert_eq!(back.encode(&x).unwrap(), codec.encode(&x).unwrap());
        }
    }

    #[test]
    fn shape_and_tag_errors() {
        let spec = LatentSpec::default();
        let radar = AnyCodec::build(spec, roles::RADAR, 0).unwrap();
        assert!(matches!(radar.encode(&chip(3, 8, 8, 0)), Err(Error::Shape(_))));
        let odd = ImageChip::new(roles::RADAR, 7, 8, vec![0.0; 2 * 56]).unwrap();
        assert!(matches!(radar.encode(&odd), Err(Error::Shape(_))));
        let other = LatentTensor::zeros(
            LatentTag {
                kind: CodecKind::Vq,
                channels: 16,
                spatial_factor: 2,
            },
            4,
            4,
        );
        assert!(matches!(radar.decode(&other), Err(Error::Tag { .. })));
    }
}
