//! Image chips and latent tensors.
//!
//! Both store channel-major (C, H, W) `f32` payloads. Arithmetic that needs
//! more precision widens to `f64` at the use site.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod roles {
    pub const VV: &str = "VV";
    pub const VH: &str = "VH";
    pub const RED: &str = "R";
    pub const GREEN: &str = "G";
    pub const BLUE: &str = "B";
    pub const NIR: &str = "NIR";
    pub const NDVI: &str = "NDVI";
    pub const NDWI: &str = "NDWI";

    pub const RADAR: [&str; 2] = [VV, VH];
    pub const OPTICAL: [&str; 4] = [RED, GREEN, BLUE, NIR];
}

/// A channel-major image tile with a role label per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageChip {
    labels: Vec<String>,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageChip {
    pub fn new<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "chip needs at least one channel and non-zero extent, got {}x{}x{}",
                labels.len(),
                height,
                width
            )));
        }
        let expected = labels.len() * height * width;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "payload holds {} values, shape {}x{}x{} needs {}",
                data.len(),
                labels.len(),
                height,
                width,
                expected
            )));
        }
        Ok(Self {
            labels,
            height,
            width,
            data,
        })
    }

    pub fn filled<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
        height: usize,
        width: usize,
        value: f32,
    ) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let n = labels.len() * height * width;
        Self::new(labels, height, width, vec![value; n])
    }

    pub fn channels(&self) -> usize {
        self.labels.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels(), self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Copies channels `range` into a new chip.
    pub fn select(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.channels() {
            return Err(Error::Shape(format!(
                "channel range {:?} outside 0..{}",
                range,
                self.channels()
            )));
        }
        let n = self.plane_len();
        Self::new(
            self.labels[range.clone()].iter().cloned(),
            self.height,
            self.width,
            self.data[range.start * n..range.end * n].to_vec(),
        )
    }

    /// Stacks `other`'s channels after this chip's.
    pub fn concat(&self, other: &ImageChip) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape(format!(
                "cannot concatenate {}x{} with {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new(labels, self.height, self.width, data)
    }

    pub(crate) fn map_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            labels: self.labels.clone(),
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Which codec family produced a latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Identity,
    Patch,
    Vq,
}

impl fmt::Display for CodecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodecKind::Identity => "identity",
            CodecKind::Patch => "patch",
            CodecKind::Vq => "vq",
        })
    }
}

/// Identity of a latent space: the codec family and its latent geometry.
///
/// The radar and optical codecs of one experiment share a tag, which is what
/// makes `z_optical - z_radar` meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentTag {
    pub kind: CodecKind,
    pub channels: usize,
    pub spatial_factor: usize,
}

impl fmt::Display for LatentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[c={},f={}]", self.kind, self.channels, self.spatial_factor)
    }
}

/// A (c, h, w) latent array tagged with the latent space it lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    tag: LatentTag,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl LatentTensor {
    pub fn new(tag: LatentTag, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = tag.channels * height * width;
        if data.len() != expected || expected == 0 {
            return Err(Error::Shape(format!(
                "latent payload holds {} values, shape {}x{}x{} needs {}",
                data.len(),
                tag.channels,
                height,
                width,
                expected
            )));
        }
        Ok(Self {
            tag,
            height,
            width,
            data,
        })
    }

    pub fn zeros(tag: LatentTag, height: usize, width: usize) -> Self {
        Self {
            tag,
            height,
            width,
            data: vec![0.0; tag.channels * height * width],
        }
    }

    pub fn tag(&self) -> LatentTag {
        self.tag
    }

    pub fn channels(&self) -> usize {
        self.tag.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.tag.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same tag and geometry, new payload.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.tag, self.height, self.width, data)
    }

    /// Fails unless `other` has the same tag and geometry.
    pub fn check_compatible(&self, other: &LatentTensor) -> Result<()> {
        if self.tag != other.tag {
            return Err(Error::Tag {
                expected: self.tag.to_string(),
                found: other.tag.to_string(),
            });
        }
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "latent shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &LatentTensor) -> Result<Self> {
        self.check_compatible(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        self.with_data(data)
    }

    pub fn max_abs_diff(&self, other: &LatentTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs())
            .fold(0.0, f64::max)
    }

    /// Reinterprets the latent as a chip with generic labels.
    pub fn to_chip(&self) -> ImageChip {
        let labels = (0..self.channels()).map(|c| format!("z{c}"));
        ImageChip::new(labels, self.height, self.width, self.data.clone())
            .expect("latent geometry is valid")
    }
}
