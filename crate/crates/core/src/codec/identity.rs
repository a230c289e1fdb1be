use super::{check_chip, check_latent, Codec};
use crate::error::{Error, Result};
use crate::tensor::{CodecKind, ImageChip, LatentTag, LatentTensor};

/// Passes pixels through unchanged. Channels beyond the input count are
/// zero on encode and dropped on decode, so a 2-channel and a 4-channel
/// identity codec can share one latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCodec {
    labels: Vec<String>,
    channels: usize,
}

impl IdentityCodec {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>, channels: usize) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() || channels < labels.len() {
            return Err(Error::Config(format!(
                "identity codec needs at least {} latent channels, got {channels}",
                labels.len()
            )));
        }
        Ok(Self { labels, channels })
    }
}

impl Codec for IdentityCodec {
    fn tag(&self) -> LatentTag {
        LatentTag {
            kind: CodecKind::Identity,
            channels: self.channels,
            spatial_factor: 1,
        }
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn encode(&self, chip: &ImageChip) -> Result<LatentTensor> {
        check_chip(self.tag(), &self.labels, chip)?;
        let mut data = chip.data().to_vec();
        data.resize(self.channels * chip.plane_len(), 0.0);
        LatentTensor::new(self.tag(), chip.height(), chip.width(), data)
    }

    fn decode(&self, z: &LatentTensor) -> Result<ImageChip> {
        check_latent(self.tag(), z)?;
        let n = self.labels.len() * z.height() * z.width();
        ImageChip::new(self.labels.clone(), z.height(), z.width(), z.data()[..n].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_through_and_padding() {
        let x = ImageChip::new(["a", "b"], 2, 2, (0..8).map(|v| v as f32).collect()).unwrap();
        let exact = IdentityCodec::new(["a", "b"], 2).unwrap();
        let z = exact.encode(&x).unwrap();
        assert_eq!(z.data(), x.data());
        assert_eq!(z.tag().kind, CodecKind::Identity);
        assert_eq!(exact.decode(&z).unwrap(), x);

        let padded = IdentityCodec::new(["a", "b"], 4).unwrap();
        let z = padded.encode(&x).unwrap();
        assert_eq!(z.shape(), (4, 2, 2));
        assert!(z.data()[8..].iter().all(|&v| v == 0.0));
        assert_eq!(padded.decode(&z).unwrap(), x);
        assert!(IdentityCodec::new(["a", "b"], 1).is_err());
    }
}
