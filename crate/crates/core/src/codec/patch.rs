use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_chip, check_latent, depth_to_space, space_to_depth, Codec, LatentSpec};
use crate::error::{Error, Result};
use crate::tensor::{CodecKind, ImageChip, LatentTag, LatentTensor};

/// Space-to-depth followed by a fixed orthonormal channel projection.
///
/// With `channels >= C*f*f` the projection has orthonormal columns and decode
/// is an exact inverse; otherwise it has orthonormal rows and decode is the
/// least-squares reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCodec {
    labels: Vec<String>,
    spec: LatentSpec,
    seed: u64,
    /// Row-major `(channels, C*f*f)`.
    basis: Vec<f64>,
}

impl PatchCodec {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>, spec: LatentSpec, seed: u64) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        Self::check_spec(&labels, spec)?;
        let depth = labels.len() * spec.spatial_factor * spec.spatial_factor;
        let basis = orthonormal_basis(spec.channels, depth, seed);
        Ok(Self {
            labels,
            spec,
            seed,
            basis,
        })
    }

    pub(crate) fn from_basis(labels: Vec<String>, spec: LatentSpec, seed: u64, basis: Vec<f64>) -> Result<Self> {
        Self::check_spec(&labels, spec)?;
        let depth = labels.len() * spec.spatial_factor * spec.spatial_factor;
        if basis.len() != spec.channels * depth {
            return Err(Error::Parse(format!(
                "patch basis has {} values, expected {}",
                basis.len(),
                spec.channels * depth
            )));
        }
        Ok(Self {
            labels,
            spec,
            seed,
            basis,
        })
    }

    fn check_spec(labels: &[String], spec: LatentSpec) -> Result<()> {
        spec.validate()?;
        if spec.kind != CodecKind::Patch || labels.is_empty() {
            return Err(Error::Config(format!("not a patch codec spec: {spec:?}")));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn basis_shape(&self) -> (usize, usize) {
        (self.spec.channels, self.depth())
    }

    fn depth(&self) -> usize {
        self.labels.len() * self.spec.spatial_factor * self.spec.spatial_factor
    }

    /// True when decode inverts encode exactly.
    pub fn is_lossless(&self) -> bool {
        self.spec.channels >= self.depth()
    }
}

/// `rows x cols` matrix with orthonormal columns (rows >= cols) or rows.
fn orthonormal_basis(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let (n, k) = (rows.max(cols), rows.min(cols));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(k);
    while vecs.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        // two Gram-Schmidt passes keep orthogonality at machine precision
        for _ in 0..2 {
            for u in &vecs {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            vecs.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut m = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            m[r * cols + c] = if rows >= cols { vecs[c][r] } else { vecs[r][c] };
        }
    }
    m
}

impl Codec for PatchCodec {
    fn tag(&self) -> LatentTag {
        self.spec.tag()
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn encode(&self, chip: &ImageChip) -> Result<LatentTensor> {
        check_chip(self.tag(), &self.labels, chip)?;
        let (c, h, w) = chip.shape();
        let f = self.spec.spatial_factor;
        let depth = self.depth();
        let plane = (h / f) * (w / f);
        let stacked = space_to_depth(chip.data(), c, h, w, f);
        let mut out = vec![0.0f32; self.spec.channels * plane];
        let mut acc = vec![0.0f64; plane];
        for o in 0..self.spec.channels {
            acc.fill(0.0);
            let row = &self.basis[o * depth..(o + 1) * depth];
            for (j, &q) in row.iter().enumerate() {
                let src = &stacked[j * plane..(j + 1) * plane];
                acc.iter_mut().zip(src).for_each(|(a, &s)| *a += q * s as f64);
            }
            out[o * plane..(o + 1) * plane]
                .iter_mut()
                .zip(&acc)
                .for_each(|(d, &a)| *d = a as f32);
        }
        LatentTensor::new(self.tag(), h / f, w / f, out)
    }

    fn decode(&self, z: &LatentTensor) -> Result<ImageChip> {
        check_latent(self.tag(), z)?;
        let f = self.spec.spatial_factor;
        let depth = self.depth();
        let (hz, wz) = (z.height(), z.width());
        let plane = hz * wz;
        let mut stacked = vec![0.0f32; depth * plane];
        let mut acc = vec![0.0f64; plane];
        for j in 0..depth {
            acc.fill(0.0);
            for o in 0..self.spec.channels {
                let q = self.basis[o * depth + j];
                let src = &z.data()[o * plane..(o + 1) * plane];
                acc.iter_mut().zip(src).for_each(|(a, &s)| *a += q * s as f64);
            }
            stacked[j * plane..(j + 1) * plane]
                .iter_mut()
                .zip(&acc)
                .for_each(|(d, &a)| *d = a as f32);
        }
        let c = self.labels.len();
        let data = depth_to_space(&stacked, c, hz * f, wz * f, f);
        ImageChip::new(self.labels.clone(), hz * f, wz * f, data)
    }
}
