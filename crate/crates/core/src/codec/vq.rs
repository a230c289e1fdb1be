use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_chip, check_latent, depth_to_space, space_to_depth, Codec, LatentSpec};
use crate::error::{Error, Result};
use crate::nn::{silu, silu_backward, Adam, AdamConfig, Conv2d, Fmap, Params, Slot};
use crate::tensor::{CodecKind, ImageChip, LatentTag, LatentTensor};
use crate::velocity::uniform_init;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqConfig {
    pub hidden: usize,
    pub num_codes: usize,
    /// Commitment weight.
    pub beta: f64,
    pub seed: u64,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            num_codes: 64,
            beta: 0.25,
            seed: 0,
        }
    }
}

/// Small vector-quantized autoencoder.
///
/// Encoder: space-to-depth, 3x3 conv, SiLU, 1x1 conv to the latent width.
/// Decoder: 3x3 conv, SiLU, 3x3 conv, depth-to-space.
#[derive(Debug, Clone, PartialEq)]
pub struct VqCodec {
    labels: Vec<String>,
    spec: LatentSpec,
    config: VqConfig,
    params: Params<f32>,
    enc1: Conv2d,
    enc2: Conv2d,
    dec1: Conv2d,
    dec2: Conv2d,
    codebook: Slot,
}

struct Trace {
    target: Vec<f32>,
    cols1: Vec<f32>,
    pre1: Vec<f32>,
    cols2: Vec<f32>,
    z_e: Vec<f32>,
    idx: Vec<usize>,
    z_q: Vec<f32>,
    cols3: Vec<f32>,
    pre3: Vec<f32>,
    cols4: Vec<f32>,
    recon: Vec<f32>,
    h: usize,
    w: usize,
}

impl VqCodec {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>, spec: LatentSpec, config: VqConfig) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        spec.validate()?;
        if spec.kind != CodecKind::Vq || labels.is_empty() {
            return Err(Error::Config(format!("not a vq codec spec: {spec:?}")));
        }
        if config.hidden == 0 || config.num_codes == 0 || !(config.beta >= 0.0) {
            return Err(Error::Config(format!("invalid vq config {config:?}")));
        }
        let depth = labels.len() * spec.spatial_factor * spec.spatial_factor;
        let (hid, l) = (config.hidden, spec.channels);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Params::new();
        let enc1 = Conv2d::register(&mut params, "enc1", depth, hid, 3, uniform_init(&mut rng, depth * 9));
        let enc2 = Conv2d::register(&mut params, "enc2", hid, l, 1, uniform_init(&mut rng, hid));
        let dec1 = Conv2d::register(&mut params, "dec1", l, hid, 3, uniform_init(&mut rng, l * 9));
        let dec2 = Conv2d::register(&mut params, "dec2", hid, depth, 3, uniform_init(&mut rng, hid * 9));
        let codebook = params.add("codebook", &[config.num_codes, l], || rng.random_range(-0.5f32..0.5));
        Ok(Self {
            labels,
            spec,
            config,
            params,
            enc1,
            enc2,
            dec1,
            dec2,
            codebook,
        })
    }

    pub fn config(&self) -> &VqConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<f32> {
        &mut self.params
    }

    /// Row-major `(num_codes, channels)`.
    pub fn codebook(&self) -> &[f32] {
        self.codebook.of(self.params.flat())
    }

    pub fn codebook_mut(&mut self) -> &mut [f32] {
        self.codebook.of_mut(self.params.flat_mut())
    }

    fn depth(&self) -> usize {
        self.labels.len() * self.spec.spatial_factor * self.spec.spatial_factor
    }

    fn stack(&self, chip: &ImageChip) -> Fmap<f32> {
        let (c, h, w) = chip.shape();
        let f = self.spec.spatial_factor;
        Fmap::new(c * f * f, h / f, w / f, space_to_depth(chip.data(), c, h, w, f))
    }

    /// Encoder output before quantization.
    pub fn encode_continuous(&self, chip: &ImageChip) -> Result<LatentTensor> {
        check_chip(self.tag(), &self.labels, chip)?;
        let x = self.stack(chip);
        let (h, w) = (x.h, x.w);
        let (z, ..) = self.encoder(&x);
        LatentTensor::new(self.tag(), h, w, z.data)
    }

    fn encoder(&self, x: &Fmap<f32>) -> (Fmap<f32>, Vec<f32>, Vec<f32>, Vec<f32>) {
        let p = self.params.flat();
        let (pre1, cols1) = self.enc1.forward(p, x);
        let a1 = Fmap::new(pre1.c, pre1.h, pre1.w, silu(&pre1.data));
        let (z, cols2) = self.enc2.forward(p, &a1);
        (z, cols1, pre1.data, cols2)
    }

    fn decoder(&self, z: &Fmap<f32>) -> (Fmap<f32>, Vec<f32>, Vec<f32>, Vec<f32>) {
        let p = self.params.flat();
        let (pre3, cols3) = self.dec1.forward(p, z);
        let a3 = Fmap::new(pre3.c, pre3.h, pre3.w, silu(&pre3.data));
        let (y, cols4) = self.dec2.forward(p, &a3);
        (y, cols3, pre3.data, cols4)
    }

    /// Nearest code index per latent pixel, and the quantized latent.
    fn nearest(&self, z: &[f32], plane: usize) -> (Vec<usize>, Vec<f32>) {
        let l = self.spec.channels;
        let book = self.codebook();
        let mut idx = Vec::with_capacity(plane);
        let mut zq = vec![0.0; z.len()];
        let mut v = vec![0.0f32; l];
        for p in 0..plane {
            for (c, vc) in v.iter_mut().enumerate() {
                *vc = z[c * plane + p];
            }
            let mut best = (f32::INFINITY, 0);
            for (k, code) in book.chunks_exact(l).enumerate() {
                let d: f32 = code.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
            idx.push(best.1);
            for c in 0..l {
                zq[c * plane + p] = book[best.1 * l + c];
            }
        }
        (idx, zq)
    }

    /// Replaces every latent pixel by its nearest code.
    pub fn quantize(&self, z: &LatentTensor) -> Result<LatentTensor> {
        check_latent(self.tag(), z)?;
        let (_, zq) = self.nearest(z.data(), z.height() * z.width());
        z.with_data(zq)
    }

    /// Forward pass; without `quantize` the decoder sees the raw encoder output.
    fn trace(&self, chip: &ImageChip, quantize: bool) -> Trace {
        let x = self.stack(chip);
        let (h, w) = (x.h, x.w);
        let (z, cols1, pre1, cols2) = self.encoder(&x);
        let (idx, z_q) = if quantize {
            self.nearest(&z.data, h * w)
        } else {
            (Vec::new(), z.data.clone())
        };
        let (y, cols3, pre3, cols4) = self.decoder(&Fmap::new(z.c, h, w, z_q.clone()));
        Trace {
            target: x.data,
            cols1,
            pre1,
            cols2,
            z_e: z.data,
            idx,
            z_q,
            cols3,
            pre3,
            cols4,
            recon: y.data,
            h,
            w,
        }
    }

    /// Loss and parameter gradient for one chip, gradients scaled by `scale`.
    fn sample_grad(&self, chip: &ImageChip, scale: f32, quantize: bool) -> (f64, Vec<f32>, Vec<usize>) {
        let t = self.trace(chip, quantize);
        let p = self.params.flat();
        let mut g = vec![0.0f32; p.len()];
        let (h, w) = (t.h, t.w);
        let (l, hid, depth) = (self.spec.channels, self.config.hidden, self.depth());
        let (nx, nz) = (t.target.len() as f64, t.z_e.len() as f64);
        let recon: f64 = t
            .recon
            .iter()
            .zip(&t.target)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / nx;
        let commit: f64 = t
            .z_e
            .iter()
            .zip(&t.z_q)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / nz;
        let beta = self.config.beta;
        let loss = recon + (1.0 + beta) * commit;

        let kx = (2.0 / nx) as f32 * scale;
        let dy = Fmap::new(
            depth,
            h,
            w,
            t.recon.iter().zip(&t.target).map(|(a, b)| kx * (a - b)).collect(),
        );
        let mut da3 = self.dec2.backward(p, &mut g, &t.cols4, &dy, true).unwrap();
        silu_backward(&t.pre3, &mut da3.data);
        let dzq = self.dec1.backward(p, &mut g, &t.cols3, &Fmap::new(hid, h, w, da3.data), true).unwrap();

        // straight-through: the decoder gradient passes to z_e unchanged
        let kz = (2.0 / nz) as f32 * scale;
        let kb = kz * beta as f32;
        let dze: Vec<f32> = dzq
            .data
            .iter()
            .zip(t.z_e.iter().zip(&t.z_q))
            .map(|(d, (e, q))| d + kb * (e - q))
            .collect();
        let plane = h * w;
        let gb = self.codebook.of_mut(&mut g);
        for (px, &k) in t.idx.iter().enumerate() {
            for c in 0..l {
                let i = c * plane + px;
                gb[k * l + c] += kz * (t.z_q[i] - t.z_e[i]);
            }
        }
        let mut da1 = self.enc2.backward(p, &mut g, &t.cols2, &Fmap::new(l, h, w, dze), true).unwrap();
        silu_backward(&t.pre1, &mut da1.data);
        self.enc1.backward(p, &mut g, &t.cols1, &Fmap::new(hid, h, w, da1.data), false);
        (loss, g, t.idx)
    }

    /// Mean squared reconstruction error of `decode(encode(x))`.
    pub fn reconstruction_mse(&self, chips: &[ImageChip]) -> Result<f64> {
        if chips.is_empty() {
            return Err(Error::Domain("no chips to evaluate".into()));
        }
        let per: Vec<f64> = chips
            .par_iter()
            .map(|c| {
                let back = self.decode(&self.encode(c)?)?;
                Ok(mean_sq_diff(back.data(), c.data()))
            })
            .collect::<Result<_>>()?;
        Ok(per.iter().sum::<f64>() / per.len() as f64)
    }

    /// Encoder outputs of `chips` as rows of length `channels`.
    fn pixel_vectors(&self, chips: &[ImageChip]) -> Vec<Vec<f32>> {
        let l = self.spec.channels;
        let mut out = Vec::new();
        for chip in chips {
            let (z, ..) = self.encoder(&self.stack(chip));
            let plane = z.h * z.w;
            for p in 0..plane {
                out.push((0..l).map(|c| z.data[c * plane + p]).collect());
            }
        }
        out
    }

    /// k-means++ seeding plus Lloyd iterations over a sample of encoder outputs.
    fn init_codebook(&mut self, chips: &[ImageChip], rng: &mut ChaCha8Rng) {
        const MAX_POINTS: usize = 8192;
        const LLOYD_ITERS: usize = 10;
        let (k, l) = (self.config.num_codes, self.spec.channels);
        let mut points = self.pixel_vectors(chips);
        points.shuffle(rng);
        points.truncate(MAX_POINTS);
        let dist = |a: &[f32], b: &[f32]| -> f64 { a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum() };
        let mut centers: Vec<Vec<f32>> = vec![points[rng.random_range(0..points.len())].clone()];
        let mut d2: Vec<f64> = points.iter().map(|p| dist(p, &centers[0])).collect();
        while centers.len() < k {
            let total: f64 = d2.iter().sum();
            let next = if total <= 0.0 {
                // fewer distinct points than codes: jitter an existing one
                let base = &centers[rng.random_range(0..centers.len())];
                base.iter().map(|v| v + rng.random_range(-1e-3f32..1e-3)).collect()
            } else {
                let mut r = rng.random::<f64>() * total;
                let mut pick = points.len() - 1;
                for (i, d) in d2.iter().enumerate() {
                    if r < *d {
                        pick = i;
                        break;
                    }
                    r -= d;
                }
                points[pick].clone()
            };
            for (d, p) in d2.iter_mut().zip(&points) {
                *d = d.min(dist(p, &next));
            }
            centers.push(next);
        }
        for _ in 0..LLOYD_ITERS {
            let mut sums = vec![vec![0.0f64; l]; k];
            let mut counts = vec![0usize; k];
            for p in &points {
                let best = (0..k)
                    .min_by(|&a, &b| dist(p, &centers[a]).total_cmp(&dist(p, &centers[b])))
                    .unwrap();
                counts[best] += 1;
                sums[best].iter_mut().zip(p).for_each(|(s, v)| *s += *v as f64);
            }
            for j in 0..k {
                if counts[j] > 0 {
                    centers[j] = sums[j].iter().map(|s| (s / counts[j] as f64) as f32).collect();
                }
            }
        }
        let book = self.codebook_mut();
        for (j, c) in centers.iter().enumerate() {
            book[j * l..(j + 1) * l].copy_from_slice(c);
        }
        self.separate_duplicates(rng);
    }

    /// Nudges any code that exactly repeats an earlier one.
    fn separate_duplicates(&mut self, rng: &mut ChaCha8Rng) {
        let l = self.spec.channels;
        let k = self.config.num_codes;
        let book = self.codebook_mut();
        for j in 1..k {
            while (0..j).any(|i| book[i * l..(i + 1) * l] == book[j * l..(j + 1) * l]) {
                for v in &mut book[j * l..(j + 1) * l] {
                    *v += rng.random_range(-1e-3f32..1e-3);
                }
            }
        }
    }
}

fn mean_sq_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64
}

impl Codec for VqCodec {
    fn tag(&self) -> LatentTag {
        self.spec.tag()
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn encode(&self, chip: &ImageChip) -> Result<LatentTensor> {
        let z = self.encode_continuous(chip)?;
        let (_, zq) = self.nearest(z.data(), z.height() * z.width());
        z.with_data(zq)
    }

    fn decode(&self, z: &LatentTensor) -> Result<ImageChip> {
        check_latent(self.tag(), z)?;
        let (hz, wz) = (z.height(), z.width());
        let (y, ..) = self.decoder(&Fmap::new(z.channels(), hz, wz, z.data().to_vec()));
        let f = self.spec.spatial_factor;
        let c = self.labels.len();
        let data = depth_to_space(&y.data, c, hz * f, wz * f, f);
        ImageChip::new(self.labels.clone(), hz * f, wz * f, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 2e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VqTrainReport {
    /// Mean training loss per epoch (reconstruction + codebook + commitment).
    pub train_loss: Vec<f64>,
    /// Held-out reconstruction MSE after each epoch; empty without held-out chips.
    pub held_out_mse: Vec<f64>,
    /// Unused codes re-seeded from encoder outputs after each epoch.
    pub codes_reset: Vec<usize>,
}

/// Trains the codec in place with Adam and a straight-through estimator.
pub fn train_vq(
    codec: &mut VqCodec,
    train: &[ImageChip],
    held_out: &[ImageChip],
    cfg: &VqTrainConfig,
) -> Result<VqTrainReport> {
    let mut report = VqTrainReport::default();
    if cfg.epochs == 0 {
        return Ok(report);
    }
    let first = train
        .first()
        .ok_or_else(|| Error::Domain("vq training needs at least one chip".into()))?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    for chip in train.iter().chain(held_out) {
        check_chip(codec.tag(), &codec.labels, chip)?;
        if chip.shape() != first.shape() {
            return Err(Error::Shape(format!(
                "vq training needs uniform chips, got {:?} and {:?}",
                first.shape(),
                chip.shape()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::<f32>::new(AdamConfig::default(), codec.params.len());
    let k = codec.config.num_codes;
    for epoch in 0..cfg.epochs {
        // the first epoch trains a plain autoencoder; the codebook is then
        // seeded from the warmed-up encoder
        let quantize = epoch > 0;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut usage = vec![0usize; k];
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f32;
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| codec.sample_grad(&train[i], scale, quantize))
                .collect();
            let mut grads = vec![0.0f32; codec.params.len()];
            for (loss, g, idx) in results {
                if !loss.is_finite() {
                    return Err(Error::numeric(
                        "vq training",
                        format!("non-finite loss at epoch {epoch}, batch {b}"),
                    ));
                }
                loss_sum += loss;
                grads.iter_mut().zip(&g).for_each(|(a, v)| *a += v);
                idx.iter().for_each(|&j| usage[j] += 1);
            }
            opt.update(codec.params.flat_mut(), &grads, cfg.lr)?;
        }
        report.train_loss.push(loss_sum / train.len() as f64);

        if !quantize {
            codec.init_codebook(train, &mut rng);
        }
        let dead: Vec<usize> = if quantize {
            (0..k).filter(|&j| usage[j] == 0).collect()
        } else {
            Vec::new()
        };
        if !dead.is_empty() {
            let l = codec.spec.channels;
            let sample: Vec<ImageChip> = (0..dead.len().min(8))
                .map(|_| train[rng.random_range(0..train.len())].clone())
                .collect();
            let pool = codec.pixel_vectors(&sample);
            for &j in &dead {
                let src = &pool[rng.random_range(0..pool.len())];
                codec.codebook_mut()[j * l..(j + 1) * l].copy_from_slice(src);
            }
            codec.separate_duplicates(&mut rng);
        }
        report.codes_reset.push(dead.len());
        if !held_out.is_empty() {
            report.held_out_mse.push(codec.reconstruction_mse(held_out)?);
        }
        log::debug!(
            "vq epoch {epoch}: loss {:.6} held-out {:?} reset {}",
            report.train_loss[epoch],
            report.held_out_mse.last(),
            dead.len()
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::roles;

    fn spec() -> LatentSpec {
        LatentSpec {
            kind: CodecKind::Vq,
            ..LatentSpec::default()
        }
    }

    fn small_chip(seed: u32) -> ImageChip {
        let data = (0..2 * 8 * 8)
            .map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) % 997) as f32 / 997.0)
            .collect();
        ImageChip::new(roles::RADAR, 8, 8, data).unwrap()
    }

    #[test]
    fn encode_returns_codebook_rows() {
        let codec = VqCodec::new(roles::RADAR, spec(), VqConfig::default()).unwrap();
        let z = codec.encode(&small_chip(1)).unwrap();
        assert_eq!(z.shape(), (16, 4, 4));
        let plane = 16;
        let book = codec.codebook();
        for p in 0..plane {
            let v: Vec<f32> = (0..16).map(|c| z.data()[c * plane + p]).collect();
            assert!(book.chunks_exact(16).any(|row| row == v.as_slice()));
        }
    }

    #[test]
    fn quantize_is_idempotent() {
        let codec = VqCodec::new(roles::RADAR, spec(), VqConfig::default()).unwrap();
        let ze = codec.encode_continuous(&small_chip(2)).unwrap();
        let once = codec.quantize(&ze).unwrap();
        assert_eq!(codec.quantize(&once).unwrap(), once);
    }

    #[test]
    fn exact_codes_add_no_quantization_error() {
        let mut codec = VqCodec::new(roles::RADAR, spec(), VqConfig::default()).unwrap();
        let x = small_chip(3);
        let ze = codec.encode_continuous(&x).unwrap();
        let plane = 16;
        let book = codec.codebook_mut();
        for p in 0..plane {
            for c in 0..16 {
                book[p * 16 + c] = ze.data()[c * plane + p];
            }
        }
        for j in plane..64 {
            book[j * 16..(j + 1) * 16].fill(1e3 + j as f32);
        }
        let via_codes = codec.decode(&codec.encode(&x).unwrap()).unwrap();
        let plain = codec.decode(&ze).unwrap();
        assert_eq!(via_codes, plain);
        let (loss, ..) = codec.sample_grad(&x, 1.0, true);
        let recon = mean_sq_diff(plain.data(), x.data());
        assert!((loss - recon).abs() < 1e-9, "commitment must vanish");
    }

    #[test]
    fn zero_epochs_leave_codec_unchanged() {
        let mut codec = VqCodec::new(roles::RADAR, spec(), VqConfig::default()).unwrap();
        let before = codec.clone();
        let cfg = VqTrainConfig {
            epochs: 0,
            ..VqTrainConfig::default()
        };
        let report = train_vq(&mut codec, &[small_chip(0)], &[], &cfg).unwrap();
        assert!(report.train_loss.is_empty());
        assert_eq!(codec, before);
    }

    #[test]
    fn constant_images_are_learned() {
        let chips: Vec<ImageChip> = (0..16)
            .map(|_| ImageChip::filled(roles::RADAR, 8, 8, 0.6).unwrap())
            .collect();
        let mut codec = VqCodec::new(roles::RADAR, spec(), VqConfig::default()).unwrap();
        let cfg = VqTrainConfig {
            epochs: 20,
            batch_size: 1,
            ..VqTrainConfig::default()
        };
        let report = train_vq(&mut codec, &chips, &chips[..1], &cfg).unwrap();
        let last = *report.held_out_mse.last().unwrap();
        assert!(last < 1e-3, "{:?}", report.held_out_mse);
        let book = codec.codebook();
        for i in 0..64 {
            for j in 0..i {
                assert_ne!(book[i * 16..(i + 1) * 16], book[j * 16..(j + 1) * 16]);
            }
        }
    }
}
