//! The conditional velocity network.
//!
//! Input is the current latent concatenated with the source latent; output is
//! a displacement field with the latent's shape. The network is a one-level
//! U: a full-resolution conv (with the progress embedding added before its
//! activation), a pooled conv at half resolution, then an upsample, skip
//! concatenation and two convs back to latent channels. SiLU activations
//! everywhere keep finite-difference checks well conditioned.
//!
//! The output conv starts at zero so an untrained model is the zero field and
//! Euler integration returns the source latent unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{
    avg_pool2, avg_pool2_backward, concat_channels, silu, silu_backward, sinusoidal_embedding,
    split_channels_grad, upsample2, upsample2_backward, Conv2d, Fmap, Linear, Params, Real,
};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeEmbedding {
    /// Raw progress value through a learned per-channel vector.
    BroadcastChannel,
    /// Sinusoidal features through a dense layer.
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_channels: usize,
    /// Widths of the full-resolution, half-resolution and decoder stages.
    pub hidden_channels: [usize; 3],
    pub time_embedding: TimeEmbedding,
    pub time_dim: usize,
    pub kernel: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_channels: 16,
            hidden_channels: [32, 64, 32],
            time_embedding: TimeEmbedding::Sinusoidal,
            time_dim: 16,
            kernel: 3,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.hidden_channels.contains(&0) {
            return Err(Error::Config("model channel counts must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel must be odd, got {}", self.kernel)));
        }
        if self.time_embedding == TimeEmbedding::Sinusoidal && (self.time_dim == 0 || self.time_dim % 2 == 1) {
            return Err(Error::Config(format!(
                "sinusoidal time_dim must be even and positive, got {}",
                self.time_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        2 * self.latent_channels
    }

    fn time_features(&self) -> usize {
        match self.time_embedding {
            TimeEmbedding::BroadcastChannel => 1,
            TimeEmbedding::Sinusoidal => self.time_dim,
        }
    }
}

/// Anything that can act as the velocity field during sampling.
pub trait VelocityField: Sync {
    fn velocity(&self, x_t: &LatentTensor, z_src: &LatentTensor, m: f64) -> Result<LatentTensor>;
}

/// The zero field.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroVelocity;

impl VelocityField for ZeroVelocity {
    fn velocity(&self, x_t: &LatentTensor, _: &LatentTensor, _: f64) -> Result<LatentTensor> {
        Ok(LatentTensor::zeros(x_t.tag(), x_t.height(), x_t.width()))
    }
}

/// Reference field returning the exact displacement `z_dst - z_src` of a known
/// pair, looked up by the source latent. Useful to check integration and
/// pipeline plumbing independently of learning.
#[derive(Debug, Clone, Default)]
pub struct PairOracle {
    pairs: Vec<(LatentTensor, LatentTensor)>,
}

impl PairOracle {
    pub fn new(pairs: Vec<(LatentTensor, LatentTensor)>) -> Result<Self> {
        for (a, b) in &pairs {
            a.check_compatible(b)?;
        }
        Ok(Self { pairs })
    }
}

impl VelocityField for PairOracle {
    fn velocity(&self, _: &LatentTensor, z_src: &LatentTensor, _: f64) -> Result<LatentTensor> {
        let (src, dst) = self
            .pairs
            .iter()
            .find(|(src, _)| src == z_src)
            .ok_or_else(|| Error::Pairing("oracle has no pair for this source latent".into()))?;
        dst.sub(src)
    }
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` draws.
pub(crate) fn uniform_init<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize) -> impl FnMut() -> T + '_ {
    let bound = 1.0 / (fan_in as f64).sqrt();
    move || T::lit(rng.random_range(-bound..bound))
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    h: usize,
    w: usize,
    time_features: Vec<T>,
    cols_in: Vec<T>,
    pre1: Vec<T>,
    a1: Fmap<T>,
    cols_down: Vec<T>,
    pre2: Vec<T>,
    cols_up: Vec<T>,
    pre3: Vec<T>,
    mask: Option<Vec<T>>,
    cols_out: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityNet<T> {
    config: ModelConfig,
    params: Params<T>,
    time: Linear,
    conv_in: Conv2d,
    down: Conv2d,
    up: Conv2d,
    out: Conv2d,
}

impl<T: Real> VelocityNet<T> {
    /// Uniform fan-in initialization with a zero output layer.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed, true)
    }

    /// Like [`new`](Self::new) but with a random output layer, so every
    /// parameter influences the output.
    pub fn with_random_head(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed, false)
    }

    fn build(config: ModelConfig, seed: u64, zero_head: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c0, c1, c2] = config.hidden_channels;
        let (k, l) = (config.kernel, config.latent_channels);
        let mut params = Params::new();
        let tf = config.time_features();
        let time = Linear::register(&mut params, "time", tf, c0, uniform_init(&mut rng, tf));
        let conv_in = Conv2d::register(&mut params, "conv_in", 2 * l, c0, k, uniform_init(&mut rng, 2 * l * k * k));
        let down = Conv2d::register(&mut params, "down", c0, c1, k, uniform_init(&mut rng, c0 * k * k));
        let up = Conv2d::register(&mut params, "up", c1 + c0, c2, k, uniform_init(&mut rng, (c1 + c0) * k * k));
        let out = if zero_head {
            Conv2d::register(&mut params, "out", c2, l, k, T::zero)
        } else {
            Conv2d::register(&mut params, "out", c2, l, k, uniform_init(&mut rng, c2 * k * k))
        };
        Ok(Self {
            config,
            params,
            time,
            conv_in,
            down,
            up,
            out,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// SHA-256 of the little-endian parameter bytes.
    pub fn param_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.params.flat() {
            hasher.update(v.widen().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    fn time_features(&self, m: f64) -> Vec<T> {
        match self.config.time_embedding {
            TimeEmbedding::BroadcastChannel => vec![T::lit(m)],
            TimeEmbedding::Sinusoidal => sinusoidal_embedding(m, self.config.time_dim),
        }
    }

    fn check_geometry(&self, h: usize, w: usize) -> Result<()> {
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("latent extent {h}x{w} must be even and non-zero")));
        }
        Ok(())
    }

    /// Forward pass on raw channel-major buffers. `dropout_rng` enables
    /// training-mode dropout.
    pub fn forward_raw(
        &self,
        x_t: &[T],
        z_src: &[T],
        h: usize,
        w: usize,
        m: f64,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<T>, ForwardCache<T>) {
        let p = self.params.flat();
        let plane = h * w;
        let l = self.config.latent_channels;
        debug_assert_eq!(x_t.len(), l * plane);
        debug_assert_eq!(z_src.len(), l * plane);

        let mut input = Vec::with_capacity(2 * l * plane);
        input.extend_from_slice(x_t);
        input.extend_from_slice(z_src);
        let input = Fmap::new(2 * l, h, w, input);

        let time_features = self.time_features(m);
        let temb = self.time.forward(p, &time_features);
        let (mut pre1, cols_in) = self.conv_in.forward(p, &input);
        for (c, t) in temb.iter().enumerate() {
            pre1.data[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += *t);
        }
        let a1 = Fmap::new(pre1.c, h, w, silu(&pre1.data));

        let pooled = avg_pool2(&a1);
        let (pre2, cols_down) = self.down.forward(p, &pooled);
        let a2 = Fmap::new(pre2.c, pre2.h, pre2.w, silu(&pre2.data));

        let merged = concat_channels(&upsample2(&a2), &a1);
        let (pre3, cols_up) = self.up.forward(p, &merged);
        let mut a3 = Fmap::new(pre3.c, h, w, silu(&pre3.data));

        let rate = self.config.dropout;
        let mask = match dropout_rng {
            Some(rng) if rate > 0.0 => {
                let keep = T::lit(1.0 / (1.0 - rate));
                let mask: Vec<T> = (0..a3.data.len())
                    .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                    .collect();
                a3.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
                Some(mask)
            }
            _ => None,
        };

        let (y, cols_out) = self.out.forward(p, &a3);
        let cache = ForwardCache {
            h,
            w,
            time_features,
            cols_in,
            pre1: pre1.data,
            a1,
            cols_down,
            pre2: pre2.data,
            cols_up,
            pre3: pre3.data,
            mask,
            cols_out,
        };
        (y.data, cache)
    }

    /// Accumulates parameter gradients for upstream gradient `dy` into
    /// `grads`. With `want_inputs`, also returns gradients with respect to the
    /// current latent and the source latent.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        dy: &[T],
        grads: &mut [T],
        want_inputs: bool,
    ) -> Option<(Vec<T>, Vec<T>)> {
        let p = self.params.flat();
        let (h, w) = (cache.h, cache.w);
        let plane = h * w;
        let [c0, c1, c2] = self.config.hidden_channels;
        let l = self.config.latent_channels;

        let dy = Fmap::new(l, h, w, dy.to_vec());
        let mut d3 = self
            .out
            .backward(p, grads, &cache.cols_out, &dy, true)
            .expect("input grad requested");
        if let Some(mask) = &cache.mask {
            d3.data.iter_mut().zip(mask).for_each(|(d, m)| *d *= *m);
        }
        silu_backward(&cache.pre3, &mut d3.data);
        let dmerged = self
            .up
            .backward(p, grads, &cache.cols_up, &Fmap::new(c2, h, w, d3.data), true)
            .expect("input grad requested");
        let (dup, mut da1) = split_channels_grad(dmerged, c1);
        let mut d2 = upsample2_backward(&dup);
        silu_backward(&cache.pre2, &mut d2.data);
        let dpooled = self
            .down
            .backward(p, grads, &cache.cols_down, &Fmap::new(c1, h / 2, w / 2, d2.data), true)
            .expect("input grad requested");
        let back = avg_pool2_backward(&dpooled);
        da1.data.iter_mut().zip(&back.data).for_each(|(a, b)| *a += *b);
        debug_assert_eq!(da1.c, cache.a1.c);
        silu_backward(&cache.pre1, &mut da1.data);

        let dtemb: Vec<T> = (0..c0)
            .map(|c| da1.data[c * plane..(c + 1) * plane].iter().copied().sum())
            .collect();
        self.time.backward(p, grads, &cache.time_features, &dtemb);
        let dinput = self.conv_in.backward(p, grads, &cache.cols_in, &da1, want_inputs)?;
        let (dx, dz) = split_channels_grad(dinput, l);
        Some((dx.data, dz.data))
    }

    fn to_buffers(&self, x_t: &LatentTensor, z_src: &LatentTensor) -> Result<(Vec<T>, Vec<T>)> {
        x_t.check_compatible(z_src)?;
        if x_t.channels() != self.config.latent_channels {
            return Err(Error::Shape(format!(
                "model expects {} latent channels, got {}",
                self.config.latent_channels,
                x_t.channels()
            )));
        }
        self.check_geometry(x_t.height(), x_t.width())?;
        let widen = |t: &LatentTensor| t.data().iter().map(|&v| T::lit(f64::from(v))).collect();
        Ok((widen(x_t), widen(z_src)))
    }

    /// Evaluation-mode prediction of the displacement field.
    pub fn forward(&self, x_t: &LatentTensor, z_src: &LatentTensor, m: f64) -> Result<LatentTensor> {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::Domain(format!("progress {m} outside [0, 1]")));
        }
        let (x, z) = self.to_buffers(x_t, z_src)?;
        let (y, _) = self.forward_raw(&x, &z, x_t.height(), x_t.width(), m, None);
        x_t.with_data(y.iter().map(|v| v.widen() as f32).collect())
    }

    /// Mean squared error against `target` and its parameter gradient
    /// (evaluation mode, no dropout).
    pub fn loss_and_grad(
        &self,
        x_t: &LatentTensor,
        z_src: &LatentTensor,
        m: f64,
        target: &LatentTensor,
    ) -> Result<(f64, Params<T>)> {
        x_t.check_compatible(target)?;
        let (x, z) = self.to_buffers(x_t, z_src)?;
        let tgt: Vec<T> = target.data().iter().map(|&v| T::lit(f64::from(v))).collect();
        let mut grads = self.params.zeros_like();
        let loss = self.accumulate_sample(&x, &z, &tgt, x_t.height(), x_t.width(), m, 1, None, grads.flat_mut())?;
        Ok((loss, grads))
    }

    /// Adds the gradient of `sum_sq_err / (batch * n)` for one sample to
    /// `grads` and returns that sample's mean squared error.
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate_sample(
        &self,
        x_t: &[T],
        z_src: &[T],
        target: &[T],
        h: usize,
        w: usize,
        m: f64,
        batch: usize,
        dropout_rng: Option<&mut ChaCha8Rng>,
        grads: &mut [T],
    ) -> Result<f64> {
        let (pred, cache) = self.forward_raw(x_t, z_src, h, w, m, dropout_rng);
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("prediction", "model output is not finite"));
        }
        let n = pred.len();
        let scale = T::lit(2.0 / (batch * n) as f64);
        let mut sq = 0.0;
        let dy: Vec<T> = pred
            .iter()
            .zip(target)
            .map(|(&a, &b)| {
                let d = a - b;
                sq += d.widen() * d.widen();
                d * scale
            })
            .collect();
        let loss = sq / n as f64;
        if !loss.is_finite() {
            return Err(Error::numeric("loss", format!("loss evaluated to {loss}")));
        }
        self.backward(&cache, &dy, grads, false);
        Ok(loss)
    }

    /// Names the first parameter tensor whose gradient is not finite.
    pub fn check_grads(&self, grads: &[T]) -> Result<()> {
        for e in self.params.entries() {
            if e.slot().of(grads).iter().any(|g| !g.is_finite()) {
                return Err(Error::numeric(format!("gradient of {}", e.name), "non-finite value"));
            }
        }
        Ok(())
    }
}

impl<T: Real> VelocityField for VelocityNet<T> {
    fn velocity(&self, x_t: &LatentTensor, z_src: &LatentTensor, m: f64) -> Result<LatentTensor> {
        self.forward(x_t, z_src, m)
    }
}
