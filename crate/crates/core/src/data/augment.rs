//! Joint geometric augmentation of radar/optical pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::ImageChip;

pub const MAX_ROTATION_DEG: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub hflip: bool,
    pub vflip: bool,
    pub angle_deg: f64,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        hflip: false,
        vflip: false,
        angle_deg: 0.0,
    };

    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
            angle_deg: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
        }
    }

    /// Flips first, then rotates about the chip centre. Every channel uses the
    /// same sampling grid.
    pub fn apply(&self, chip: &ImageChip) -> ImageChip {
        let (c, h, w) = chip.shape();
        let mut out = chip.clone();
        if self.hflip || self.vflip {
            let src = chip.data();
            let dst = out.data_mut();
            for ch in 0..c {
                for y in 0..h {
                    let sy = if self.vflip { h - 1 - y } else { y };
                    for x in 0..w {
                        let sx = if self.hflip { w - 1 - x } else { x };
                        dst[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
                    }
                }
            }
        }
        if self.angle_deg != 0.0 {
            out = rotate(&out, self.angle_deg);
        }
        out
    }
}

/// Mirror a continuous coordinate into `[0, n-1]` without repeating the edge.
fn reflect(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let max = (n - 1) as f64;
    let period = 2.0 * max;
    let mut r = v.rem_euclid(period);
    if r > max {
        r = period - r;
    }
    r
}

/// Bilinear rotation by `angle_deg` (counter-clockwise) with reflect padding.
pub fn rotate(chip: &ImageChip, angle_deg: f64) -> ImageChip {
    let (c, h, w) = chip.shape();
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    // precompute the sampling grid once for all channels
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sx = reflect(cos * dx - sin * dy + cx, w);
            let sy = reflect(sin * dx + cos * dy + cy, h);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            taps.push([
                (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
                (y0 * w + x1, fx * (1.0 - fy)),
                (y1 * w + x0, (1.0 - fx) * fy),
                (y1 * w + x1, fx * fy),
            ]);
        }
    }
    let mut out = chip.clone();
    for ch in 0..c {
        let src = chip.channel(ch);
        let dst = out.channel_mut(ch);
        for (d, tap) in dst.iter_mut().zip(&taps) {
            *d = tap.iter().map(|&(i, wgt)| src[i] as f64 * wgt).sum::<f64>() as f32;
        }
    }
    out
}

/// Applies one sampled transform to the channel-concatenated pair and splits it back.
pub fn augment_pair(radar: &ImageChip, optical: &ImageChip, seed: u64) -> Result<(ImageChip, ImageChip)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment_pair_with(radar, optical, Augmentation::sample(&mut rng))
}

pub fn augment_pair_with(
    radar: &ImageChip,
    optical: &ImageChip,
    aug: Augmentation,
) -> Result<(ImageChip, ImageChip)> {
    let joint = aug.apply(&radar.concat(optical)?);
    let k = radar.channels();
    Ok((joint.select(0..k)?, joint.select(k..joint.channels())?))
}

/// Originals followed by one augmented copy of each pair.
pub fn double_with_augmentation(
    pairs: &[(ImageChip, ImageChip)],
    seed: u64,
) -> Result<Vec<(ImageChip, ImageChip)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = pairs.to_vec();
    for (r, o) in pairs {
        out.push(augment_pair(r, o, rng.random())?);
    }
    Ok(out)
}
