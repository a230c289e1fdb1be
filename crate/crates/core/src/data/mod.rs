//! Synthetic data, tiling, splits and on-disk containers.

pub mod archive;
pub mod augment;
pub mod chipfile;
pub mod synth;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageChip;

pub use archive::{TensorArchive, TensorData};
pub use augment::{augment_pair, augment_pair_with, double_with_augmentation, Augmentation};
pub use chipfile::{decode_chip, encode_chip, read_chip, write_chip};
pub use synth::{generate_dataset, generate_pair, generate_pair_with, oracle_optical, SceneFields, SynthConfig};

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.7, 0.2, 0.1);

/// Cuts non-overlapping `size`x`size` tiles in row-major order; edge
/// remainders are dropped.
pub fn chip(image: &ImageChip, size: usize) -> Result<Vec<ImageChip>> {
    let (c, h, w) = image.shape();
    if size == 0 || size > h || size > w {
        return Err(Error::Domain(format!("chip size {size} does not fit a {h}x{w} image")));
    }
    let mut tiles = Vec::with_capacity((h / size) * (w / size));
    for ty in 0..h / size {
        for tx in 0..w / size {
            let mut data = Vec::with_capacity(c * size * size);
            for ch in 0..c {
                let plane = image.channel(ch);
                for y in ty * size..(ty + 1) * size {
                    data.extend_from_slice(&plane[y * w + tx * size..y * w + (tx + 1) * size]);
                }
            }
            tiles.push(ImageChip::new(image.labels().to_vec(), size, size, data)?);
        }
    }
    Ok(tiles)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub val: Vec<T>,
}

/// Seeded shuffle followed by contiguous train/test/val slices. Test and
/// validation sizes are floored; the remainder goes to training.
pub fn split_dataset<T>(items: Vec<T>, fractions: (f64, f64, f64), seed: u64) -> Result<Split<T>> {
    if items.is_empty() {
        return Err(Error::Domain("cannot split an empty dataset".into()));
    }
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("split fractions must sum to 1, got {fractions:?}")));
    }
    let n = items.len();
    // the small bias absorbs representation error such as 0.7 * 10 = 6.999...
    let n_test = (n as f64 * b + 1e-9).floor() as usize;
    let n_val = (n as f64 * c + 1e-9).floor() as usize;
    let n_train = n - n_test - n_val;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<T> { idx.iter().map(|&i| slots[i].take().unwrap()).collect() };
    let train = take(&order[..n_train]);
    let test = take(&order[n_train..n_train + n_test]);
    let val = take(&order[n_train + n_test..]);
    Ok(Split { train, test, val })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Test,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub roles: Vec<String>,
    pub split: SplitName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub scenes: usize,
    pub size: usize,
    pub synth: SynthConfig,
    pub radar_channels: usize,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Reads every pair of one split, in manifest order.
    pub fn load_split(&self, dir: impl AsRef<Path>, split: SplitName) -> Result<Vec<(String, ImageChip, ImageChip)>> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| {
                let joint = read_chip(dir.as_ref().join(&e.path))?;
                let (r, o) = unpack_pair(&joint, self.radar_channels).map_err(|err| err.with_chip(&e.id))?;
                Ok((e.id.clone(), r, o))
            })
            .collect()
    }
}

/// Radar channels first, optical after, in one container.
pub fn pack_pair(radar: &ImageChip, optical: &ImageChip) -> Result<ImageChip> {
    radar.concat(optical)
}

pub fn unpack_pair(joint: &ImageChip, radar_channels: usize) -> Result<(ImageChip, ImageChip)> {
    if radar_channels == 0 || radar_channels >= joint.channels() {
        return Err(Error::Shape(format!(
            "pair file has {} channels, cannot split after {radar_channels}",
            joint.channels()
        )));
    }
    Ok((joint.select(0..radar_channels)?, joint.select(radar_channels..joint.channels())?))
}

/// Generates `scenes` pairs, splits them and writes pair files plus a manifest.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    cfg: &SynthConfig,
    seed: u64,
    scenes: usize,
    size: usize,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pairs = generate_dataset(cfg, seed, scenes, size)?;
    let radar_channels = pairs.first().map(|p| p.0.channels()).unwrap_or(2);
    let indexed: Vec<usize> = (0..pairs.len()).collect();
    let split = split_dataset(indexed, DEFAULT_FRACTIONS, seed)?;
    let mut membership = vec![SplitName::Train; pairs.len()];
    for &i in &split.test {
        membership[i] = SplitName::Test;
    }
    for &i in &split.val {
        membership[i] = SplitName::Val;
    }
    let mut entries = Vec::with_capacity(pairs.len());
    for (i, (r, o)) in pairs.iter().enumerate() {
        let id = format!("scene_{i:05}");
        let file = format!("{id}.lfc");
        let joint = pack_pair(r, o)?;
        write_chip(dir.join(&file), &joint)?;
        entries.push(ManifestEntry {
            id,
            path: file,
            roles: joint.labels().to_vec(),
            split: membership[i],
        });
    }
    let manifest = DatasetManifest {
        seed,
        scenes,
        size,
        synth: *cfg,
        radar_channels,
        entries,
    };
    manifest.save(dir)?;
    Ok(manifest)
}
