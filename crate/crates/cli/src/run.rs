//! Run-directory layout and the files passed between subcommands.

use std::path::{Path, PathBuf};

use latentflow::codec::{AnyCodec, Codec};
use latentflow::data::TensorArchive;
use latentflow::scaler::ScalerParams;
use latentflow::tensor::{ImageChip, LatentTag, LatentTensor};
use latentflow::trainer::LatentPair;
use latentflow::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const RUN_MANIFEST: &str = "run.json";
pub const RADAR_SCALER: &str = "radar_scaler.json";
pub const OPTICAL_SCALER: &str = "optical_scaler.json";
pub const RADAR_CODEC: &str = "radar_codec.lfta";
pub const OPTICAL_CODEC: &str = "optical_codec.lfta";
pub const MODEL_FILE: &str = "model.lfta";
pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone)]
pub struct Scalers {
    pub radar: ScalerParams,
    pub optical: ScalerParams,
}

impl Scalers {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.radar.save(dir.join(RADAR_SCALER))?;
        self.optical.save(dir.join(OPTICAL_SCALER))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            radar: ScalerParams::load(dir.join(RADAR_SCALER))?,
            optical: ScalerParams::load(dir.join(OPTICAL_SCALER))?,
        })
    }

    pub fn apply(&self, items: Vec<(String, ImageChip, ImageChip)>) -> Result<Vec<(String, ImageChip, ImageChip)>> {
        items
            .into_iter()
            .map(|(id, r, o)| {
                let r = self.radar.transform(&r).map_err(|e| e.with_chip(&id))?;
                let o = self.optical.transform(&o).map_err(|e| e.with_chip(&id))?;
                Ok((id, r, o))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Codecs {
    pub radar: AnyCodec,
    pub optical: AnyCodec,
}

impl Codecs {
    pub fn new(radar: AnyCodec, optical: AnyCodec) -> Result<Self> {
        if radar.tag() != optical.tag() {
            return Err(Error::Tag {
                expected: radar.tag().to_string(),
                found: optical.tag().to_string(),
            });
        }
        Ok(Self { radar, optical })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.radar.save(dir.join(RADAR_CODEC))?;
        self.optical.save(dir.join(OPTICAL_CODEC))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::new(AnyCodec::load(dir.join(RADAR_CODEC))?, AnyCodec::load(dir.join(OPTICAL_CODEC))?)
    }

    pub fn encode_pairs(&self, items: &[(String, ImageChip, ImageChip)]) -> Result<Vec<LatentPair>> {
        items
            .iter()
            .map(|(id, r, o)| {
                let z1 = self.radar.encode(r).map_err(|e| e.with_chip(id))?;
                let z2 = self.optical.encode(o).map_err(|e| e.with_chip(id))?;
                Ok((z1, z2))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub action: String,
    pub data_dir: String,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_checkpoint: Option<String>,
}

/// Summary of a run directory, rewritten by every command that writes one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub lineage: Vec<LineageEntry>,
    pub epochs_completed: usize,
    pub updates: u64,
    pub checkpoints: Vec<String>,
    pub model: String,
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_text(
            &dir.join(RUN_MANIFEST),
            &serde_json::to_string_pretty(self).expect("manifest serializes"),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_MANIFEST);
        serde_json::from_str(&read_text(&path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// One translated chip with its ground truth when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultFile {
    pub id: String,
    pub steps: usize,
    pub schedule: String,
    pub index_eps: f64,
    pub seed: u64,
    pub latent: LatentTensor,
    pub decoded: ImageChip,
    pub truth: Option<(LatentTensor, ImageChip)>,
}

pub const RESULT_FORMAT: &str = "latentflow-result";

fn chip_shape(c: &ImageChip) -> [usize; 3] {
    [c.channels(), c.height(), c.width()]
}

fn latent_shape(z: &LatentTensor) -> [usize; 3] {
    [z.channels(), z.height(), z.width()]
}

impl ResultFile {
    pub fn file_name(id: &str) -> String {
        format!("{id}.lfta")
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut archive = TensorArchive::new(json!({
            "format": RESULT_FORMAT,
            "id": self.id,
            "steps": self.steps,
            "schedule": self.schedule,
            "index_eps": self.index_eps,
            "seed": self.seed,
            "tag": self.latent.tag(),
            "labels": self.decoded.labels(),
        }));
        archive.push_f32("latent", &latent_shape(&self.latent), self.latent.data().to_vec());
        archive.push_f32("decoded", &chip_shape(&self.decoded), self.decoded.data().to_vec());
        if let Some((z, o)) = &self.truth {
            archive.push_f32("truth_latent", &latent_shape(z), z.data().to_vec());
            archive.push_f32("truth_optical", &chip_shape(o), o.data().to_vec());
        }
        archive
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        let meta = &a.meta;
        if meta.get("format").and_then(|v| v.as_str()) != Some(RESULT_FORMAT) {
            return Err(Error::Parse("archive does not hold a translation result".into()));
        }
        let field = |key: &str| {
            meta.get(key)
                .cloned()
                .ok_or_else(|| Error::Parse(format!("result archive is missing `{key}`")))
        };
        let parse = |e: serde_json::Error| Error::Parse(format!("result archive: {e}"));
        let tag: LatentTag = serde_json::from_value(field("tag")?).map_err(parse)?;
        let labels: Vec<String> = serde_json::from_value(field("labels")?).map_err(parse)?;
        let shape = |name: &str| -> Result<[usize; 3]> {
            let e = a.get(name).ok_or_else(|| Error::Parse(format!("result archive lacks `{name}`")))?;
            <[usize; 3]>::try_from(e.shape.as_slice())
                .map_err(|_| Error::Parse(format!("`{name}` has shape {:?}, expected 3 dims", e.shape)))
        };
        let latent_of = |name: &str| -> Result<LatentTensor> {
            let [_, h, w] = shape(name)?;
            LatentTensor::new(tag, h, w, a.f32(name)?.to_vec())
        };
        let chip_of = |name: &str| -> Result<ImageChip> {
            let [_, h, w] = shape(name)?;
            ImageChip::new(labels.clone(), h, w, a.f32(name)?.to_vec())
        };
        let truth = if a.get("truth_latent").is_some() {
            Some((latent_of("truth_latent")?, chip_of("truth_optical")?))
        } else {
            None
        };
        Ok(Self {
            id: serde_json::from_value(field("id")?).map_err(parse)?,
            steps: serde_json::from_value(field("steps")?).map_err(parse)?,
            schedule: serde_json::from_value(field("schedule")?).map_err(parse)?,
            index_eps: serde_json::from_value(field("index_eps")?).map_err(parse)?,
            seed: serde_json::from_value(field("seed")?).map_err(parse)?,
            latent: latent_of("latent")?,
            decoded: chip_of("decoded")?,
            truth,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::file_name(&self.id));
        self.to_archive().save(&path)?;
        Ok(path)
    }
}

/// Every result archive in `dir`, ordered by file name.
pub fn read_results(dir: &Path) -> Result<Vec<ResultFile>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "lfta"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Pairing(format!("no result files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            ResultFile::from_archive(&TensorArchive::load(p)?)
                .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        })
        .collect()
}
