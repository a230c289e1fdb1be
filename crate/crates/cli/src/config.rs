use std::path::{Path, PathBuf};

use latentflow::codec::{LatentSpec, VqTrainConfig};
use latentflow::inference::InferConfig;
use latentflow::scaler::{OPTICAL_PERCENTILES, RADAR_PERCENTILES};
use latentflow::trainer::TrainConfig;
use latentflow::velocity::ModelConfig;
use latentflow::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset directory written by `gen-data`.
    pub dir: Option<PathBuf>,
    pub augment: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { dir: None, augment: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalerSection {
    pub radar_pct: (f64, f64),
    pub optical_pct: (f64, f64),
    /// Raw-unit ceiling applied to optical values before scaling.
    pub clip_high: Option<f64>,
}

impl Default for ScalerSection {
    fn default() -> Self {
        Self {
            radar_pct: RADAR_PERCENTILES,
            optical_pct: OPTICAL_PERCENTILES,
            clip_high: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSection {
    pub latent: LatentSpec,
    pub vq_train: VqTrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Score at most this many chips.
    pub limit: Option<usize>,
}

/// Everything a run needs. Only `seed` is mandatory; it also fills in the
/// training and codec seeds when those are not given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub scaler: ScalerSection,
    #[serde(default)]
    pub codec: CodecSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub infer: InferConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

fn fill_seed(root: &mut Value, path: &[&str], seed: u64) {
    let mut node = root;
    for key in &path[..path.len() - 1] {
        let Some(obj) = node.as_object_mut() else { return };
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    if let Some(obj) = node.as_object_mut() {
        obj.entry(path[path.len() - 1].to_string()).or_insert(Value::from(seed));
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        if let Some(seed) = value.get("seed").and_then(Value::as_u64) {
            fill_seed(&mut value, &["train", "seed"], seed);
            fill_seed(&mut value, &["codec", "vq_train", "seed"], seed);
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(value)
            .map_err(|e| Error::Parse(format!("config at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.latent.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.infer.validate()?;
        if self.model.latent_channels != self.codec.latent.channels {
            return Err(Error::Config(format!(
                "model.latent_channels ({}) must equal codec.latent.channels ({})",
                self.model.latent_channels, self.codec.latent.channels
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
