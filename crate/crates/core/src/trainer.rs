//! Multi-stage training of the velocity model on paired latents.
//!
//! Every batch passes through the enabled stages in the fixed order
//! continuous, discrete, boundary; each stage takes its own optimizer step.
//! The regression target is always `z2 - z1`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::TensorArchive;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::schedules::Schedule;
use crate::tensor::LatentTensor;
use crate::velocity::{ModelConfig, VelocityNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Continuous,
    Discrete,
    Boundary,
}

pub const ALL_STAGES: [Stage; 3] = [Stage::Continuous, Stage::Discrete, Stage::Boundary];

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Continuous => "continuous",
            Stage::Discrete => "discrete",
            Stage::Boundary => "boundary",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Stage::Continuous),
            "discrete" => Ok(Stage::Discrete),
            "boundary" => Ok(Stage::Boundary),
            other => Err(Error::Config(format!(
                "unknown stage `{other}` (expected continuous, discrete or boundary)"
            ))),
        }
    }
}

/// Reduce-on-plateau learning-rate policy driven by the validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Relative improvement required to reset patience.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 10,
            min_lr: 1e-6,
            threshold: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub best: f64,
    pub bad_epochs: usize,
}

impl Default for PlateauState {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }
}

impl PlateauState {
    /// Records one validation loss and returns the learning rate to use next.
    pub fn step(&mut self, cfg: &PlateauConfig, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best * (1.0 - cfg.threshold) {
            self.best = val_loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > cfg.patience {
            self.bad_epochs = 0;
            return (lr * cfg.factor).max(cfg.min_lr);
        }
        lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Size `N` of the discrete grid `{0/N, .., (N-1)/N}`.
    pub steps: usize,
    pub schedule: Schedule,
    pub stages: Vec<Stage>,
    pub batch_size: usize,
    pub lr: f64,
    /// Write a checkpoint every this many epochs (0 = only the final one).
    pub checkpoint_interval: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            steps: 100,
            schedule: Schedule::cosine(),
            stages: ALL_STAGES.to_vec(),
            batch_size: 8,
            lr: 1e-3,
            checkpoint_interval: 10,
            seed: 0,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("at least one training stage is required".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) || p.min_lr < 0.0 || p.threshold < 0.0 {
            return Err(Error::Config(format!("invalid plateau settings {p:?}")));
        }
        Ok(())
    }

    /// Enabled stages in execution order, duplicates removed.
    pub fn ordered_stages(&self) -> Vec<Stage> {
        ALL_STAGES.iter().copied().filter(|s| self.stages.contains(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based count of completed epochs.
    pub epoch: usize,
    /// Mean loss per enabled stage, in execution order.
    pub stage_losses: Vec<(Stage, f64)>,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate after the plateau step.
    pub lr: f64,
    pub updates: u64,
    pub wall_time_s: f64,
}

impl EpochReport {
    pub fn stage_loss(&self, stage: Stage) -> Option<f64> {
        self.stage_losses.iter().find(|(s, _)| *s == stage).map(|(_, l)| *l)
    }
}

/// Draws one progress value per batch element for `stage`.
pub fn draw_times(stage: Stage, n: usize, steps: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| match stage {
            Stage::Continuous => rng.random::<f64>(),
            Stage::Discrete => rng.random_range(0..steps) as f64 / steps as f64,
            Stage::Boundary => 0.0,
        })
        .collect()
}

pub type LatentPair = (LatentTensor, LatentTensor);

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: VelocityNet<f32>,
    pub optimizer: Adam<f32>,
    pub lr: f64,
    /// Completed epochs.
    pub epoch: usize,
    pub updates: u64,
    pub plateau: PlateauState,
    pub history: Vec<EpochReport>,
}

pub const CHECKPOINT_FORMAT: &str = "latentflow-checkpoint";

impl TrainState {
    pub fn new(config: TrainConfig, model: ModelConfig) -> Result<Self> {
        config.validate()?;
        let model = VelocityNet::new(model, config.seed)?;
        let optimizer = Adam::new(config.adam, model.param_count());
        Ok(Self {
            lr: config.lr,
            config,
            model,
            optimizer,
            epoch: 0,
            updates: 0,
            plateau: PlateauState::default(),
            history: Vec::new(),
        })
    }

    fn stage_inputs(&self, pair: &LatentPair, stage: Stage, m: f64) -> Result<(LatentTensor, LatentTensor)> {
        let (z1, z2) = pair;
        z1.check_compatible(z2)?;
        let x_t = match stage {
            Stage::Boundary => z1.clone(),
            _ => self.config.schedule.interpolate(z1, z2, m)?,
        };
        Ok((x_t, z2.sub(z1)?))
    }

    /// One stage on one batch: forward, loss, backward and one Adam update.
    /// Returns the batch mean loss.
    pub fn train_step(&mut self, batch: &[&LatentPair], stage: Stage, rng: &mut ChaCha8Rng) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Shape("empty training batch".into()));
        }
        let times = draw_times(stage, batch.len(), self.config.steps, rng);
        let dropout_seeds: Vec<u64> = (0..batch.len()).map(|_| rng.random()).collect();
        let n = batch.len();
        let results: Vec<Result<(f64, Vec<f32>)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let m = if stage == Stage::Boundary { 0.0 } else { times[i] };
                let (x_t, target) = self.stage_inputs(batch[i], stage, m)?;
                let mut g = vec![0.0f32; self.model.param_count()];
                let mut drop_rng = ChaCha8Rng::seed_from_u64(dropout_seeds[i]);
                let loss = self.model.accumulate_sample(
                    x_t.data(),
                    batch[i].0.data(),
                    target.data(),
                    x_t.height(),
                    x_t.width(),
                    m,
                    n,
                    Some(&mut drop_rng),
                    &mut g,
                )?;
                Ok((loss, g))
            })
            .collect();
        let mut grads = vec![0.0f32; self.model.param_count()];
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        self.model.check_grads(&grads)?;
        self.optimizer.update(self.model.params_mut().flat_mut(), &grads, self.lr)?;
        self.updates += 1;
        Ok(loss / n as f64)
    }

    pub fn train_step_continuous(&mut self, batch: &[&LatentPair], rng: &mut ChaCha8Rng) -> Result<f64> {
        self.train_step(batch, Stage::Continuous, rng)
    }

    pub fn train_step_discrete(&mut self, batch: &[&LatentPair], rng: &mut ChaCha8Rng) -> Result<f64> {
        self.train_step(batch, Stage::Discrete, rng)
    }

    pub fn train_step_boundary(&mut self, batch: &[&LatentPair], rng: &mut ChaCha8Rng) -> Result<f64> {
        self.train_step(batch, Stage::Boundary, rng)
    }

    /// Mean validation loss with one grid progress value per batch; never
    /// touches the parameters.
    pub fn validation_loss(&self, val: &[LatentPair], rng: &mut ChaCha8Rng) -> Result<f64> {
        if val.is_empty() {
            return Err(Error::Domain("validation set is empty".into()));
        }
        let mut total = 0.0;
        for batch in val.chunks(self.config.batch_size) {
            let m = draw_times(Stage::Discrete, 1, self.config.steps, rng)[0];
            let losses: Vec<Result<f64>> = batch
                .par_iter()
                .map(|pair| {
                    let (x_t, target) = self.stage_inputs(pair, Stage::Discrete, m)?;
                    let pred = self.model.forward(&x_t, &pair.0, m)?;
                    Ok(mse(pred.data(), target.data()))
                })
                .collect();
            for l in losses {
                total += l?;
            }
        }
        Ok(total / val.len() as f64)
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    /// Runs one epoch over `train`, then validation and the plateau step.
    pub fn run_epoch(&mut self, train: &[LatentPair], val: &[LatentPair]) -> Result<EpochReport> {
        let started = Instant::now();
        let stages = self.config.ordered_stages();
        let mut rng = self.epoch_rng(self.epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = vec![0.0; stages.len()];
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&LatentPair> = chunk.iter().map(|&i| &train[i]).collect();
            for (s, &stage) in stages.iter().enumerate() {
                let loss = self.train_step(&batch, stage, &mut rng).map_err(|e| match e {
                    Error::Numeric { context, detail } => Error::Numeric {
                        context: format!("{context} ({stage} stage, epoch {}, batch {b})", self.epoch + 1),
                        detail,
                    },
                    other => other,
                })?;
                sums[s] += loss;
            }
            batches += 1;
        }
        let stage_losses: Vec<(Stage, f64)> = stages
            .iter()
            .zip(&sums)
            .map(|(&s, &sum)| (s, sum / batches as f64))
            .collect();
        let train_loss = stage_losses.iter().map(|(_, l)| l).sum::<f64>() / stages.len() as f64;
        let val_loss = self.validation_loss(val, &mut rng)?;
        if !val_loss.is_finite() {
            return Err(Error::numeric("validation loss", format!("{val_loss} at epoch {}", self.epoch + 1)));
        }
        self.lr = self.plateau.step(&self.config.plateau, val_loss, self.lr);
        self.epoch += 1;
        let report = EpochReport {
            epoch: self.epoch,
            stage_losses,
            train_loss,
            val_loss,
            lr: self.lr,
            updates: self.updates,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {}: train {:.6} val {:.6} lr {:.2e}",
            report.epoch,
            report.train_loss,
            report.val_loss,
            report.lr
        );
        self.history.push(report.clone());
        Ok(report)
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut archive = TensorArchive::new(json!({
            "format": CHECKPOINT_FORMAT,
            "config": self.config,
            "model": self.model.config(),
            "epoch": self.epoch,
            "updates": self.updates,
            "lr": self.lr,
            "adam_step": self.optimizer.step,
            "plateau": {
                "best": if self.plateau.best.is_finite() { json!(self.plateau.best) } else { json!(null) },
                "bad_epochs": self.plateau.bad_epochs,
            },
            "history": self.history,
            "seed": self.config.seed,
        }));
        for e in self.model.params().entries() {
            archive.push_f32(
                format!("param/{}", e.name),
                &e.shape,
                e.slot().of(self.model.params().flat()).to_vec(),
            );
        }
        let n = self.optimizer.m.len();
        archive.push_f32("adam/m", &[n], self.optimizer.m.clone());
        archive.push_f32("adam/v", &[n], self.optimizer.v.clone());
        archive
    }

    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        let meta = &archive.meta;
        if meta.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Parse("archive is not a training checkpoint".into()));
        }
        fn field<T: serde::de::DeserializeOwned>(meta: &serde_json::Value, key: &str) -> Result<T> {
            let v = meta
                .get(key)
                .ok_or_else(|| Error::Parse(format!("checkpoint is missing `{key}`")))?;
            serde_json::from_value(v.clone()).map_err(|e| Error::Parse(format!("checkpoint `{key}`: {e}")))
        }
        let config: TrainConfig = field(meta, "config")?;
        let model_cfg: ModelConfig = field(meta, "model")?;
        let mut state = TrainState::new(config, model_cfg)?;
        let names: Vec<String> = state.model.params().entries().iter().map(|e| e.name.clone()).collect();
        for name in names {
            let stored = archive.f32(&format!("param/{name}"))?;
            let dst = state.model.params_mut().get_mut(&name).unwrap();
            if dst.len() != stored.len() {
                return Err(Error::Parse(format!("checkpoint tensor {name} has the wrong size")));
            }
            dst.copy_from_slice(stored);
        }
        let n = state.model.param_count();
        let (m, v) = (archive.f32("adam/m")?, archive.f32("adam/v")?);
        if m.len() != n || v.len() != n {
            return Err(Error::Parse("checkpoint optimizer state has the wrong size".into()));
        }
        state.optimizer.m = m.to_vec();
        state.optimizer.v = v.to_vec();
        state.optimizer.step = field(meta, "adam_step")?;
        state.epoch = field(meta, "epoch")?;
        state.updates = field(meta, "updates")?;
        state.lr = field(meta, "lr")?;
        state.history = field(meta, "history")?;
        let plateau = meta
            .get("plateau")
            .ok_or_else(|| Error::Parse("checkpoint is missing `plateau`".into()))?;
        state.plateau = PlateauState {
            best: plateau.get("best").and_then(|b| b.as_f64()).unwrap_or(f64::INFINITY),
            bad_epochs: field(plateau, "bad_epochs")?,
        };
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(path)?)
    }
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub reports: Vec<EpochReport>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_epoch_{epoch:04}.lfta")
}

/// Trains until `state.config.epochs` epochs are complete. Checkpoints go to
/// `checkpoint_dir` at every interval and after the final epoch; a failing
/// epoch leaves earlier checkpoints untouched.
pub fn run_training(
    state: &mut TrainState,
    train: &[LatentPair],
    val: &[LatentPair],
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    state.config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Domain("training and validation sets must be non-empty".into()));
    }
    let tag = train[0].0.tag();
    for (z1, z2) in train.iter().chain(val) {
        z1.check_compatible(z2)?;
        if z1.tag() != tag {
            return Err(Error::Tag {
                expected: tag.to_string(),
                found: z1.tag().to_string(),
            });
        }
    }
    let mut outcome = TrainOutcome {
        reports: Vec::new(),
        checkpoints: Vec::new(),
    };
    let interval = state.config.checkpoint_interval;
    while state.epoch < state.config.epochs {
        let report = state.run_epoch(train, val)?;
        let e = report.epoch;
        outcome.reports.push(report);
        if let Some(dir) = checkpoint_dir {
            if (interval > 0 && e % interval == 0) || e == state.config.epochs {
                std::fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
                let path = dir.join(checkpoint_name(e));
                state.save(&path)?;
                outcome.checkpoints.push(path);
            }
        }
    }
    Ok(outcome)
}

/// `epoch,<stage>...,train_loss,val_loss,lr` with one column per enabled stage.
pub fn loss_trace_csv(reports: &[EpochReport]) -> String {
    let stages: Vec<Stage> = reports
        .first()
        .map(|r| r.stage_losses.iter().map(|(s, _)| *s).collect())
        .unwrap_or_default();
    let mut out = String::from("epoch");
    for s in &stages {
        out.push_str(&format!(",{s}"));
    }
    out.push_str(",train_loss,val_loss,lr\n");
    for r in reports {
        out.push_str(&r.epoch.to_string());
        for s in &stages {
            out.push_str(&format!(",{}", r.stage_loss(*s).unwrap_or(f64::NAN)));
        }
        out.push_str(&format!(",{},{},{}\n", r.train_loss, r.val_loss, r.lr));
    }
    out
}
