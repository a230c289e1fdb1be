//! End-to-end desk benchmark: synthesize, split, scale, encode, train,
//! translate and score.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{train_vq, AnyCodec, Codec, LatentSpec, VqTrainConfig, VqTrainReport};
use crate::data::{double_with_augmentation, generate_dataset, split_dataset, SynthConfig, DEFAULT_FRACTIONS};
use crate::error::{Error, Result};
use crate::inference::{run_inference, InferConfig, TranslationResult};
use crate::metrics::{report, table_csv, MetricReport, Truth};
use crate::scaler::{self, ScalerParams, OPTICAL_PERCENTILES, RADAR_PERCENTILES};
use crate::schedules::Schedule;
use crate::tensor::{roles, ImageChip, LatentTensor};
use crate::trainer::{run_training, LatentPair, TrainConfig, TrainState};
use crate::velocity::{ModelConfig, VelocityField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    /// Drives scene synthesis, the split, augmentation and codec init.
    pub seed: u64,
    pub scenes: usize,
    pub size: usize,
    pub synth: SynthConfig,
    /// Append one jointly augmented copy of every training pair.
    pub augment: bool,
    pub latent: LatentSpec,
    pub vq: VqTrainConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    /// Score at most this many test chips.
    pub eval_limit: Option<usize>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            scenes: 200,
            size: 64,
            synth: SynthConfig::default(),
            augment: true,
            latent: LatentSpec::default(),
            vq: VqTrainConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            infer: InferConfig::default(),
            eval_limit: None,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.latent.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.infer.validate()?;
        if self.model.latent_channels != self.latent.channels {
            return Err(Error::Config(format!(
                "model.latent_channels ({}) must equal latent.channels ({})",
                self.model.latent_channels, self.latent.channels
            )));
        }
        if self.scenes < 10 {
            return Err(Error::Config(format!("need at least 10 scenes, got {}", self.scenes)));
        }
        Ok(())
    }
}

/// A scaled test chip with its encoded source and target.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalChip {
    pub id: String,
    pub radar: ImageChip,
    pub optical: ImageChip,
    pub z_radar: LatentTensor,
    pub z_optical: LatentTensor,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub radar_scaler: ScalerParams,
    pub optical_scaler: ScalerParams,
    pub radar_codec: AnyCodec,
    pub optical_codec: AnyCodec,
    /// Present when the codecs were trained.
    pub codec_reports: Option<(VqTrainReport, VqTrainReport)>,
    pub train: Vec<LatentPair>,
    pub val: Vec<LatentPair>,
    pub test: Vec<EvalChip>,
}

type Pair = (ImageChip, ImageChip);

fn scale_pairs(pairs: &[Pair], r: &ScalerParams, o: &ScalerParams) -> Result<Vec<Pair>> {
    pairs.iter().map(|(a, b)| Ok((r.transform(a)?, o.transform(b)?))).collect()
}

fn encode_pairs(pairs: &[Pair], cr: &AnyCodec, co: &AnyCodec) -> Result<Vec<LatentPair>> {
    pairs
        .par_iter()
        .map(|(a, b)| Ok((cr.encode(a)?, co.encode(b)?)))
        .collect()
}

/// Everything up to and including the latent datasets.
pub fn prepare(cfg: &BenchmarkConfig) -> Result<Prepared> {
    cfg.validate()?;
    let pairs = generate_dataset(&cfg.synth, cfg.seed, cfg.scenes, cfg.size)?;
    let indexed: Vec<(usize, Pair)> = pairs.into_iter().enumerate().collect();
    let split = split_dataset(indexed, DEFAULT_FRACTIONS, cfg.seed)?;
    let strip = |v: &[(usize, Pair)]| -> Vec<Pair> { v.iter().map(|(_, p)| p.clone()).collect() };
    let train_raw = strip(&split.train);
    let radar_scaler = scaler::fit(
        &train_raw.iter().map(|p| p.0.clone()).collect::<Vec<_>>(),
        RADAR_PERCENTILES.0,
        RADAR_PERCENTILES.1,
    )?;
    let optical_scaler = scaler::fit(
        &train_raw.iter().map(|p| p.1.clone()).collect::<Vec<_>>(),
        OPTICAL_PERCENTILES.0,
        OPTICAL_PERCENTILES.1,
    )?;
    let train_raw = if cfg.augment {
        double_with_augmentation(&train_raw, cfg.seed)?
    } else {
        train_raw
    };
    let train = scale_pairs(&train_raw, &radar_scaler, &optical_scaler)?;
    let val = scale_pairs(&strip(&split.val), &radar_scaler, &optical_scaler)?;
    let test_ids: Vec<String> = split.test.iter().map(|(i, _)| format!("scene_{i:05}")).collect();
    let test = scale_pairs(&strip(&split.test), &radar_scaler, &optical_scaler)?;

    let mut radar_codec = AnyCodec::build(cfg.latent, roles::RADAR, cfg.seed)?;
    let mut optical_codec = AnyCodec::build(cfg.latent, roles::OPTICAL, cfg.seed)?;
    let mut codec_reports = None;
    if let (AnyCodec::Vq(rc), AnyCodec::Vq(oc)) = (&mut radar_codec, &mut optical_codec) {
        let held_r: Vec<ImageChip> = val.iter().map(|p| p.0.clone()).collect();
        let held_o: Vec<ImageChip> = val.iter().map(|p| p.1.clone()).collect();
        let tr_r: Vec<ImageChip> = train.iter().map(|p| p.0.clone()).collect();
        let tr_o: Vec<ImageChip> = train.iter().map(|p| p.1.clone()).collect();
        let rep_r = train_vq(rc, &tr_r, &held_r, &cfg.vq)?;
        let rep_o = train_vq(oc, &tr_o, &held_o, &cfg.vq)?;
        codec_reports = Some((rep_r, rep_o));
    }

    let train_latents = encode_pairs(&train, &radar_codec, &optical_codec)?;
    let val_latents = encode_pairs(&val, &radar_codec, &optical_codec)?;
    let test_latents = encode_pairs(&test, &radar_codec, &optical_codec)?;
    let test = test_ids
        .into_iter()
        .zip(test)
        .zip(test_latents)
        .map(|((id, (radar, optical)), (z_radar, z_optical))| EvalChip {
            id,
            radar,
            optical,
            z_radar,
            z_optical,
        })
        .collect();
    Ok(Prepared {
        radar_scaler,
        optical_scaler,
        radar_codec,
        optical_codec,
        codec_reports,
        train: train_latents,
        val: val_latents,
        test,
    })
}

/// Translates the (optionally truncated) test split and scores it.
pub fn evaluate(
    model: &dyn VelocityField,
    prepared: &Prepared,
    infer: &InferConfig,
    limit: Option<usize>,
    seed: u64,
) -> Result<(Vec<TranslationResult>, MetricReport)> {
    let n = limit.unwrap_or(prepared.test.len()).min(prepared.test.len());
    let subset = &prepared.test[..n];
    let chips: Vec<(String, ImageChip)> = subset.iter().map(|c| (c.id.clone(), c.radar.clone())).collect();
    let results = run_inference(model, &prepared.radar_codec, &prepared.optical_codec, &chips, infer)?;
    let truth: Vec<Truth> = subset
        .iter()
        .map(|c| Truth {
            id: c.id.clone(),
            latent: c.z_optical.clone(),
            optical: c.optical.clone(),
        })
        .collect();
    let rep = report(&results, &truth, infer.steps, &infer.schedule.to_string(), seed, infer.index_eps)?;
    Ok((results, rep))
}

pub fn train_on(prepared: &Prepared, model: &ModelConfig, train: &TrainConfig) -> Result<TrainState> {
    let mut state = TrainState::new(train.clone(), model.clone())?;
    run_training(&mut state, &prepared.train, &prepared.val, None)?;
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub prepared: Prepared,
    pub state: TrainState,
    pub results: Vec<TranslationResult>,
    pub report: MetricReport,
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    let prepared = prepare(cfg)?;
    let state = train_on(&prepared, &cfg.model, &cfg.train)?;
    let (results, report) = evaluate(&state.model, &prepared, &cfg.infer, cfg.eval_limit, cfg.seed)?;
    Ok(BenchmarkOutcome {
        prepared,
        state,
        results,
        report,
    })
}

/// Linear, exponential (k = 2) and cosine, labelled for report rows.
pub fn default_schedules() -> Vec<(String, Schedule)> {
    vec![
        ("Linear".to_string(), Schedule::linear()),
        (
            "Expo(k=2)".to_string(),
            Schedule::exponential(2.0).expect("k = 2 is valid"),
        ),
        ("Cosine".to_string(), Schedule::cosine()),
    ]
}

#[derive(Debug, Clone)]
pub struct ScheduleComparison {
    pub rows: Vec<(String, MetricReport)>,
    pub csv: String,
}

/// Trains one model per schedule on shared data and evaluates each at every
/// step count, using the same schedule for the inference grid.
pub fn compare_schedules(
    cfg: &BenchmarkConfig,
    schedules: &[(String, Schedule)],
    steps: &[usize],
) -> Result<ScheduleComparison> {
    let prepared = prepare(cfg)?;
    let mut rows = Vec::with_capacity(schedules.len() * steps.len());
    for (name, schedule) in schedules {
        let train = TrainConfig {
            schedule: *schedule,
            ..cfg.train.clone()
        };
        let state = train_on(&prepared, &cfg.model, &train)?;
        for &t in steps {
            let infer = InferConfig {
                steps: t,
                schedule: *schedule,
                ..cfg.infer.clone()
            };
            let (_, rep) = evaluate(&state.model, &prepared, &infer, cfg.eval_limit, cfg.seed)?;
            log::info!("{name} T={t}: latent mse {:.6}", rep.records[0].mse);
            rows.push((name.clone(), rep));
        }
    }
    let csv = table_csv(&rows)?;
    Ok(ScheduleComparison { rows, csv })
}
