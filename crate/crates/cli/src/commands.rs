use std::path::{Path, PathBuf};

use latentflow::codec::{train_vq, AnyCodec, Codec, LatentSpec, VqTrainConfig};
use latentflow::data::{
    double_with_augmentation, write_dataset, DatasetManifest, SplitName, SynthConfig, TensorArchive,
};
use latentflow::inference::{run_inference, spectral_views, InferConfig, TranslationResult};
use latentflow::metrics::{report, report_csv, Truth};
use latentflow::pipeline::{compare_schedules, default_schedules, BenchmarkConfig};
use latentflow::render::{index_raster, rgb_raster, side_by_side, write_png};
use latentflow::scaler;
use latentflow::schedules::Schedule;
use latentflow::tensor::{roles, ImageChip};
use latentflow::trainer::{loss_trace_csv, run_training, LatentPair, TrainState};
use latentflow::{Error, Result};
use serde_json::json;

use crate::args::*;
use crate::config::RunConfig;
use crate::run::*;

type Items = Vec<(String, ImageChip, ImageChip)>;

fn load_split(data: &Path, split: SplitName) -> Result<Items> {
    let manifest = DatasetManifest::load(data)?;
    let items = manifest.load_split(data, split)?;
    if items.is_empty() {
        return Err(Error::Pairing(format!("{} has no {split:?} chips", data.display())));
    }
    Ok(items)
}

fn fit_scalers(train: &Items, radar_pct: (f64, f64), optical_pct: (f64, f64), clip_high: Option<f64>) -> Result<Scalers> {
    let radar: Vec<ImageChip> = train.iter().map(|t| t.1.clone()).collect();
    let optical: Vec<ImageChip> = train.iter().map(|t| t.2.clone()).collect();
    Ok(Scalers {
        radar: scaler::fit(&radar, radar_pct.0, radar_pct.1)?,
        optical: scaler::fit(&optical, optical_pct.0, optical_pct.1)?.with_clip_high(clip_high),
    })
}

/// Appends one jointly augmented copy of each pair, ids suffixed `_aug`.
fn augment(items: Items, seed: u64) -> Result<Items> {
    let pairs: Vec<(ImageChip, ImageChip)> = items.iter().map(|t| (t.1.clone(), t.2.clone())).collect();
    let doubled = double_with_augmentation(&pairs, seed)?;
    let n = items.len();
    Ok(doubled
        .into_iter()
        .enumerate()
        .map(|(i, (r, o))| {
            let id = if i < n { items[i].0.clone() } else { format!("{}_aug", items[i - n].0) };
            (id, r, o)
        })
        .collect())
}

fn build_codecs(
    spec: LatentSpec,
    seed: u64,
    vq: &VqTrainConfig,
    train: &Items,
    val: &Items,
) -> Result<(Codecs, serde_json::Value)> {
    let mut radar = AnyCodec::build(spec, roles::RADAR, seed)?;
    let mut optical = AnyCodec::build(spec, roles::OPTICAL, seed)?;
    let mut summary = json!({ "spec": spec });
    if let (AnyCodec::Vq(rc), AnyCodec::Vq(oc)) = (&mut radar, &mut optical) {
        let col = |v: &Items, radar: bool| -> Vec<ImageChip> {
            v.iter().map(|t| if radar { t.1.clone() } else { t.2.clone() }).collect()
        };
        let rep_r = train_vq(rc, &col(train, true), &col(val, true), vq)?;
        let rep_o = train_vq(oc, &col(train, false), &col(val, false), vq)?;
        summary["radar_held_out_mse"] = json!(rep_r.held_out_mse);
        summary["optical_held_out_mse"] = json!(rep_o.held_out_mse);
    }
    Ok((Codecs::new(radar, optical)?, summary))
}

fn schedule_override(args: &ScheduleArgs) -> Result<Option<Schedule>> {
    match (args.schedule, args.expo_k) {
        (None, None) => Ok(None),
        (Some(ScheduleChoice::Expo), Some(k)) => Schedule::exponential(k).map(Some),
        (Some(ScheduleChoice::Expo), None) => Err(Error::Config("--schedule expo needs --expo-k".into())),
        (_, Some(_)) => Err(Error::Config("--expo-k only applies to --schedule expo".into())),
        (Some(ScheduleChoice::Linear), None) => Ok(Some(Schedule::linear())),
        (Some(ScheduleChoice::Cosine), None) => Ok(Some(Schedule::cosine())),
    }
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut synth = SynthConfig::default();
    if let Some(s) = a.smoothness {
        synth.smoothness = s;
    }
    if let Some(m) = &a.mixing {
        synth.mixing = [[m[0], m[1]], [m[2], m[3]]];
    }
    synth.validate()?;
    let manifest = write_dataset(&a.out, &synth, a.seed, a.scenes, a.size)?;
    emit(json!({ "command": "gen-data", "out": a.out, "files": manifest.entries.len() }));
    Ok(())
}

pub fn fit_scaler(a: &FitScalerArgs) -> Result<()> {
    let train = load_split(&a.data, SplitName::Train)?;
    let pct = |v: &[f64]| (v[0], v[1]);
    let scalers = fit_scalers(&train, pct(&a.radar_pct), pct(&a.optical_pct), a.clip_high)?;
    create_dir(&a.out)?;
    scalers.save(&a.out)?;
    emit(json!({ "command": "fit-scaler", "out": a.out, "chips": train.len() }));
    Ok(())
}

pub fn train_codec(a: &TrainCodecArgs) -> Result<()> {
    let scalers = Scalers::load(&a.scalers)?;
    let train = scalers.apply(load_split(&a.data, SplitName::Train)?)?;
    let val = scalers.apply(load_split(&a.data, SplitName::Val)?)?;
    let spec = LatentSpec {
        kind: a.kind.into(),
        channels: a.channels,
        spatial_factor: a.factor,
    };
    let vq = VqTrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        ..VqTrainConfig::default()
    };
    let (codecs, summary) = build_codecs(spec, a.seed, &vq, &train, &val)?;
    create_dir(&a.out)?;
    codecs.save(&a.out)?;
    write_text(&a.out.join("codec_report.json"), &serde_json::to_string_pretty(&summary).unwrap())?;
    emit(json!({ "command": "train-codec", "out": a.out, "tag": codecs.radar.tag().to_string() }));
    Ok(())
}

pub fn encode(a: &EncodeArgs) -> Result<()> {
    let scalers = Scalers::load(&a.scalers)?;
    let codecs = Codecs::load(&a.codecs)?;
    let items = scalers.apply(load_split(&a.data, a.split.into())?)?;
    let latents = codecs.encode_pairs(&items)?;
    let ids: Vec<&str> = items.iter().map(|t| t.0.as_str()).collect();
    let mut archive = TensorArchive::new(json!({
        "format": "latentflow-latents",
        "tag": codecs.radar.tag(),
        "ids": ids,
    }));
    for (id, (z1, z2)) in ids.iter().zip(&latents) {
        let shape = [z1.channels(), z1.height(), z1.width()];
        archive.push_f32(format!("{id}/radar"), &shape, z1.data().to_vec());
        archive.push_f32(format!("{id}/optical"), &shape, z2.data().to_vec());
    }
    create_dir(&a.out)?;
    let path = a.out.join(format!("{}_latents.lfta", a.split.name()));
    archive.save(&path)?;
    emit(json!({ "command": "encode", "out": path, "chips": latents.len() }));
    Ok(())
}

struct Prepared {
    scalers: Scalers,
    codecs: Codecs,
    train: Vec<LatentPair>,
    val: Vec<LatentPair>,
    codec_summary: Option<serde_json::Value>,
}

fn prepare_latents(
    cfg: &RunConfig,
    data: &Path,
    scalers: Option<Scalers>,
    codecs: Option<Codecs>,
) -> Result<Prepared> {
    let train_raw = load_split(data, SplitName::Train)?;
    let val_raw = load_split(data, SplitName::Val)?;
    let scalers = match scalers {
        Some(s) => s,
        None => fit_scalers(&train_raw, cfg.scaler.radar_pct, cfg.scaler.optical_pct, cfg.scaler.clip_high)?,
    };
    let train_raw = if cfg.data.augment { augment(train_raw, cfg.seed)? } else { train_raw };
    let train = scalers.apply(train_raw)?;
    let val = scalers.apply(val_raw)?;
    let (codecs, codec_summary) = match codecs {
        Some(c) => (c, None),
        None => {
            let (c, s) = build_codecs(cfg.codec.latent, cfg.seed, &cfg.codec.vq_train, &train, &val)?;
            (c, Some(s))
        }
    };
    if codecs.radar.spec() != cfg.codec.latent {
        return Err(Error::Config(format!(
            "codecs produce {} latents, config asks for {}",
            codecs.radar.tag(),
            cfg.codec.latent.tag()
        )));
    }
    log::info!(
        "encoding {} training and {} validation pairs into {} latents",
        train.len(),
        val.len(),
        codecs.radar.tag()
    );
    Ok(Prepared {
        train: codecs.encode_pairs(&train)?,
        val: codecs.encode_pairs(&val)?,
        scalers,
        codecs,
        codec_summary,
    })
}

fn file_name_string(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(d) = &a.data {
        cfg.data.dir = Some(d.clone());
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = schedule_override(&a.schedule)? {
        cfg.train.schedule = s;
        cfg.infer.schedule = s;
    }
    cfg.validate()?;
    let data = cfg
        .data
        .dir
        .clone()
        .ok_or_else(|| Error::Config("no dataset: set data.dir or pass --data".into()))?;
    let scalers = a.scalers.as_deref().map(Scalers::load).transpose()?;
    let codecs = a.codecs.as_deref().map(Codecs::load).transpose()?;
    let prep = prepare_latents(&cfg, &data, scalers, codecs)?;

    create_dir(&a.out)?;
    write_text(&a.out.join(CONFIG_FILE), &cfg.to_json())?;
    prep.scalers.save(&a.out)?;
    prep.codecs.save(&a.out)?;
    if let Some(s) = &prep.codec_summary {
        write_text(&a.out.join("codec_report.json"), &serde_json::to_string_pretty(s).unwrap())?;
    }
    let mut state = TrainState::new(cfg.train.clone(), cfg.model.clone())?;
    let outcome = run_training(&mut state, &prep.train, &prep.val, Some(&a.out.join(CHECKPOINT_DIR)))?;
    state.save(a.out.join(MODEL_FILE))?;
    write_text(&a.out.join(LOSS_TRACE), &loss_trace_csv(&outcome.reports))?;
    let manifest = RunManifest {
        config: cfg.clone(),
        lineage: vec![LineageEntry {
            action: "train".into(),
            data_dir: data.display().to_string(),
            epochs: cfg.train.epochs,
            parent_checkpoint: None,
        }],
        epochs_completed: state.epoch,
        updates: state.updates,
        checkpoints: outcome.checkpoints.iter().map(|p| file_name_string(p)).collect(),
        model: MODEL_FILE.into(),
    };
    manifest.save(&a.out)?;
    let last = outcome.reports.last();
    emit(json!({
        "command": "train",
        "out": a.out,
        "epochs": state.epoch,
        "val_loss": last.map(|r| r.val_loss),
    }));
    Ok(())
}

fn load_model(run: &Path, checkpoint: Option<&Path>) -> Result<TrainState> {
    match checkpoint {
        Some(p) => TrainState::load(p),
        None => TrainState::load(run.join(MODEL_FILE)),
    }
}

fn write_prediction_pngs(dir: &Path, id: &str, res: &TranslationResult) -> Result<()> {
    write_png(dir.join(format!("{id}_rgb.png")), &rgb_raster(&res.views.rgb)?)?;
    write_png(dir.join(format!("{id}_ndvi.png")), &index_raster(&res.views.ndvi)?)?;
    write_png(dir.join(format!("{id}_ndwi.png")), &index_raster(&res.views.ndwi)?)
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.run.join(CONFIG_FILE))?;
    let scalers = Scalers::load(&a.run)?;
    let codecs = Codecs::load(&a.run)?;
    let state = load_model(&a.run, a.checkpoint.as_deref())?;
    let mut infer = InferConfig {
        clip_unit: a.clip_unit || cfg.infer.clip_unit,
        ..cfg.infer.clone()
    };
    if let Some(t) = a.steps {
        infer.steps = t;
    }
    if let Some(s) = schedule_override(&a.schedule)? {
        infer.schedule = s;
    }
    infer.validate()?;
    let mut items = scalers.apply(load_split(&a.data, a.split.into())?)?;
    if let Some(n) = a.limit.or(cfg.eval.limit) {
        items.truncate(n);
    }
    let chips: Vec<(String, ImageChip)> = items.iter().map(|t| (t.0.clone(), t.1.clone())).collect();
    let results = run_inference(&state.model, &codecs.radar, &codecs.optical, &chips, &infer)?;
    create_dir(&a.out)?;
    for (res, (id, _, optical)) in results.iter().zip(&items) {
        let truth_latent = codecs.optical.encode(optical).map_err(|e| e.with_chip(id))?;
        let file = ResultFile {
            id: id.clone(),
            steps: infer.steps,
            schedule: infer.schedule.to_string(),
            index_eps: infer.index_eps,
            seed: cfg.seed,
            latent: res.latent.clone(),
            decoded: res.decoded.clone(),
            truth: Some((truth_latent, optical.clone())),
        };
        file.save(&a.out)?;
        if a.png {
            write_prediction_pngs(&a.out, id, res)?;
        }
    }
    emit(json!({ "command": "infer", "out": a.out, "chips": results.len(), "steps": infer.steps }));
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if let Some(bench) = &a.benchmark {
        return eval_benchmark(a, bench);
    }
    let dir = a.results.as_deref().expect("clap enforces one source");
    let files = read_results(dir)?;
    let mut results = Vec::with_capacity(files.len());
    let mut truth = Vec::with_capacity(files.len());
    for f in &files {
        let (z, optical) = f
            .truth
            .clone()
            .ok_or_else(|| Error::Pairing(format!("result {} carries no ground truth", f.id)))?;
        let views = spectral_views(&f.decoded, f.index_eps).map_err(|e| e.with_chip(&f.id))?;
        results.push(TranslationResult {
            id: f.id.clone(),
            latent: f.latent.clone(),
            decoded: f.decoded.clone(),
            views,
        });
        truth.push(Truth {
            id: f.id.clone(),
            latent: z,
            optical,
        });
    }
    let first = &files[0];
    let rep = report(&results, &truth, first.steps, &first.schedule, first.seed, first.index_eps)?;
    write_text(&a.out, &report_csv(&rep))?;
    if let Some(j) = &a.json {
        write_text(j, &serde_json::to_string_pretty(&rep).expect("report serializes"))?;
    }
    emit(json!({ "command": "eval", "out": a.out, "chips": rep.count }));
    Ok(())
}

fn eval_benchmark(a: &EvalArgs, path: &Path) -> Result<()> {
    let text = read_text(path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let cfg: BenchmarkConfig = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| Error::Parse(format!("benchmark config at `{}`: {}", e.path(), e.inner())))?;
    let cmp = compare_schedules(&cfg, &default_schedules(), &a.steps)?;
    write_text(&a.out, &cmp.csv)?;
    if let Some(j) = &a.json {
        let rows: Vec<_> = cmp.rows.iter().map(|(m, r)| json!({ "method": m, "report": r })).collect();
        write_text(j, &serde_json::to_string_pretty(&rows).unwrap())?;
    }
    emit(json!({ "command": "eval", "out": a.out, "rows": cmp.rows.len() }));
    Ok(())
}

pub fn finetune(a: &FinetuneArgs) -> Result<()> {
    let parent = RunManifest::load(&a.run)?;
    let cfg = RunConfig::load(&a.run.join(CONFIG_FILE))?;
    let scalers = Scalers::load(&a.run)?;
    let codecs = Codecs::load(&a.run)?;
    let checkpoint: PathBuf = a.checkpoint.clone().unwrap_or_else(|| a.run.join(MODEL_FILE));
    let mut state = TrainState::load(&checkpoint)?;
    let model_width = state.model.config().latent_channels;
    if model_width != codecs.radar.spec().channels {
        return Err(Error::Config(format!(
            "checkpoint expects {model_width} latent channels, codecs produce {}",
            codecs.radar.tag()
        )));
    }
    create_dir(&a.out)?;
    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    if a.epochs > 0 {
        let prep = prepare_latents(&cfg, &a.data, Some(scalers.clone()), Some(codecs.clone()))?;
        state.config.epochs = state.epoch + a.epochs;
        log::info!("resuming {} at epoch {} for {} more", checkpoint.display(), state.epoch, a.epochs);
        let outcome = run_training(&mut state, &prep.train, &prep.val, Some(&a.out.join(CHECKPOINT_DIR)))?;
        reports = outcome.reports;
        checkpoints = outcome.checkpoints.iter().map(|p| file_name_string(p)).collect();
    }
    write_text(&a.out.join(CONFIG_FILE), &cfg.to_json())?;
    scalers.save(&a.out)?;
    codecs.save(&a.out)?;
    state.save(a.out.join(MODEL_FILE))?;
    write_text(&a.out.join(LOSS_TRACE), &loss_trace_csv(&reports))?;
    let mut lineage = parent.lineage.clone();
    lineage.push(LineageEntry {
        action: "finetune".into(),
        data_dir: a.data.display().to_string(),
        epochs: a.epochs,
        parent_checkpoint: Some(checkpoint.display().to_string()),
    });
    RunManifest {
        config: cfg,
        lineage,
        epochs_completed: state.epoch,
        updates: state.updates,
        checkpoints,
        model: MODEL_FILE.into(),
    }
    .save(&a.out)?;
    emit(json!({ "command": "finetune", "out": a.out, "epochs": state.epoch }));
    Ok(())
}

pub fn plot(a: &PlotArgs) -> Result<()> {
    let files = read_results(&a.results)?;
    create_dir(&a.out)?;
    let mut written = 0;
    for f in &files {
        let (_, optical) = f
            .truth
            .as_ref()
            .ok_or_else(|| Error::Pairing(format!("result {} carries no ground truth", f.id)))?;
        let pred = spectral_views(&f.decoded, f.index_eps).map_err(|e| e.with_chip(&f.id))?;
        let truth = spectral_views(optical, f.index_eps).map_err(|e| e.with_chip(&f.id))?;
        let panels = [
            ("rgb", rgb_raster(&truth.rgb)?, rgb_raster(&pred.rgb)?),
            ("ndvi", index_raster(&truth.ndvi)?, index_raster(&pred.ndvi)?),
            ("ndwi", index_raster(&truth.ndwi)?, index_raster(&pred.ndwi)?),
        ];
        for (name, t, p) in panels {
            write_png(a.out.join(format!("{}_{name}.png", f.id)), &side_by_side(&[t, p], 2)?)?;
            written += 1;
        }
    }
    emit(json!({ "command": "plot", "out": a.out, "files": written }));
    Ok(())
}
