use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use latentflow::data::{TensorArchive, TensorData};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latentflow"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not json: {line}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_CONFIG: &str = r#"{
    "seed": 3,
    "model": {"hidden_channels": [8, 8, 8]},
    "train": {"epochs": 2, "checkpoint_interval": 1},
    "infer": {"steps": 5}
}"#;

struct Run {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    run: PathBuf,
    results: PathBuf,
}

/// gen-data -> fit-scaler -> train -> infer in a fresh directory.
fn pipeline(scenes: &str) -> Run {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (data, scalers, run_dir, results) = (root.join("d"), root.join("s"), root.join("run"), root.join("res"));
    let cfg = root.join("cfg.json");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    ok(&["gen-data", "--seed", "7", "--scenes", scenes, "--size", "32", "--out", s(&data)]);
    ok(&["fit-scaler", "--data", s(&data), "--out", s(&scalers)]);
    ok(&[
        "train", "--config", s(&cfg), "--data", s(&data), "--scalers", s(&scalers), "--out", s(&run_dir),
    ]);
    ok(&["infer", "--run", s(&run_dir), "--data", s(&data), "--out", s(&results), "--png"]);
    Run {
        _tmp: tmp,
        data,
        run: run_dir,
        results,
    }
}

fn count_with_suffix(dir: &Path, suffix: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(suffix))
        .count()
}

#[test]
fn gen_data_writes_pairs_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    ok(&["gen-data", "--seed", "7", "--scenes", "10", "--size", "64", "--out", s(&out)]);
    assert_eq!(count_with_suffix(&out, ".lfc"), 10);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn usage_errors_exit_1_with_json() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "usage");

    let out = run(&["gen-data", "--scenes", "3", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1), "missing --seed");
}

#[test]
fn help_exits_0() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gen-data"));
}

#[test]
fn missing_data_dir_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 1, "data": {"dir": "/nonexistent/data"}}"#).unwrap();
    let out = run(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["error"], "io");
    assert_eq!(err["exit"], 2);
}

#[test]
fn unknown_config_key_names_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 1, "model": {"widht": 3}}"#).unwrap();
    let out = run(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    let msg = error_line(&out)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("model.widht"), "{msg}");
}

#[test]
fn expo_without_rate_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 1}"#).unwrap();
    let out = run(&["train", "--config", s(&cfg), "--out", "r", "--schedule", "expo"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plot_on_empty_dir_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["plot", "--results", s(tmp.path()), "--out", s(&tmp.path().join("p"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_is_reproducible() {
    let a = pipeline("15");
    let b = pipeline("15");
    for r in [&a, &b] {
        for name in ["config.json", "run.json", "model.lfta", "loss_trace.csv", "radar_codec.lfta"] {
            assert!(r.run.join(name).exists(), "{name}");
        }
        assert_eq!(count_with_suffix(&r.run.join("checkpoints"), ".lfta"), 2);
        ok(&["eval", "--results", s(&r.results), "--out", s(&r.results.join("report.csv"))]);
    }
    let ra = std::fs::read(a.results.join("report.csv")).unwrap();
    let rb = std::fs::read(b.results.join("report.csv")).unwrap();
    assert_eq!(ra, rb);
    assert!(String::from_utf8_lossy(&ra).starts_with("target,mse,r2,psnr_db,ssim"));

    // 15 scenes leave 3 test chips: 3 result files, 9 prediction PNGs
    assert_eq!(count_with_suffix(&a.results, ".lfta"), 3);
    assert_eq!(count_with_suffix(&a.results, ".png"), 9);

    let (pa, pb) = (a.results.join("plots"), b.results.join("plots"));
    ok(&["plot", "--results", s(&a.results), "--out", s(&pa)]);
    ok(&["plot", "--results", s(&b.results), "--out", s(&pb)]);
    assert_eq!(count_with_suffix(&pa, ".png"), 9);
    for e in std::fs::read_dir(&pa).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(std::fs::read(pa.join(&name)).unwrap(), std::fs::read(pb.join(&name)).unwrap());
    }
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let r = pipeline("15");
    let perfect = r.results.join("perfect");
    std::fs::create_dir_all(&perfect).unwrap();
    for e in std::fs::read_dir(&r.results).unwrap() {
        let path = e.unwrap().path();
        if !path.extension().is_some_and(|x| x == "lfta") {
            continue;
        }
        let mut a = TensorArchive::load(&path).unwrap();
        let take = |a: &TensorArchive, n: &str| match &a.get(n).unwrap().data {
            TensorData::F32(v) => v.clone(),
            TensorData::F64(_) => panic!("f32 expected"),
        };
        let (z, o) = (take(&a, "truth_latent"), take(&a, "truth_optical"));
        for entry in a.entries.iter_mut() {
            match entry.name.as_str() {
                "latent" => entry.data = TensorData::F32(z.clone()),
                "decoded" => entry.data = TensorData::F32(o.clone()),
                _ => {}
            }
        }
        a.save(perfect.join(path.file_name().unwrap())).unwrap();
    }
    let csv = perfect.join("report.csv");
    let json = perfect.join("report.json");
    ok(&["eval", "--results", s(&perfect), "--out", s(&csv), "--json", s(&json)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1].parse::<f64>().unwrap(), 0.0, "{line}");
        assert_eq!(cells[4].parse::<f64>().unwrap(), 1.0, "{line}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["count"], 3);
}

#[test]
fn encode_and_train_codec_write_archives() {
    let r = pipeline("12");
    let codecs = r.run.parent().unwrap().join("codecs");
    let lat = r.run.parent().unwrap().join("lat");
    ok(&["train-codec", "--data", s(&r.data), "--scalers", s(&r.run), "--out", s(&codecs)]);
    ok(&[
        "encode", "--data", s(&r.data), "--scalers", s(&r.run), "--codecs", s(&codecs), "--split", "val", "--out",
        s(&lat),
    ]);
    let a = TensorArchive::load(lat.join("val_latents.lfta")).unwrap();
    assert_eq!(a.meta["format"], "latentflow-latents");
    let ids = a.meta["ids"].as_array().unwrap();
    assert_eq!(a.entries.len(), 2 * ids.len());
    assert_eq!(a.entries[0].shape, vec![16, 16, 16]);
}

#[test]
fn finetune_with_zero_epochs_only_adds_lineage() {
    let r = pipeline("12");
    let out = r.run.parent().unwrap().join("ft");
    ok(&["finetune", "--run", s(&r.run), "--data", s(&r.data), "--epochs", "0", "--out", s(&out)]);
    assert_eq!(
        std::fs::read(r.run.join("model.lfta")).unwrap(),
        std::fs::read(out.join("model.lfta")).unwrap()
    );
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    let lineage = manifest["lineage"].as_array().unwrap();
    assert_eq!(lineage.len(), 2);
    assert_eq!(lineage[1]["action"], "finetune");
    assert_eq!(lineage[1]["epochs"], 0);
}

fn latent_mse(report: &Path) -> f64 {
    let text = std::fs::read_to_string(report).unwrap();
    let line = text.lines().find(|l| l.starts_with("latent,")).unwrap();
    line.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn finetune_adapts_to_a_shifted_domain() {
    let r = pipeline("20");
    let root = r.run.parent().unwrap();
    let shifted = root.join("shifted");
    ok(&[
        "gen-data", "--seed", "11", "--scenes", "20", "--size", "32", "--mixing", "0.3", "0.7", "0.9", "0.1", "--out",
        s(&shifted),
    ]);
    let ft = root.join("ft");
    ok(&["finetune", "--run", s(&r.run), "--data", s(&shifted), "--epochs", "6", "--out", s(&ft)]);
    let mut mses = Vec::new();
    for (name, run_dir) in [("before", &r.run), ("after", &ft)] {
        let res = root.join(format!("res_{name}"));
        ok(&["infer", "--run", s(run_dir), "--data", s(&shifted), "--out", s(&res)]);
        let report = res.join("report.csv");
        ok(&["eval", "--results", s(&res), "--out", s(&report)]);
        mses.push(latent_mse(&report));
    }
    assert!(mses[1] < mses[0], "finetuned {} vs original {}", mses[1], mses[0]);
}
