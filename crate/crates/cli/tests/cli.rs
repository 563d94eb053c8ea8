use std::path::Path;
use std::process::{Command, Output};

use pgcn::datasets::LabeledDataset;
use pgcn::features::FeatureKind;
use serde_json::Value;

fn pgcn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgcn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pgcn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    pgcn(dir, args).status.code().expect("exit code")
}

const SMALL: &[&str] = &["--subjects", "2", "--trials", "8", "--segments", "4", "--channels", "8"];
const TINY_MODEL: &[&str] = &["--k-order", "2", "--dyn-dim", "2", "--static-dim", "3", "--lr", "1e-3"];

fn synth_small(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out", out];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(dir, &args);
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_a_loadable_dataset_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "ds.bin", &["--p-fine", "7", "--scheme", "mped-like"]);
    let ds = LabeledDataset::load(tmp.path().join("ds.bin")).unwrap();
    assert_eq!(ds.len(), 2 * 8 * 4);
    assert!(ds.samples().iter().all(|s| s.fine < 7));
    let manifest = read_json(&tmp.path().join("ds.bin.manifest.json"));
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["flags"]["noise"], 1.0);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "a.bin", &["--seed", "9"]);
    synth_small(tmp.path(), "b.bin", &["--seed", "9"]);
    synth_small(tmp.path(), "c.bin", &["--seed", "10"]);
    let read = |n: &str| std::fs::read(tmp.path().join(n)).unwrap();
    assert_eq!(read("a.bin"), read("b.bin"));
    assert_ne!(read("a.bin"), read("c.bin"));
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "ds.bin", &[]);
    let mut args = vec!["synth", "--out", "ds.bin"];
    args.extend_from_slice(SMALL);
    assert_eq!(code(tmp.path(), &args), 2);
    args.push("--force");
    ok(tmp.path(), &args);
}

#[test]
fn validation_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(tmp.path(), &["synth", "--out", "x.bin", "--p-fine", "5"]), 2);
    assert_eq!(code(tmp.path(), &["synth", "--out", "x.bin", "--scheme", "seed4-like", "--p-fine", "7"]), 2);
    assert_eq!(code(tmp.path(), &["train", "--dataset", "missing.bin", "--out", "t"]), 2);
    assert_eq!(code(tmp.path(), &["synth", "--bogus"]), 2);
}

#[test]
fn custom_scheme_from_coarse_map() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "ds.bin", &["--scheme", "custom", "--coarse-map", "0,0,1,2,2"]);
    let ds = LabeledDataset::load(tmp.path().join("ds.bin")).unwrap();
    assert_eq!(ds.scheme.fine_classes(), 5);
    assert_eq!(ds.scheme.coarse_map(3).unwrap(), 2);
}

#[test]
fn featurize_raw_recordings() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth-raw", "--out", "raw", "--subjects", "1", "--trials", "2", "--seconds", "2"]);
    ok(dir, &["featurize", "--input", "raw", "--out", "de.bin"]);
    ok(dir, &["featurize", "--input", "raw", "--out", "en.bin", "--feature", "energy"]);
    let de = LabeledDataset::load(dir.join("de.bin")).unwrap();
    let en = LabeledDataset::load(dir.join("en.bin")).unwrap();
    assert_eq!(de.feature_kind, Some(FeatureKind::DifferentialEntropy));
    assert_eq!(en.feature_kind, Some(FeatureKind::BandEnergy));
    assert_eq!(de.samples()[0].features.shape(), &[62, 5]);
    assert_eq!(de.len(), 4);
    assert_eq!(code(dir, &["featurize", "--input", "nowhere.raw", "--out", "x.bin"]), 2);
}

#[test]
fn featurize_with_custom_bands() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth-raw", "--out", "raw", "--subjects", "1", "--trials", "1", "--seconds", "2", "--channels", "4"]);
    ok(dir, &["featurize", "--input", "raw", "--out", "f.bin", "--bands", "1-4,4-8,8-14"]);
    let ds = LabeledDataset::load(dir.join("f.bin")).unwrap();
    assert_eq!(ds.band_count(), 3);
    assert_eq!(code(dir, &["featurize", "--input", "raw", "--out", "g.bin", "--bands", "8-4"]), 2);
}

#[test]
fn train_accepts_every_ablation() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "ds.bin", &[]);
    for ablation in ["full", "pgcn-f", "pgcn-d", "pgcn-s"] {
        let out = format!("t-{ablation}");
        let mut args = vec!["train", "--dataset", "ds.bin", "--out", &out, "--epochs", "1", "--ablation", ablation, "--steps", "1"];
        args.extend_from_slice(TINY_MODEL);
        ok(tmp.path(), &args);
        assert!(tmp.path().join(&out).join("checkpoint.bin").exists());
    }
    assert_eq!(code(tmp.path(), &["train", "--dataset", "ds.bin", "--out", "t", "--ablation", "nope"]), 2);
    assert_eq!(code(tmp.path(), &["train", "--dataset", "ds.bin", "--out", "t", "--steps", "0"]), 2);
}

fn log_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn resume_continues_counters() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "ds.bin", &[]);
    let mut args = vec!["train", "--dataset", "ds.bin", "--out", "t", "--epochs", "2", "--batch", "16"];
    args.extend_from_slice(TINY_MODEL);
    ok(tmp.path(), &args);
    let first = log_lines(&tmp.path().join("t/train_log.jsonl"));
    ok(tmp.path(), &["train", "--dataset", "ds.bin", "--out", "t2", "--resume", "t/checkpoint.bin", "--epochs", "3"]);
    let resumed = log_lines(&tmp.path().join("t2/train_log.jsonl"));
    assert_eq!(resumed.len(), 3);
    assert_eq!(resumed[1]["fine_updates"], first[1]["fine_updates"]);
    assert_eq!(resumed[2]["fine_updates"], 12);
    assert_eq!(resumed[2]["epoch"], 2);
}

#[test]
fn eval_on_separable_data_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "ds.bin", &["--noise", "0.05", "--separation", "3"]);
    let mut args = vec!["eval", "--dataset", "ds.bin", "--out", "ev", "--train-trials", "7", "--epochs", "30", "--maps"];
    args.extend_from_slice(TINY_MODEL);
    ok(tmp.path(), &args);
    let report = read_json(&tmp.path().join("ev/report.json"));
    assert_eq!(report["mean_accuracy"], 1.0);
    let map = std::fs::read_to_string(tmp.path().join("ev/scalp_map.csv")).unwrap();
    assert_eq!(map.lines().count(), 1 + 8 * 5);
    assert!(tmp.path().join("ev/confusion.csv").exists());
}

#[test]
fn eval_protocols_and_manifest_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small(dir, "ds.bin", &[]);
    let mut args = vec!["eval", "--dataset", "ds.bin", "--out", "loso", "--protocol", "loso", "--epochs", "1", "--jobs", "2"];
    args.extend_from_slice(TINY_MODEL);
    ok(dir, &args);
    assert_eq!(read_json(&dir.join("loso/report.json"))["folds"].as_array().unwrap().len(), 2);
    ok(dir, &["eval", "--config", "loso/manifest.json", "--out", "replay"]);
    assert_eq!(
        std::fs::read(dir.join("loso/report.json")).unwrap(),
        std::fs::read(dir.join("replay/report.json")).unwrap()
    );
    // 8 trials cannot give the default 21 training trials of the mped-like scheme
    assert_eq!(code(dir, &["eval", "--dataset", "ds.bin", "--out", "sd", "--epochs", "1"]), 2);
}

#[test]
fn toml_config_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("cfg.toml"), "subjects = 3\ntrials = 7\nsegments = 2\nchannels = 4\nseed = 5\n").unwrap();
    ok(dir, &["synth", "--config", "cfg.toml", "--out", "ds.bin", "--subjects", "1"]);
    let ds = LabeledDataset::load(dir.join("ds.bin")).unwrap();
    assert_eq!(ds.subjects(), vec![0]);
    assert_eq!(ds.len(), 7 * 2);
    let manifest = read_json(&dir.join("ds.bin.manifest.json"));
    assert_eq!(manifest["flags"]["seed"], 5);
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["gradcheck", "--out", "gc"]);
    assert!(stdout.contains("passed"));
    let report = read_json(&tmp.path().join("gc/gradcheck.json"));
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(code(tmp.path(), &["gradcheck", "--corrupt-vjp"]), 3);
}
