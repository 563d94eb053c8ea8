use std::path::{Path, PathBuf};

use pgcn::datasets::{self, LabeledDataset, SynthConfig};
use pgcn::eval::{self, Protocol, ScalpMap};
use pgcn::features::{self, FeatureKind, RawRecording, RecordingIds, DEFAULT_BANDS};
use pgcn::model::{self, Ablation, Pgcn, PgcnConfig};
use pgcn::montage;
use pgcn::trainer::{self, OptimizerKind, TrainConfig, Trainer};
use pgcn::{rng, Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::settings::*;

/// Snapshot of a run, written beside its outputs.
#[derive(Serialize)]
struct RunManifest<'a, F: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    /// Fully materialized flags; accepted back by `--config`.
    flags: &'a F,
    resolved: &'a R,
    artifacts: Vec<String>,
}

fn write_manifest<F: Serialize, R: Serialize>(
    path: &Path,
    command: &str,
    flags: &F,
    resolved: &R,
    artifacts: &[&Path],
) -> Result<()> {
    let m = RunManifest {
        tool: "pgcn",
        version: env!("CARGO_PKG_VERSION"),
        command,
        flags,
        resolved,
        artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("missing required flag --{flag}")))
}

fn check_file_target(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::InvalidArgument(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn check_dir_target(dir: &Path, force: bool) -> Result<()> {
    let occupied = dir.exists() && std::fs::read_dir(dir)?.next().is_some();
    if occupied && !force {
        return Err(Error::InvalidArgument(format!(
            "{} is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn manifest_beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    file.with_file_name(name)
}

fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    LabeledDataset::load(path).map_err(|e| match e {
        Error::Io(io) => Error::InvalidArgument(format!("cannot read dataset {}: {io}", path.display())),
        other => other,
    })
}

pub fn synth(flags: SynthFlags, config: Option<&Path>, force: bool) -> Result<()> {
    let mut f: SynthFlags = merge_with_config(&flags, config)?;
    let d = SynthConfig::default();
    let scheme = resolve_scheme(f.scheme.as_deref(), f.p_fine, f.coarse_map.as_deref())?;
    let cfg = SynthConfig {
        subjects: *f.subjects.get_or_insert(d.subjects),
        sessions: *f.sessions.get_or_insert(d.sessions),
        trials: *f.trials.get_or_insert(d.trials),
        segments: *f.segments.get_or_insert(d.segments),
        channels: *f.channels.get_or_insert(d.channels),
        bands: *f.band_count.get_or_insert(d.bands),
        separation: *f.separation.get_or_insert(d.separation),
        subject_effect: *f.subject_effect.get_or_insert(d.subject_effect),
        noise: *f.noise.get_or_insert(d.noise),
        seed: *f.seed.get_or_insert(d.seed),
        scheme: scheme.clone(),
    };
    f.scheme = Some(scheme.name().to_string());
    f.p_fine = Some(scheme.fine_classes());
    let out = required(&f.out, "out")?.clone();
    check_file_target(&out, force)?;
    let ds = datasets::synth_generate(&cfg)?;
    ds.save(&out)?;
    let manifest = manifest_beside(&out);
    write_manifest(&manifest, "synth", &f, &cfg, &[&out])?;
    println!("wrote {} samples to {}", ds.len(), out.display());
    Ok(())
}

pub fn synth_raw(flags: SynthRawFlags, config: Option<&Path>, force: bool) -> Result<()> {
    let mut f: SynthRawFlags = merge_with_config(&flags, config)?;
    let scheme = resolve_scheme(f.scheme.as_deref(), None, None)?;
    f.scheme = Some(scheme.name().to_string());
    let cfg = SynthConfig {
        subjects: *f.subjects.get_or_insert(2),
        trials: *f.trials.get_or_insert(scheme.fine_classes() as u32),
        channels: *f.channels.get_or_insert(62),
        separation: *f.separation.get_or_insert(1.0),
        noise: *f.noise.get_or_insert(0.5),
        seed: *f.seed.get_or_insert(0),
        scheme: scheme.clone(),
        ..SynthConfig::default()
    };
    let seconds = *f.seconds.get_or_insert(4.0);
    let fs = *f.fs.get_or_insert(200.0);
    let out = required(&f.out, "out")?.clone();
    check_dir_target(&out, force)?;
    let mut files = Vec::new();
    for subject in 0..cfg.subjects {
        for trial in 0..cfg.trials {
            let ids = RecordingIds {
                subject,
                session: 0,
                trial,
                label: Some(datasets::trial_class(subject, trial, scheme.fine_classes())),
            };
            let rec = datasets::synth_recording(&cfg, ids, seconds, fs)?;
            let path = out.join(format!("s{subject:02}_t{trial:02}.raw"));
            rec.save(&path)?;
            files.push(path);
        }
    }
    let refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    write_manifest(&out.join("manifest.json"), "synth-raw", &f, &cfg, &refs)?;
    println!("wrote {} recordings to {}", files.len(), out.display());
    Ok(())
}

fn recording_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "raw"))
                .collect();
            found.sort();
            files.extend(found);
        } else if input.is_file() {
            files.push(input.clone());
        } else {
            return Err(Error::InvalidArgument(format!("no such file: {}", input.display())));
        }
    }
    if files.is_empty() {
        return Err(Error::InvalidArgument("no recording files found".into()));
    }
    Ok(files)
}

pub fn featurize(flags: FeaturizeFlags, config: Option<&Path>, force: bool) -> Result<()> {
    let mut f: FeaturizeFlags = merge_with_config(&flags, config)?;
    let kind: FeatureKind = f.feature.get_or_insert_with(|| "de".into()).parse()?;
    let bands = match &f.bands {
        Some(spec) => features::parse_bands(spec)?,
        None => DEFAULT_BANDS.to_vec(),
    };
    f.bands = Some(
        bands
            .iter()
            .map(|b| format!("{}-{}", b.lo, b.hi))
            .collect::<Vec<_>>()
            .join(","),
    );
    let scheme = resolve_scheme(f.scheme.as_deref(), None, f.coarse_map.as_deref())?;
    f.scheme = Some(scheme.name().to_string());
    let files = recording_files(required(&f.input, "input")?)?;
    let out = required(&f.out, "out")?.clone();
    check_file_target(&out, force)?;
    let mut recordings = files
        .iter()
        .map(|p| {
            RawRecording::load(p).map_err(|e| match e {
                Error::Io(io) => Error::InvalidArgument(format!("cannot read {}: {io}", p.display())),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    recordings.sort_by_key(|r| (r.ids.subject, r.ids.session, r.ids.trial));
    let ds = LabeledDataset::from_recordings(&recordings, kind, &bands, scheme)?;
    ds.save(&out)?;
    let resolved = json!({
        "feature_kind": kind.name(),
        "bands": bands,
        "scheme": ds.scheme,
        "recordings": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    write_manifest(&manifest_beside(&out), "featurize", &f, &resolved, &[&out])?;
    println!(
        "featurized {} recordings into {} samples of {}x{} ({})",
        recordings.len(),
        ds.len(),
        ds.channels(),
        ds.band_count(),
        kind.name()
    );
    Ok(())
}

/// Model and training configuration for `ds`, materializing defaults into `f`.
fn resolve_model(f: &mut ModelFlags, ds: &LabeledDataset) -> Result<(PgcnConfig, TrainConfig)> {
    let md = PgcnConfig::default();
    let td = TrainConfig::default();
    let ablation: Ablation = f.ablation.get_or_insert_with(|| "full".into()).parse()?;
    let optimizer: OptimizerKind = f.optimizer.get_or_insert_with(|| "adam".into()).parse()?;
    let seed = *f.seed.get_or_insert(0);
    let dyn_dim = *f.dyn_dim.get_or_insert(md.fine_dynamic_dim);
    let static_dim = *f.static_dim.get_or_insert(md.fine_static_dim);
    let model = PgcnConfig {
        channels: ds.channels(),
        bands: ds.band_count(),
        order: *f.k_order.get_or_insert(md.order),
        coarse_dynamic_dim: dyn_dim,
        coarse_static_dim: static_dim,
        fine_dynamic_dim: dyn_dim,
        fine_static_dim: static_dim,
        coarse_classes: ds.scheme.coarse_classes(),
        fine_classes: ds.scheme.fine_classes(),
        static_radius: *f.radius.get_or_insert(montage::default_radius(ds.channels())),
        ablation,
        seed,
    };
    model.validate()?;
    let train = TrainConfig {
        epochs: *f.epochs.get_or_insert(td.epochs),
        lr: *f.lr.get_or_insert(td.lr),
        steps: *f.steps.get_or_insert(td.steps),
        batch: *f.batch.get_or_insert(td.batch),
        seed,
        optimizer,
        normalize_inputs: td.normalize_inputs,
    };
    train.validate()?;
    Ok((model, train))
}

pub fn train(flags: TrainFlags, config: Option<&Path>, force: bool) -> Result<()> {
    let mut f: TrainFlags = merge_with_config(&flags, config)?;
    let dataset_path = required(&f.model.dataset, "dataset")?.clone();
    let ds = load_dataset(&dataset_path)?;
    let out = required(&f.out, "out")?.clone();
    let mut trainer = match f.resume.clone() {
        Some(ckpt) => {
            let mut t = Trainer::load_checkpoint(&ckpt)?;
            trainer::check_compatible(&ds, &t.model.config)?;
            if let Some(e) = f.model.epochs {
                t.config.epochs = e;
            }
            f.model.epochs = Some(t.config.epochs);
            t
        }
        None => {
            let (model, train) = resolve_model(&mut f.model, &ds)?;
            Trainer::for_dataset(&ds, model, train)?
        }
    };
    if f.resume.is_none() || out.exists() {
        check_dir_target(&out, force || f.resume.is_some())?;
    } else {
        std::fs::create_dir_all(&out)?;
    }
    trainer.train(&ds)?;
    let ckpt = out.join("checkpoint.bin");
    let log = out.join("train_log.jsonl");
    trainer.save_checkpoint(&ckpt)?;
    trainer.log.write_jsonl(&log)?;
    let resolved = json!({ "model": trainer.model.config, "train": trainer.config });
    write_manifest(&out.join("manifest.json"), "train", &f, &resolved, &[&ckpt, &log])?;
    if let Some(last) = trainer.log.last() {
        println!(
            "epoch {}: fine loss {:.4}, train accuracy {:.3}, {} fine / {} coarse updates",
            last.epoch, last.fine_loss, last.train_accuracy, last.fine_updates, last.coarse_updates
        );
    }
    Ok(())
}

pub fn eval(flags: EvalFlags, config: Option<&Path>, force: bool) -> Result<()> {
    let mut f: EvalFlags = merge_with_config(&flags, config)?;
    let ds = load_dataset(required(&f.model.dataset, "dataset")?)?;
    let (model, train) = resolve_model(&mut f.model, &ds)?;
    let protocol: Protocol = f
        .protocol
        .get_or_insert_with(|| "subject-dependent".into())
        .parse()?;
    let plan = match protocol {
        Protocol::SubjectDependent => {
            let default_trials = match ds.scheme.fine_classes() {
                4 => Some(16),
                7 => Some(21),
                _ => None,
            };
            let n = f.train_trials.or(default_trials).ok_or_else(|| {
                Error::InvalidArgument("--train-trials is required for custom schemes".into())
            })?;
            f.train_trials = Some(n);
            eval::split_subject_dependent(&ds, n)?
        }
        Protocol::Loso => eval::split_loso(&ds)?,
    };
    let jobs = *f.jobs.get_or_insert(1);
    let out = required(&f.out, "out")?.clone();
    check_dir_target(&out, force)?;

    let mut run = eval::run_protocol(&ds, &plan, &model, &train, jobs)?;
    let mut artifacts = vec![out.join("report.json"), out.join("confusion.csv")];
    if f.maps {
        let mut graphs = Vec::new();
        for (fold, m) in plan.folds.iter().zip(&run.models) {
            for &i in &fold.test {
                if let Some(g) = m.forward(&ds.samples()[i].features)?.g_f {
                    graphs.push(g);
                }
            }
        }
        if graphs.is_empty() {
            return Err(Error::InvalidArgument(
                "--maps needs the dynamic graph branch (not pgcn-s)".into(),
            ));
        }
        let bands = if ds.band_count() == features::BAND_NAMES.len() {
            features::BAND_NAMES.map(String::from).to_vec()
        } else {
            (0..ds.band_count()).map(|b| format!("band{b}")).collect()
        };
        run.report.scalp_map = Some(ScalpMap::from_graphs(&graphs, ds.channel_names.clone(), bands)?);
        artifacts.push(out.join("scalp_map.csv"));
    }
    run.report.write_files(&out)?;
    if f.embeddings {
        let path = out.join("embeddings.csv");
        let mut csv = String::new();
        for (fold, m) in plan.folds.iter().zip(&run.models) {
            let samples: Vec<_> = fold.test.iter().map(|&i| &ds.samples()[i]).collect();
            let part = eval::embeddings_csv(m, &samples)?;
            // keep the header from the first fold only
            let skip = usize::from(!csv.is_empty());
            for line in part.lines().skip(skip) {
                csv.push_str(line);
                csv.push('\n');
            }
        }
        std::fs::write(&path, csv)?;
        artifacts.push(path);
    }
    for (k, log) in run.logs.iter().enumerate() {
        let path = out.join(format!("fold{k:02}_train_log.jsonl"));
        log.write_jsonl(&path)?;
        artifacts.push(path);
    }
    let resolved = json!({ "model": model, "train": train, "protocol": protocol, "folds": plan.folds.len() });
    let refs: Vec<&Path> = artifacts.iter().map(PathBuf::as_path).collect();
    write_manifest(&out.join("manifest.json"), "eval", &f, &resolved, &refs)?;
    println!(
        "{:?}: ACC {:.2}% / STD {:.2}% over {} folds",
        protocol,
        100.0 * run.report.mean_accuracy,
        100.0 * run.report.std_accuracy,
        run.report.folds.len()
    );
    Ok(())
}

/// Returns whether the check passed.
pub fn gradcheck(flags: GradcheckFlags, config: Option<&Path>, force: bool) -> Result<bool> {
    let mut f: GradcheckFlags = merge_with_config(&flags, config)?;
    let seed = *f.seed.get_or_insert(0);
    let eps = *f.eps.get_or_insert(1e-5);
    let tol = *f.tol.get_or_insert(1e-4);
    let cfg = PgcnConfig {
        seed,
        ..PgcnConfig::toy()
    };
    let m = Pgcn::new(cfg.clone())?;
    let x = rng::normal_tensor(&mut rng::stream(seed, 7), &[cfg.channels, cfg.bands], 1.0);
    let (coarse, fine) = ((seed % 3) as usize, (seed % 5) as usize);
    let report = model::gradient_check(&m, &x, coarse, fine, eps, f.corrupt_vjp)?;
    let passed = report.passes(tol);
    let summary: Value = json!({
        "passed": passed,
        "max_rel_error": report.max_rel_error(),
        "fine_max_rel_error": report.fine.max_rel_error,
        "coarse_max_rel_error": report.coarse.as_ref().map(|r| r.max_rel_error),
        "coordinates": report.coordinates(),
        "tolerance": tol,
        "eps": eps,
    });
    if let Some(out) = f.out.clone() {
        check_dir_target(&out, force)?;
        let path = out.join("gradcheck.json");
        std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
        write_manifest(&out.join("manifest.json"), "gradcheck", &f, &cfg, &[&path])?;
    }
    println!(
        "gradcheck {}: max relative error {:.3e} over {} coordinates (tolerance {tol:e})",
        if passed { "passed" } else { "FAILED" },
        report.max_rel_error(),
        report.coordinates()
    );
    Ok(passed)
}
