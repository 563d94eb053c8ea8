//! Evaluation protocols, metrics and interpretability exports.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{LabeledDataset, Sample};
use crate::error::{Error, Result};
use crate::features::BAND_NAMES;
use crate::model::{Pgcn, PgcnConfig};
use crate::trainer::{TrainConfig, TrainLog, Trainer};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Subject whose data forms the test set (LOSO) or the fold's only subject.
    pub subject: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub folds: Vec<Fold>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    SubjectDependent,
    Loso,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subject-dependent" => Ok(Protocol::SubjectDependent),
            "loso" => Ok(Protocol::Loso),
            other => Err(Error::invalid(format!("unknown protocol {other:?}"))),
        }
    }
}

impl SplitPlan {
    /// Fails if any fold has an empty test set or shares samples between train and test.
    pub fn check(&self) -> Result<()> {
        for f in &self.folds {
            if f.test.is_empty() {
                return Err(Error::invalid(format!("fold {} has no test samples", f.id)));
            }
            let train: HashSet<usize> = f.train.iter().copied().collect();
            if let Some(i) = f.test.iter().find(|i| train.contains(i)) {
                return Err(Error::invalid(format!(
                    "fold {} uses sample {i} for both training and testing",
                    f.id
                )));
            }
        }
        Ok(())
    }
}

/// Per subject, the first `train_trials` trials of every session train and
/// the remaining trials test. One fold per subject.
pub fn split_subject_dependent(dataset: &LabeledDataset, train_trials: usize) -> Result<SplitPlan> {
    let mut trials: BTreeMap<(u32, u32), BTreeSet<u32>> = BTreeMap::new();
    for s in dataset.samples() {
        trials.entry((s.subject, s.session)).or_default().insert(s.trial);
    }
    for ((subject, session), ts) in &trials {
        if ts.len() <= train_trials {
            return Err(Error::invalid(format!(
                "subject {subject} session {session} has {} trials, need more than {train_trials}",
                ts.len()
            )));
        }
    }
    let ordinal = |s: &Sample| {
        trials[&(s.subject, s.session)]
            .iter()
            .position(|&t| t == s.trial)
            .expect("trial was indexed above")
    };
    let folds = dataset
        .subjects()
        .into_iter()
        .enumerate()
        .map(|(id, subject)| {
            let mut fold = Fold {
                id,
                train: Vec::new(),
                test: Vec::new(),
                subject: Some(subject),
            };
            for (i, s) in dataset.samples().iter().enumerate() {
                if s.subject != subject {
                    continue;
                }
                if ordinal(s) < train_trials {
                    fold.train.push(i);
                } else {
                    fold.test.push(i);
                }
            }
            fold
        })
        .collect();
    let plan = SplitPlan {
        protocol: Protocol::SubjectDependent,
        folds,
    };
    plan.check()?;
    Ok(plan)
}

/// Leave-one-subject-out: fold `k` tests on subject `k` and trains on everyone else.
pub fn split_loso(dataset: &LabeledDataset) -> Result<SplitPlan> {
    let subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(Error::invalid("leave-one-subject-out needs at least two subjects"));
    }
    let folds = subjects
        .into_iter()
        .enumerate()
        .map(|(id, subject)| {
            let (test, train) = (0..dataset.len()).partition(|&i| dataset.samples()[i].subject == subject);
            Fold {
                id,
                train,
                test,
                subject: Some(subject),
            }
        })
        .collect();
    let plan = SplitPlan {
        protocol: Protocol::Loso,
        folds,
    };
    plan.check()?;
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub subject: Option<u32>,
    pub accuracy: f64,
    pub test_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Population standard deviation of fold accuracies.
    pub std_accuracy: f64,
    /// `confusion[truth][prediction]`, summed over folds.
    pub confusion: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scalp_map: Option<ScalpMap>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Header row of predicted classes, one row per true class.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("truth");
        for name in &self.class_names {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            out.push_str(name);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes `report.json`, `confusion.csv` and, when present, `scalp_map.csv` into `dir`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("confusion.csv"), self.confusion_csv())?;
        if let Some(map) = &self.scalp_map {
            std::fs::write(dir.join("scalp_map.csv"), map.to_csv())?;
        }
        Ok(())
    }
}

/// Mean and population standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Scores `predict(fold, sample)` on every fold's test set.
pub fn evaluate_with(
    dataset: &LabeledDataset,
    plan: &SplitPlan,
    mut predict: impl FnMut(&Fold, &Sample) -> Result<usize>,
) -> Result<RunReport> {
    plan.check()?;
    let p = dataset.scheme.fine_classes();
    let mut confusion = vec![vec![0u64; p]; p];
    let mut folds = Vec::with_capacity(plan.folds.len());
    for fold in &plan.folds {
        let mut correct = 0;
        for &i in &fold.test {
            let s = dataset
                .samples()
                .get(i)
                .ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))?;
            let pred = predict(fold, s)?;
            if pred >= p {
                return Err(Error::Label {
                    label: pred,
                    context: format!("{p} classes"),
                });
            }
            confusion[s.fine][pred] += 1;
            correct += usize::from(pred == s.fine);
        }
        folds.push(FoldResult {
            fold: fold.id,
            subject: fold.subject,
            accuracy: correct as f64 / fold.test.len() as f64,
            test_count: fold.test.len(),
        });
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_and_std(&accs);
    Ok(RunReport {
        folds,
        mean_accuracy,
        std_accuracy,
        confusion,
        class_names: dataset.scheme.class_names(),
        scalp_map: None,
    })
}

/// Scores one trained model per fold.
pub fn evaluate(models: &[Pgcn], dataset: &LabeledDataset, plan: &SplitPlan) -> Result<RunReport> {
    if models.len() != plan.folds.len() {
        return Err(Error::invalid(format!(
            "{} models for {} folds",
            models.len(),
            plan.folds.len()
        )));
    }
    evaluate_with(dataset, plan, |fold, s| {
        Ok(models[fold.id].predict(&s.features)?.1)
    })
}

/// Per-band, per-electrode contribution of the fine dynamic graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalpMap {
    pub channel_names: Vec<String>,
    pub band_names: Vec<String>,
    /// `values[b][i]`, min-max normalized per band.
    pub values: Vec<Vec<f64>>,
}

impl ScalpMap {
    /// Per band, `c_i = mean_samples Σ_j (G[i,j,b] + G[j,i,b]) / 2`, then
    /// min-max normalized; a constant band maps to zeros.
    pub fn from_graphs<'a>(
        graphs: impl IntoIterator<Item = &'a crate::graphgen::DynamicGraph>,
        channel_names: Vec<String>,
        band_names: Vec<String>,
    ) -> Result<Self> {
        let n = channel_names.len();
        let d = band_names.len();
        let mut sums = vec![vec![0.0; n]; d];
        let mut count = 0usize;
        for g in graphs {
            if g.channels() != n || g.bands() != d {
                return Err(Error::shape("scalp map", "graph size does not match the labels"));
            }
            for (b, row) in sums.iter_mut().enumerate() {
                for (i, c) in row.iter_mut().enumerate() {
                    for j in 0..n {
                        *c += 0.5 * (g.get(i, j, b) + g.get(j, i, b));
                    }
                }
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::invalid("scalp map needs at least one sample"));
        }
        for row in &mut sums {
            for c in row.iter_mut() {
                *c /= count as f64;
            }
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            for c in row.iter_mut() {
                *c = if span > 0.0 { (*c - lo) / span } else { 0.0 };
            }
        }
        Ok(Self {
            channel_names,
            band_names,
            values: sums,
        })
    }

    /// `electrode,band,value` with `n·d` data rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("electrode,band,value\n");
        for (b, band) in self.band_names.iter().enumerate() {
            for (i, name) in self.channel_names.iter().enumerate() {
                let _ = writeln!(out, "{name},{band},{}", self.values[b][i]);
            }
        }
        out
    }
}

fn band_labels(d: usize) -> Vec<String> {
    if d == BAND_NAMES.len() {
        BAND_NAMES.map(String::from).to_vec()
    } else {
        (0..d).map(|b| format!("band{b}")).collect()
    }
}

/// Scalp map of `model` over `samples`.
pub fn scalp_map(model: &Pgcn, samples: &[&Sample], channel_names: Vec<String>) -> Result<ScalpMap> {
    if !model.config.ablation.has_dynamic() {
        return Err(Error::invalid("scalp maps need the dynamic graph branch"));
    }
    let graphs = samples
        .iter()
        .map(|s| {
            model
                .forward(&s.features)?
                .g_f
                .ok_or_else(|| Error::invalid("model produced no dynamic graph"))
        })
        .collect::<Result<Vec<_>>>()?;
    ScalpMap::from_graphs(&graphs, channel_names, band_labels(model.config.bands))
}

/// `subject,session,trial,fine,coarse,h0,h1,…` with the flattened `Ĥ` of every sample.
pub fn embeddings_csv(model: &Pgcn, samples: &[&Sample]) -> Result<String> {
    let mut out = String::new();
    for (k, s) in samples.iter().enumerate() {
        let h = model.forward(&s.features)?.h_hat;
        if k == 0 {
            out.push_str("subject,session,trial,fine,coarse");
            for i in 0..h.numel() {
                let _ = write!(out, ",h{i}");
            }
            out.push('\n');
        }
        let _ = write!(out, "{},{},{},{},{}", s.subject, s.session, s.trial, s.fine, s.coarse);
        for v in h.data() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Outcome of training and testing every fold of a plan.
#[derive(Debug)]
pub struct ProtocolRun {
    pub report: RunReport,
    pub models: Vec<Pgcn>,
    pub logs: Vec<TrainLog>,
}

/// Trains one model per fold on its training samples and evaluates it.
/// Folds run on up to `jobs` threads; results do not depend on `jobs`.
pub fn run_protocol(
    dataset: &LabeledDataset,
    plan: &SplitPlan,
    model: &PgcnConfig,
    train: &TrainConfig,
    jobs: usize,
) -> Result<ProtocolRun> {
    plan.check()?;
    let jobs = jobs.max(1).min(plan.folds.len().max(1));
    let train_fold = |fold: &Fold| -> Result<(Pgcn, TrainLog)> {
        let subset = dataset.subset(&fold.train)?;
        let mut t = Trainer::for_dataset(&subset, model.clone(), train.clone())?;
        t.train(&subset)?;
        log::info!(
            "fold {} trained ({} samples, {} epochs)",
            fold.id,
            subset.len(),
            t.epochs_done
        );
        Ok(t.into_parts())
    };
    let mut results: Vec<Option<Result<(Pgcn, TrainLog)>>> = (0..plan.folds.len()).map(|_| None).collect();
    if jobs == 1 {
        for (slot, fold) in results.iter_mut().zip(&plan.folds) {
            *slot = Some(train_fold(fold));
        }
    } else {
        let chunk = plan.folds.len().div_ceil(jobs);
        std::thread::scope(|scope| {
            for (slots, folds) in results.chunks_mut(chunk).zip(plan.folds.chunks(chunk)) {
                let train_fold = &train_fold;
                scope.spawn(move || {
                    for (slot, fold) in slots.iter_mut().zip(folds) {
                        *slot = Some(train_fold(fold));
                    }
                });
            }
        });
    }
    let mut models = Vec::with_capacity(results.len());
    let mut logs = Vec::with_capacity(results.len());
    for r in results {
        let (m, l) = r.expect("every fold slot is filled")?;
        models.push(m);
        logs.push(l);
    }
    let report = evaluate(&models, dataset, plan)?;
    Ok(ProtocolRun { report, models, logs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_generate, LabelScheme, SynthConfig};
    use crate::graphgen::DynamicGraph;
    use crate::numkit::Tensor;

    fn data(subjects: u32, sessions: u32, trials: u32) -> LabeledDataset {
        synth_generate(&SynthConfig {
            subjects,
            sessions,
            trials,
            segments: 2,
            channels: 4,
            bands: 5,
            scheme: LabelScheme::Seed4Like,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn trial_counts(ds: &LabeledDataset, idx: &[usize]) -> BTreeMap<(u32, u32), BTreeSet<u32>> {
        let mut m: BTreeMap<(u32, u32), BTreeSet<u32>> = BTreeMap::new();
        for &i in idx {
            let s = &ds.samples()[i];
            m.entry((s.subject, s.session)).or_default().insert(s.trial);
        }
        m
    }

    #[test]
    fn subject_dependent_16_8() {
        let ds = data(2, 3, 24);
        let plan = split_subject_dependent(&ds, 16).unwrap();
        assert_eq!(plan.folds.len(), 2);
        for f in &plan.folds {
            for ts in trial_counts(&ds, &f.train).values() {
                assert_eq!(ts.iter().copied().collect::<Vec<_>>(), (0..16).collect::<Vec<_>>());
            }
            for ts in trial_counts(&ds, &f.test).values() {
                assert_eq!(ts.len(), 8);
            }
            assert_eq!(trial_counts(&ds, &f.test).len(), 3);
        }
    }

    #[test]
    fn subject_dependent_21_7() {
        let ds = data(2, 1, 28);
        let plan = split_subject_dependent(&ds, 21).unwrap();
        for f in &plan.folds {
            assert_eq!(f.train.len(), 21 * 2);
            assert_eq!(f.test.len(), 7 * 2);
        }
    }

    #[test]
    fn subject_dependent_boundaries() {
        let ds = data(1, 1, 5);
        let plan = split_subject_dependent(&ds, 4).unwrap();
        assert_eq!(trial_counts(&ds, &plan.folds[0].test)[&(0, 0)].len(), 1);
        assert!(split_subject_dependent(&ds, 5).is_err());
    }

    #[test]
    fn loso_partitions_subjects() {
        let ds = data(3, 1, 4);
        let plan = split_loso(&ds).unwrap();
        assert_eq!(plan.folds.len(), 3);
        let mut all: Vec<usize> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        for f in &plan.folds {
            let k = f.subject.unwrap();
            assert!(f.train.iter().all(|&i| ds.samples()[i].subject != k));
            assert!(f.test.iter().all(|&i| ds.samples()[i].subject == k));
            assert_eq!(f.train.len() + f.test.len(), ds.len());
        }
        assert!(split_loso(&data(1, 1, 4)).is_err());
    }

    #[test]
    fn leaky_plan_rejected() {
        let ds = data(2, 1, 4);
        let mut plan = split_loso(&ds).unwrap();
        let leaked = plan.folds[0].test[0];
        plan.folds[0].train.push(leaked);
        assert!(evaluate_with(&ds, &plan, |_, s| Ok(s.fine)).is_err());
        plan.folds[0].test.clear();
        assert!(plan.check().is_err());
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let ds = data(2, 1, 8);
        let plan = split_loso(&ds).unwrap();
        let r = evaluate_with(&ds, &plan, |_, s| Ok(s.fine)).unwrap();
        assert_eq!(r.mean_accuracy, 1.0);
        assert_eq!(r.std_accuracy, 0.0);
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                assert!(i == j || c == 0);
            }
        }
        // 8 trials cycle the 4 classes twice per subject, so the set is balanced.
        let r = evaluate_with(&ds, &plan, |_, _| Ok(0)).unwrap();
        assert_eq!(r.mean_accuracy, 0.25);
    }

    #[test]
    fn hand_counted_confusion() {
        let samples: Vec<Sample> = [(0, 0), (1, 1), (1, 2)]
            .iter()
            .map(|&(fine, trial)| Sample {
                features: Tensor::zeros(&[1, 1]),
                fine,
                coarse: LabelScheme::Seed4Like.coarse_map(fine).unwrap(),
                subject: 0,
                session: 0,
                trial,
            })
            .collect();
        let ds = LabeledDataset::new(
            samples,
            LabelScheme::Seed4Like,
            None,
            vec![crate::features::Band::new(1.0, 4.0)],
            vec!["C".into()],
        )
        .unwrap();
        let plan = SplitPlan {
            protocol: Protocol::SubjectDependent,
            folds: vec![Fold {
                id: 0,
                train: vec![],
                test: vec![0, 1, 2],
                subject: Some(0),
            }],
        };
        let preds = [0, 1, 3];
        let r = evaluate_with(&ds, &plan, |_, s| Ok(preds[s.trial as usize])).unwrap();
        let mut expect = vec![vec![0u64; 4]; 4];
        expect[0][0] = 1;
        expect[1][1] = 1;
        expect[1][3] = 1;
        assert_eq!(r.confusion, expect);
        let trace: u64 = (0..4).map(|i| r.confusion[i][i]).sum();
        assert_eq!(trace as f64 / 3.0, r.mean_accuracy);
        let rows: Vec<u64> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(rows, vec![1, 2, 0, 0]);
        assert!(r.confusion_csv().starts_with("truth,neutral,sad,fear,happy\n"));
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_and_std(&[0.5, 1.0]);
        assert_eq!(m, 0.75);
        assert_eq!(s, 0.25);
    }

    fn graph_with(n: usize, d: usize, f: impl Fn(usize, usize, usize) -> f64) -> DynamicGraph {
        let mut t = Tensor::zeros(&[n, n, d]);
        for i in 0..n {
            for j in 0..n {
                for b in 0..d {
                    t.data_mut()[(i * n + j) * d + b] = f(i, j, b);
                }
            }
        }
        DynamicGraph::from_tensor(t).unwrap()
    }

    fn names(k: usize, prefix: &str) -> Vec<String> {
        (0..k).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn zero_graph_gives_zero_map() {
        let g = graph_with(3, 2, |_, _, _| 0.0);
        let map = ScalpMap::from_graphs([&g], names(3, "e"), names(2, "b")).unwrap();
        assert!(map.values.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(map.to_csv().lines().count(), 1 + 3 * 2);
    }

    #[test]
    fn hub_electrode_is_the_maximum() {
        let g = graph_with(4, 2, |i, j, _| if i == 0 || j == 0 { 1.0 } else { 0.1 });
        let map = ScalpMap::from_graphs([&g], names(4, "e"), names(2, "b")).unwrap();
        for band in &map.values {
            assert_eq!(band[0], 1.0);
            assert!(band[1..].iter().all(|&v| v < 1.0));
        }
    }

    #[test]
    fn scalp_map_ignores_sample_order() {
        let a = graph_with(3, 1, |i, j, _| (i + 2 * j) as f64);
        let b = graph_with(3, 1, |i, j, _| (i * j) as f64);
        let m1 = ScalpMap::from_graphs([&a, &b], names(3, "e"), names(1, "b")).unwrap();
        let m2 = ScalpMap::from_graphs([&b, &a], names(3, "e"), names(1, "b")).unwrap();
        assert_eq!(m1, m2);
        assert!(ScalpMap::from_graphs(std::iter::empty(), names(3, "e"), names(1, "b")).is_err());
    }

    #[test]
    fn protocol_runner_is_thread_count_independent() {
        let ds = synth_generate(&SynthConfig {
            subjects: 3,
            trials: 5,
            segments: 2,
            channels: 8,
            bands: 3,
            scheme: LabelScheme::Seed4Like,
            ..SynthConfig::default()
        })
        .unwrap();
        let model = PgcnConfig {
            fine_classes: 4,
            ..PgcnConfig::toy()
        };
        let train = TrainConfig {
            epochs: 2,
            lr: 1e-3,
            batch: 4,
            ..Default::default()
        };
        let plan = split_subject_dependent(&ds, 4).unwrap();
        let a = run_protocol(&ds, &plan, &model, &train, 1).unwrap();
        let b = run_protocol(&ds, &plan, &model, &train, 3).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.models.len(), 3);
        let refs: Vec<&Sample> = ds.samples().iter().take(3).collect();
        let map = scalp_map(&a.models[0], &refs, ds.channel_names.clone()).unwrap();
        assert_eq!(map.to_csv().lines().count(), 1 + 8 * 3);
        let csv = embeddings_csv(&a.models[0], &refs).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }
}
