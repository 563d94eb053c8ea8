//! Staggered dual-head optimization.
//!
//! Every mini-batch iteration runs both heads and both losses. Fine-head
//! parameters step every iteration; coarse-head parameters step only when the
//! global iteration index is a multiple of `steps`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::container::{self, CHECKPOINT_MAGIC};
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{InputNorm, Pgcn, PgcnConfig, PgcnParams};
use crate::montage::StaticGraph;
use crate::numkit::Tensor;
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Coarse-update period.
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Standardize each band column with training-set statistics.
    pub normalize_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-4,
            steps: 4,
            batch: 32,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            normalize_inputs: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state for one group of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    /// Steps taken so far.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &[&Tensor]) -> Self {
        let zeros = || -> Vec<Tensor> {
            match kind {
                OptimizerKind::Adam => params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
                OptimizerKind::Sgd => Vec::new(),
            }
        };
        Self {
            kind,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// `θ ← θ − lr·g` for SGD; bias-corrected Adam otherwise.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} parameters, {} gradients", params.len(), grads.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "optimizer",
                    format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite("gradient".into()));
            }
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (x, dx) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= lr * dx;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != grads.len() {
                    return Err(Error::shape("optimizer", "Adam state does not match parameters"));
                }
                let t = self.t as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    let it = p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut());
                    for (((x, &dx), mi), vi) in it {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * dx;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * dx * dx;
                        *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Bitwise hash of a parameter group.
pub fn params_hash(tensors: &[&Tensor]) -> u64 {
    let mut h = DefaultHasher::new();
    for t in tensors {
        t.shape().hash(&mut h);
        for v in t.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample fine loss over the epoch.
    pub fine_loss: f64,
    pub coarse_loss: Option<f64>,
    pub train_accuracy: f64,
    pub wall_time_s: f64,
    pub iterations: u64,
    pub fine_updates: u64,
    pub coarse_updates: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// What one iteration did.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationReport {
    pub iteration: u64,
    pub fine_loss: f64,
    pub coarse_loss: Option<f64>,
    pub correct: usize,
    pub coarse_updated: bool,
}

/// Mutable training state: the model, both optimizers and the counters.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Pgcn,
    pub config: TrainConfig,
    pub fine_opt: Optimizer,
    pub coarse_opt: Option<Optimizer>,
    /// Global mini-batch iteration index of the next iteration.
    pub iteration: u64,
    pub epochs_done: usize,
    pub fine_updates: u64,
    pub coarse_updates: u64,
    pub log: TrainLog,
}

impl Trainer {
    pub fn new(model: Pgcn, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let fine_opt = Optimizer::new(config.optimizer, &model.params.fine_tensors());
        let coarse_opt = model
            .params
            .coarse
            .as_ref()
            .map(|c| Optimizer::new(config.optimizer, &c.tensors()));
        Ok(Self {
            model,
            config,
            fine_opt,
            coarse_opt,
            iteration: 0,
            epochs_done: 0,
            fine_updates: 0,
            coarse_updates: 0,
            log: TrainLog::default(),
        })
    }

    /// Fresh model sized for `dataset`, with input statistics from it when enabled.
    pub fn for_dataset(dataset: &LabeledDataset, model: PgcnConfig, config: TrainConfig) -> Result<Self> {
        check_compatible(dataset, &model)?;
        let mut pgcn = Pgcn::new(model)?;
        if config.normalize_inputs && !dataset.is_empty() {
            pgcn.input_norm = Some(InputNorm::fit(dataset.samples().iter().map(|s| &s.features))?);
        }
        Self::new(pgcn, config)
    }

    /// One mini-batch: summed losses, fine step, and a coarse step when
    /// `iteration % steps == 0`.
    pub fn iteration(&mut self, dataset: &LabeledDataset, batch: &[usize]) -> Result<IterationReport> {
        if batch.is_empty() {
            return Err(Error::invalid("empty mini-batch"));
        }
        let iteration = self.iteration;
        let diverged = |detail: String| Error::Divergence { iteration, detail };
        let mut fine_grads: Option<Vec<Tensor>> = None;
        let mut coarse_grads: Option<Vec<Tensor>> = None;
        let mut fine_loss = 0.0;
        let mut coarse_loss: Option<f64> = None;
        let mut correct = 0;
        for &i in batch {
            let s = dataset
                .samples()
                .get(i)
                .ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))?;
            let g = self
                .model
                .sample_gradients(&s.features, s.coarse, s.fine)
                .map_err(|e| match e {
                    Error::NonFinite(what) => diverged(format!("non-finite {what}")),
                    other => other,
                })?;
            fine_loss += g.fine_loss;
            if let Some(lc) = g.coarse_loss {
                *coarse_loss.get_or_insert(0.0) += lc;
            }
            correct += usize::from(g.fine_prediction == s.fine);
            accumulate(&mut fine_grads, g.fine)?;
            accumulate(&mut coarse_grads, g.coarse)?;
        }
        if !fine_loss.is_finite() || coarse_loss.is_some_and(|l| !l.is_finite()) {
            return Err(diverged(format!("loss {fine_loss} / {coarse_loss:?}")));
        }
        let lr = self.config.lr;
        let numerical = |e: Error| match e {
            Error::NonFinite(what) => diverged(format!("non-finite {what}")),
            other => other,
        };
        self.fine_opt
            .step(self.model.params.fine_tensors_mut(), &fine_grads.unwrap_or_default(), lr)
            .map_err(numerical)?;
        self.fine_updates += 1;
        let mut coarse_updated = false;
        if let Some(opt) = &mut self.coarse_opt {
            if iteration.is_multiple_of(self.config.steps) {
                opt.step(
                    self.model.params.coarse_tensors_mut(),
                    &coarse_grads.unwrap_or_default(),
                    lr,
                )
                .map_err(numerical)?;
                self.coarse_updates += 1;
                coarse_updated = true;
            }
        }
        if !self.model.params.all_finite() {
            return Err(diverged("parameters became non-finite".into()));
        }
        self.iteration += 1;
        Ok(IterationReport {
            iteration,
            fine_loss,
            coarse_loss,
            correct,
            coarse_updated,
        })
    }

    /// Shuffled order for epoch `epoch`. The stream depends only on the seed
    /// and the epoch index, so resumed runs see the same order.
    pub fn epoch_order(&self, len: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng::stream(self.config.seed, 1_000 + epoch as u64));
        order
    }

    pub fn run_epoch(&mut self, dataset: &LabeledDataset) -> Result<EpochRecord> {
        if dataset.is_empty() {
            return Err(Error::invalid("cannot train on an empty dataset"));
        }
        let start = Instant::now();
        let order = self.epoch_order(dataset.len(), self.epochs_done);
        let mut fine = 0.0;
        let mut coarse: Option<f64> = None;
        let mut correct = 0;
        for batch in order.chunks(self.config.batch) {
            let r = self.iteration(dataset, batch)?;
            fine += r.fine_loss;
            if let Some(c) = r.coarse_loss {
                *coarse.get_or_insert(0.0) += c;
            }
            correct += r.correct;
        }
        let n = dataset.len() as f64;
        let record = EpochRecord {
            epoch: self.epochs_done,
            fine_loss: fine / n,
            coarse_loss: coarse.map(|c| c / n),
            train_accuracy: correct as f64 / n,
            wall_time_s: start.elapsed().as_secs_f64(),
            iterations: self.iteration,
            fine_updates: self.fine_updates,
            coarse_updates: self.coarse_updates,
        };
        log::debug!(
            "epoch {} fine loss {:.4} train acc {:.3}",
            record.epoch,
            record.fine_loss,
            record.train_accuracy
        );
        self.epochs_done += 1;
        self.log.epochs.push(record.clone());
        Ok(record)
    }

    /// Runs until `config.epochs` epochs have been completed in total.
    pub fn train(&mut self, dataset: &LabeledDataset) -> Result<&TrainLog> {
        check_compatible(dataset, &self.model.config)?;
        while self.epochs_done < self.config.epochs {
            self.run_epoch(dataset)?;
        }
        Ok(&self.log)
    }

    pub fn into_parts(self) -> (Pgcn, TrainLog) {
        (self.model, self.log)
    }
}

fn accumulate(total: &mut Option<Vec<Tensor>>, grads: Vec<Tensor>) -> Result<()> {
    match total {
        None => *total = Some(grads),
        Some(acc) => {
            for (a, g) in acc.iter_mut().zip(&grads) {
                a.add_assign(g)?;
            }
        }
    }
    Ok(())
}

pub fn check_compatible(dataset: &LabeledDataset, model: &PgcnConfig) -> Result<()> {
    if dataset.channels() != model.channels || dataset.band_count() != model.bands {
        return Err(Error::shape(
            "train",
            format!(
                "dataset is {}×{}, model expects {}×{}",
                dataset.channels(),
                dataset.band_count(),
                model.channels,
                model.bands
            ),
        ));
    }
    if dataset.scheme.fine_classes() != model.fine_classes {
        return Err(Error::invalid(format!(
            "dataset has {} fine classes, model {}",
            dataset.scheme.fine_classes(),
            model.fine_classes
        )));
    }
    if model.ablation.has_coarse_head() && dataset.scheme.coarse_classes() != model.coarse_classes {
        return Err(Error::invalid(format!(
            "dataset has {} coarse classes, model {}",
            dataset.scheme.coarse_classes(),
            model.coarse_classes
        )));
    }
    Ok(())
}

/// Trains a fresh model on `dataset`.
pub fn train(
    dataset: &LabeledDataset,
    model: PgcnConfig,
    config: TrainConfig,
) -> Result<(Pgcn, TrainLog)> {
    let mut t = Trainer::for_dataset(dataset, model, config)?;
    t.train(dataset)?;
    Ok(t.into_parts())
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model: PgcnConfig,
    train: TrainConfig,
    input_norm: Option<InputNorm>,
    iteration: u64,
    epochs_done: usize,
    fine_updates: u64,
    coarse_updates: u64,
    fine_opt_t: u64,
    coarse_opt_t: Option<u64>,
    log: TrainLog,
    /// Names and shapes of the payload tensors, in order.
    tensors: Vec<(String, Vec<usize>)>,
}

impl Trainer {
    fn payload(&self) -> Vec<(String, &Tensor)> {
        let p = &self.model.params;
        let mut out: Vec<(String, &Tensor)> = p.all_tensor_names().into_iter().zip(p.all_tensors()).collect();
        out.push(("static_graph".into(), self.model.static_graph.adjacency()));
        let mut groups = vec![("fine_opt", &self.fine_opt)];
        if let Some(c) = &self.coarse_opt {
            groups.push(("coarse_opt", c));
        }
        for (prefix, o) in groups {
            for (moment, ts) in [("m", &o.m), ("v", &o.v)] {
                for (i, t) in ts.iter().enumerate() {
                    out.push((format!("{prefix}.{moment}{i}"), t));
                }
            }
        }
        out
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let payload = self.payload();
        let header = CheckpointHeader {
            model: self.model.config.clone(),
            train: self.config.clone(),
            input_norm: self.model.input_norm.clone(),
            iteration: self.iteration,
            epochs_done: self.epochs_done,
            fine_updates: self.fine_updates,
            coarse_updates: self.coarse_updates,
            fine_opt_t: self.fine_opt.t,
            coarse_opt_t: self.coarse_opt.as_ref().map(|o| o.t),
            log: self.log.clone(),
            tensors: payload.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect(),
        };
        let values: Vec<f64> = payload.iter().flat_map(|(_, t)| t.data().iter().copied()).collect();
        container::encode(CHECKPOINT_MAGIC, &header, &values)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, values): (CheckpointHeader, Vec<f64>) = container::decode(CHECKPOINT_MAGIC, bytes)?;
        let mut tensors = Vec::with_capacity(h.tensors.len());
        let mut offset = 0;
        for (name, shape) in &h.tensors {
            let len: usize = shape.iter().product();
            let chunk = values
                .get(offset..offset + len)
                .ok_or_else(|| Error::Format(format!("checkpoint payload ends inside {name}")))?;
            tensors.push(Tensor::new(shape.clone(), chunk.to_vec())?);
            offset += len;
        }
        if offset != values.len() {
            return Err(Error::Format("checkpoint payload has trailing values".into()));
        }
        let mut params = PgcnParams::init(&h.model, 0)?;
        let n_params = params.all_tensors().len();
        let mut it = tensors.into_iter();
        for dst in params.all_tensors_mut() {
            let src = it
                .next()
                .ok_or_else(|| Error::Format("checkpoint is missing parameters".into()))?;
            if src.shape() != dst.shape() {
                return Err(Error::Format("checkpoint parameter shapes do not match".into()));
            }
            *dst = src;
        }
        let graph = it
            .next()
            .ok_or_else(|| Error::Format("checkpoint is missing the static graph".into()))?;
        let model = Pgcn::from_parts(
            h.model,
            params,
            StaticGraph::from_adjacency(graph)?,
            h.input_norm,
        )?;
        let mut trainer = Trainer::new(model, h.train)?;
        let rest: Vec<Tensor> = it.collect();
        let fine_n = trainer.fine_opt.m.len();
        let coarse_n = trainer.coarse_opt.as_ref().map_or(0, |o| o.m.len());
        if rest.len() != 2 * (fine_n + coarse_n) {
            return Err(Error::Format(format!(
                "checkpoint optimizer state has {} tensors for {n_params} parameters",
                rest.len()
            )));
        }
        let mut rest = rest.into_iter();
        trainer.fine_opt.m = rest.by_ref().take(fine_n).collect();
        trainer.fine_opt.v = rest.by_ref().take(fine_n).collect();
        trainer.fine_opt.t = h.fine_opt_t;
        if let Some(o) = &mut trainer.coarse_opt {
            o.m = rest.by_ref().take(coarse_n).collect();
            o.v = rest.by_ref().take(coarse_n).collect();
            o.t = h.coarse_opt_t.unwrap_or(0);
        }
        trainer.iteration = h.iteration;
        trainer.epochs_done = h.epochs_done;
        trainer.fine_updates = h.fine_updates;
        trainer.coarse_updates = h.coarse_updates;
        trainer.log = h.log;
        Ok(trainer)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.checkpoint_bytes()?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
    }
}
