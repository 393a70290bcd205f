//! Optimisation: Adam, gradient clipping, KL-weight schedules and the epoch
//! loop with logging, checkpointing and resume.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diff::rng::purpose;
use crate::diff::{RngStream, Tensor};
use crate::error::{Error, Result};
use crate::model::{forward, parse_value, Batch, Checkpoint, ModelConfig, ParameterStore, Variant, Weights};
use crate::textdata::TokenSequence;

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for a set of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Adam {
    pub config: AdamConfig,
    /// Completed (non-skipped) updates.
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, ..Self::default() }
    }

    /// One bias-corrected Adam update of every parameter that has a gradient.
    ///
    /// Returns `false`, leaving everything untouched, when any gradient is
    /// non-finite.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a String, &'a mut Tensor)>,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<bool> {
        if !(lr > 0.0) {
            return Err(Error::domain("learning rate must be positive"));
        }
        if grads.values().any(|g| !g.is_finite()) {
            return Ok(false);
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, p) in params {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.shape() {
                return Err(Error::contract(format!("gradient for {name} has shape {:?}, parameter {:?}", g.shape(), p.shape())));
            }
            let [r, c] = p.shape();
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(r, c));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(r, c));
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
        Ok(true)
    }
}

/// Global L2 norm over all gradients.
pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads.values().map(Tensor::squared_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm.is_finite() && norm > max_norm {
        let k = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}

/// KL-weight schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant,
    /// Weights rise linearly from 0 to their targets over `warmup` steps.
    Linear { warmup: u64 },
}

impl Schedule {
    pub fn weights(&self, target: Weights, step: u64) -> Weights {
        match *self {
            Schedule::Constant => target,
            Schedule::Linear { warmup } => {
                let f = if warmup == 0 { 1.0 } else { (step as f64 / warmup as f64).min(1.0) };
                Weights { psi: f * target.psi, lambda: f * target.lambda }
            }
        }
    }
}

/// Optimisation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub clip_norm: f64,
    /// Write a checkpoint every this many epochs (0: final epoch only).
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 8e-4,
            batch_size: 32,
            epochs: 5,
            seed: 0,
            schedule: Schedule::Constant,
            clip_norm: 5.0,
            checkpoint_every: 1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 11] = [
        "learning_rate",
        "batch_size",
        "epochs",
        "seed",
        "schedule",
        "warmup_steps",
        "clip_norm",
        "checkpoint_every",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
    ];

    pub fn validate(&self, variant: Variant) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        if self.batch_size == 0 || (variant == Variant::MatVae && self.batch_size < 2) {
            return fail("batch_size must be at least 1 (2 for MATVAE)");
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return fail("adam_beta1/adam_beta2 must lie in [0, 1) and adam_eps be positive");
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "schedule" => {
                self.schedule = match value.trim() {
                    "constant" => Schedule::Constant,
                    "linear" => Schedule::Linear { warmup: self.warmup().unwrap_or(2000) },
                    other => return Err(Error::Config(format!("invalid value '{other}' for key 'schedule' (constant | linear)"))),
                }
            }
            "warmup_steps" => self.schedule = Schedule::Linear { warmup: parse_value(key, value)? },
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "adam_beta1" => self.adam.beta1 = parse_value(key, value)?,
            "adam_beta2" => self.adam.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam.eps = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown train key '{other}'"))),
        }
        Ok(())
    }

    fn warmup(&self) -> Option<u64> {
        match self.schedule {
            Schedule::Linear { warmup } => Some(warmup),
            Schedule::Constant => None,
        }
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        let mut kv = vec![
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("schedule", if self.warmup().is_some() { "linear" } else { "constant" }.to_string()),
        ];
        if let Some(w) = self.warmup() {
            kv.push(("warmup_steps", w.to_string()));
        }
        kv.extend([
            ("clip_norm", self.clip_norm.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("adam_beta1", self.adam.beta1.to_string()),
            ("adam_beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
        ]);
        kv
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimiser steps taken so far.
    pub step: u64,
    pub psi: f64,
    pub lambda: f64,
    pub reconstruction: f64,
    pub kl_z: f64,
    pub kl_gamma: f64,
    pub mmd: f64,
    pub penalty: f64,
    pub objective: f64,
    /// Average posterior gate mean α/(α+β) (HSVAE only).
    pub gate_mean: Option<f64>,
    pub skipped_steps: usize,
    pub clamped_samples: usize,
}

/// Something unusual that happened at a step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainEvent {
    pub step: u64,
    pub kind: &'static str,
    pub detail: String,
}

/// Where [`Trainer::fit`] writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct FitOutputs {
    pub log: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct FitReport {
    pub records: Vec<EpochRecord>,
    pub events: Vec<TrainEvent>,
    pub checkpoints: Vec<PathBuf>,
}

/// A model under optimisation.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub store: ParameterStore,
    pub adam: Adam,
    /// Steps attempted so far (including skipped ones); seeds each step.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
}

/// Running sums of one epoch.
#[derive(Default)]
struct Accum {
    n: usize,
    terms: [f64; 6],
    gate: f64,
    gate_n: usize,
    skipped: usize,
    clamped: usize,
}

/// Outcome of one optimiser step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Applied { objective: f64 },
    /// The objective or its gradients were non-finite; parameters unchanged.
    Skipped,
}

impl Trainer {
    pub fn new(model: ModelConfig, train: TrainConfig) -> Result<Self> {
        model.validate()?;
        train.validate(model.variant)?;
        let root = RngStream::new(train.seed);
        let store = ParameterStore::init(&model, &mut root.derive(purpose::INIT, 0))?;
        let adam = Adam::new(train.adam);
        Ok(Self { model, train, store, adam, step: 0, epoch: 0 })
    }

    fn root(&self) -> RngStream {
        RngStream::new(self.train.seed)
    }

    /// KL weights at the current step.
    pub fn weights(&self) -> Weights {
        self.train.schedule.weights(Weights::of(&self.model), self.step)
    }

    /// Sentence order for `epoch`.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        self.root().derive(purpose::SHUFFLE, epoch as u32).shuffle(&mut order);
        order
    }

    /// One step on `batch`, with events appended to `events`.
    pub fn train_step(&mut self, batch: &[&TokenSequence], events: &mut Vec<TrainEvent>) -> Result<(StepOutcome, Option<crate::model::ElboTerms>, Option<f64>, usize)> {
        let batch = Batch::new(batch)?;
        let weights = self.weights();
        let mut rng = self.root().derive(purpose::STEP, self.step as u32);
        let step = self.step;
        self.step += 1;
        let f = match forward(&self.store, &self.model, &batch, weights, &mut rng) {
            Ok(f) => f,
            Err(Error::Numeric(m)) => {
                events.push(TrainEvent { step, kind: "non-finite-objective", detail: m });
                return Ok((StepOutcome::Skipped, None, None, 0));
            }
            Err(e) => return Err(e),
        };
        let grads = f.graph.backward(f.loss)?;
        let mut named: BTreeMap<String, Tensor> = f.bound.iter().map(|(n, &v)| (n.clone(), grads.get(v))).collect();
        let norm = clip_global_norm(&mut named, self.train.clip_norm);
        if !self.adam.step(self.store.iter_mut(), &named, self.train.learning_rate)? {
            events.push(TrainEvent { step, kind: "non-finite-gradient", detail: format!("gradient norm {norm}") });
            return Ok((StepOutcome::Skipped, Some(f.terms), f.gate_mean, f.clamped));
        }
        if f.clamped > 0 {
            events.push(TrainEvent { step, kind: "beta-clamp", detail: format!("{} gate samples clamped", f.clamped) });
        }
        Ok((StepOutcome::Applied { objective: f.terms.objective }, Some(f.terms), f.gate_mean, f.clamped))
    }

    /// Runs the remaining epochs over `corpus`.
    ///
    /// Aborts with a numeric error after two consecutive steps whose objective
    /// is non-finite.
    pub fn fit(&mut self, corpus: &[TokenSequence], outputs: &FitOutputs) -> Result<FitReport> {
        if corpus.is_empty() {
            return Err(Error::contract("cannot train on an empty corpus"));
        }
        let mut log = match &outputs.log {
            Some(p) => Some(BufWriter::new(if self.epoch > 0 { File::options().append(true).create(true).open(p)? } else { File::create(p)? })),
            None => None,
        };
        if let Some(dir) = &outputs.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
        }
        let mut report = FitReport::default();
        let mut bad_in_a_row = 0;
        while self.epoch < self.train.epochs {
            let order = self.epoch_order(corpus.len(), self.epoch);
            let mut acc = Accum::default();
            for chunk in order.chunks(self.train.batch_size) {
                if self.model.variant == Variant::MatVae && chunk.len() < 2 {
                    continue;
                }
                let batch: Vec<&TokenSequence> = chunk.iter().map(|&i| &corpus[i]).collect();
                let (outcome, terms, gate, clamped) = self.train_step(&batch, &mut report.events)?;
                acc.clamped += clamped;
                match outcome {
                    StepOutcome::Skipped => {
                        acc.skipped += 1;
                        if terms.is_none() {
                            bad_in_a_row += 1;
                            if bad_in_a_row >= 2 {
                                let last = report.events.last().map(|e| e.detail.clone()).unwrap_or_default();
                                return Err(Error::numeric(format!(
                                    "objective non-finite on two consecutive steps (epoch {}, step {}): {last}",
                                    self.epoch + 1,
                                    self.step - 1
                                )));
                            }
                        }
                    }
                    StepOutcome::Applied { .. } => bad_in_a_row = 0,
                }
                if let Some(t) = terms {
                    let w = chunk.len() as f64;
                    acc.n += chunk.len();
                    for (s, v) in acc.terms.iter_mut().zip([t.reconstruction, t.kl_z, t.kl_gamma, t.mmd, t.penalty, t.objective]) {
                        *s += w * v;
                    }
                    if let Some(gm) = gate {
                        acc.gate += w * gm;
                        acc.gate_n += chunk.len();
                    }
                }
            }
            self.epoch += 1;
            let n = acc.n.max(1) as f64;
            let w = self.weights();
            let record = EpochRecord {
                epoch: self.epoch,
                step: self.step,
                psi: w.psi,
                lambda: w.lambda,
                reconstruction: acc.terms[0] / n,
                kl_z: acc.terms[1] / n,
                kl_gamma: acc.terms[2] / n,
                mmd: acc.terms[3] / n,
                penalty: acc.terms[4] / n,
                objective: acc.terms[5] / n,
                gate_mean: (acc.gate_n > 0).then(|| acc.gate / acc.gate_n as f64),
                skipped_steps: acc.skipped,
                clamped_samples: acc.clamped,
            };
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&record)?)?;
                f.flush()?;
            }
            report.records.push(record);
            let due = self.epoch == self.train.epochs
                || (self.train.checkpoint_every > 0 && self.epoch.is_multiple_of(self.train.checkpoint_every));
            if let (true, Some(dir)) = (due, &outputs.checkpoint_dir) {
                let path = dir.join(format!("epoch-{:03}.ckpt", self.epoch));
                self.checkpoint().write(&path)?;
                report.checkpoints.push(path);
            }
        }
        Ok(report)
    }

    /// Model, optimiser state and counters.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::of_model(&self.model, &self.store);
        for (k, v) in self.train.to_kv() {
            c.manifest.insert(format!("train.{k}"), v);
        }
        c.manifest.insert("state.step".into(), self.step.to_string());
        c.manifest.insert("state.epoch".into(), self.epoch.to_string());
        c.manifest.insert("state.adam_t".into(), self.adam.t.to_string());
        for (n, t) in &self.adam.m {
            c.arrays.insert(format!("adam_m/{n}"), t.clone());
        }
        for (n, t) in &self.adam.v {
            c.arrays.insert(format!("adam_v/{n}"), t.clone());
        }
        c
    }

    /// Restores a trainer written by [`Trainer::checkpoint`]; `epochs`
    /// overrides the recorded target when given.
    pub fn resume(ckpt: &Checkpoint, epochs: Option<usize>) -> Result<Self> {
        let model = ckpt.model_config()?;
        let store = ckpt.parameters(&model)?;
        let mut train = TrainConfig::default();
        for (k, v) in &ckpt.manifest {
            if let Some(k) = k.strip_prefix("train.") {
                train.set(k, v)?;
            }
        }
        if let Some(e) = epochs {
            train.epochs = e;
        }
        let state = |k: &str| -> Result<u64> {
            let v = ckpt.manifest.get(k).ok_or_else(|| Error::Format(format!("checkpoint lacks '{k}'")))?;
            parse_value(k, v)
        };
        let mut adam = Adam::new(train.adam);
        adam.t = state("state.adam_t")?;
        for (name, t) in &ckpt.arrays {
            if let Some(n) = name.strip_prefix("adam_m/") {
                adam.m.insert(n.to_string(), t.clone());
            } else if let Some(n) = name.strip_prefix("adam_v/") {
                adam.v.insert(n.to_string(), t.clone());
            }
        }
        Ok(Self { model, train, store, adam, step: state("state.step")?, epoch: state("state.epoch")? as usize })
    }

    pub fn resume_from(path: impl AsRef<Path>, epochs: Option<usize>) -> Result<Self> {
        Self::resume(&Checkpoint::read(path)?, epochs)
    }
}
