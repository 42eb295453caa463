//! Joint end-to-end optimization of the graph encoder and the language model.

mod model;

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Split};
use crate::cpg::Cpg;
use crate::gnn::{GnnConfig, GnnError, Variant};
use crate::lm::{LmConfig, LmError, VocabError};
use crate::numerics::{adam_step, AdamConfig, NumericsError, ParameterStore, Tape};

pub use model::{Example, Model};

const BATCH_SALT: u64 = 0xba7c_0003;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("NonFiniteLoss: record {record} at step {step}")]
    NonFiniteLoss { record: usize, step: usize },
    #[error("EmptyDataset: no {0} records")]
    EmptyDataset(&'static str),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl From<VocabError> for TrainError {
    fn from(e: VocabError) -> Self {
        TrainError::Lm(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Validation every this many steps, and after the last one.
    pub val_every: usize,
    pub gnn: GnnConfig,
    pub lm: LmConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            lr: 3e-4,
            weight_decay: 1e-4,
            seed: 0,
            val_every: 100,
            gnn: GnnConfig::default(),
            lm: LmConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps == 0 || self.batch_size == 0 || self.val_every == 0 {
            return Err(TrainError::InvalidConfig("steps, batch and val_every must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) || !(self.lr > 0.0) {
            return Err(TrainError::InvalidConfig("lr must be positive and weight decay non-negative"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }

    /// Same settings with the graph encoder removed.
    pub fn text_only(&self) -> Self {
        TrainConfig { gnn: GnnConfig { variant: Variant::None, ..self.gnn }, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per step.
    pub train_loss: Vec<f64>,
    /// `(step, loss)` at each validation point.
    pub val_loss: Vec<(usize, f64)>,
    pub best_step: usize,
    pub best_val: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: Model,
    /// Parameters at the best validation point.
    pub best: ParameterStore,
}

/// Adds the gradient of the batch mean loss to the store and returns it.
pub fn accumulate_batch(model: &mut Model, cpgs: &[Cpg], batch: &[&Example], step: usize) -> Result<f64, TrainError> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        let mut tape = Tape::new();
        let loss = model.example_loss(&mut tape, cpgs, ex)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss { record: ex.record_id, step });
        }
        total += value;
        let scaled = tape.scale(loss, scale);
        tape.backward(scaled)?;
        tape.accumulate_param_grads(&mut model.store);
    }
    Ok(total * scale)
}

/// Mean per-example loss without gradients.
pub fn evaluate_loss(model: &Model, cpgs: &[Cpg], examples: &[Example]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new();
        let loss = model.example_loss(&mut tape, cpgs, ex)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(TrainError::NonFiniteLoss { record: ex.record_id, step: 0 });
        }
        total += v;
    }
    Ok(total / examples.len() as f64)
}

pub fn examples_for(model: &Model, corpus: &Corpus, split: Split) -> Result<Vec<Example>, TrainError> {
    corpus.records_in(split).map(|r| model.example(corpus, r)).collect()
}

/// Trains a fresh model on the train split, selecting the best checkpoint by
/// validation loss. `progress` sees each step index and its loss.
pub fn train_with<F: FnMut(usize, f64)>(corpus: &Corpus, cfg: &TrainConfig, mut progress: F) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut model = Model::init(cfg.gnn, cfg.lm, cfg.seed)?;
    let train = examples_for(&model, corpus, Split::Train)?;
    let val = examples_for(&model, corpus, Split::Val)?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("train"));
    }
    let val = if val.is_empty() { train.clone() } else { val };
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ BATCH_SALT);
    let mut order: Vec<usize> = Vec::new();
    let mut report = TrainReport { train_loss: Vec::with_capacity(cfg.steps), val_loss: Vec::new(), best_step: 0, best_val: f64::INFINITY };
    let mut best = model.store.clone();
    model.store.zero_grads();
    for step in 1..=cfg.steps {
        // epochs of shuffled order, drawn without replacement
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..train.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(&train[order.pop().expect("refilled")]);
        }
        let loss = accumulate_batch(&mut model, &corpus.cpgs, &batch, step)?;
        adam_step(&mut model.store, &adam);
        report.train_loss.push(loss);
        progress(step, loss);
        if step % cfg.val_every == 0 || step == cfg.steps {
            let v = evaluate_loss(&model, &corpus.cpgs, &val)?;
            report.val_loss.push((step, v));
            if v < report.best_val {
                report.best_val = v;
                report.best_step = step;
                best = model.store.clone();
            }
        }
    }
    Ok(TrainOutcome { report, model, best })
}

pub fn train(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(corpus, cfg, |_, _| {})
}

/// The text-only baseline: same pipeline, every record on the fallback path
/// and no encoder parameters.
pub fn train_ft_baseline(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train(corpus, &cfg.text_only())
}

#[cfg(test)]
mod tests;
