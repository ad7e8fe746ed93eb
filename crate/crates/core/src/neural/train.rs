use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::graph::ModelGraph;
use super::layers::{Mode, Value};
use super::loss::{softmax, softmax_xent_grad, weighted_cross_entropy};
use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::features::DenseVector;

/// Examples per gradient worker; fixed so results do not depend on the machine.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Value,
    pub label: usize,
    pub weight: f64,
}

impl Example {
    pub fn new(input: Value, label: usize) -> Self {
        Example {
            input,
            label,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::precondition(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size < 1 {
            return Err(Error::precondition("batch size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when no validation set was given; the train loss is monitored instead.
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: ModelGraph,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Waiting,
    Stop,
}

/// Patience-based stopping on a monitored loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since = 0;
            return StopDecision::Improved;
        }
        self.since += 1;
        if self.since >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Waiting
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

fn check_examples(model: &ModelGraph, set: &[Example]) -> Result<()> {
    let k = model.output_width();
    for e in set {
        if e.label >= k {
            return Err(Error::Index { index: e.label, len: k });
        }
        if !(e.weight >= 0.0) {
            return Err(Error::precondition(format!("invalid sample weight {}", e.weight)));
        }
    }
    Ok(())
}

/// Summed weighted loss and gradients over `batch`, with one dropout seed per example.
fn chunk_loss_grads(model: &ModelGraph, batch: &[(&Example, u64)]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut grads = model.zero_grads();
    let mut loss = 0.0;
    for (ex, seed) in batch {
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let trace = model.forward_cached(&ex.input, Mode::Train, &mut rng)?;
        let probs = softmax(trace.output.row(0))?;
        loss += weighted_cross_entropy(&probs, ex.label, ex.weight)?;
        let g = Mat::row_vector(&softmax_xent_grad(&probs, ex.label, ex.weight));
        model.backward(&trace, &g, &mut grads)?;
    }
    Ok((loss, grads))
}

pub(crate) fn batch_loss_grads(model: &ModelGraph, batch: &[(&Example, u64)]) -> Result<(f64, Vec<Vec<f64>>)> {
    if batch.len() <= CHUNK {
        return chunk_loss_grads(model, batch);
    }
    let parts: Vec<Result<(f64, Vec<Vec<f64>>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(CHUNK)
            .map(|c| s.spawn(move || chunk_loss_grads(model, c)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
    });
    let mut total = 0.0;
    let mut grads = model.zero_grads();
    for part in parts {
        let (l, g) = part?;
        total += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
    Ok((total, grads))
}

/// Weight-averaged loss in infer mode.
pub fn evaluate_loss(model: &ModelGraph, set: &[Example]) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut num, mut den) = (0.0, 0.0);
    for ex in set {
        let probs = softmax(model.forward(&ex.input, Mode::Infer, &mut rng)?.row(0))?;
        num += weighted_cross_entropy(&probs, ex.label, ex.weight)?;
        den += ex.weight;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

pub fn predict_proba(model: &ModelGraph, input: &Value) -> Result<DenseVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    softmax(model.forward(input, Mode::Infer, &mut rng)?.row(0))
}

fn diverged(err: Error, epoch: usize) -> Error {
    match err {
        Error::Numeric(m) => Error::Training(format!("loss diverged at epoch {epoch}: {m}")),
        other => other,
    }
}

/// Mini-batch Adam with early stopping; returns the best monitored epoch's parameters.
pub fn train_supervised(model: &ModelGraph, train: &[Example], val: &[Example], cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::precondition("training set is empty"));
    }
    check_examples(model, train)?;
    check_examples(model, val)?;

    let mut model = model.clone();
    let mut best = model.clone();
    let mut state = AdamState::for_shapes(model.param_arrays().iter().map(|p| p.len()));
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience.max(1));
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Example, u64)> = idx.iter().map(|&i| (&train[i], rng.gen())).collect();
            let (loss, mut grads) = batch_loss_grads(&model, &batch).map_err(|e| diverged(e, epoch))?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
            }
            epoch_loss += loss;
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            adam_step(&mut model.param_arrays_mut(), &grads, &mut state, &adam);
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(&model, val).map_err(|e| diverged(e, epoch))?)
        };
        let monitored = val_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        match stopper.observe(epoch, monitored) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Waiting => {}
            StopDecision::Stop => break,
        }
    }
    Ok(TrainResult {
        model: best,
        history,
        best_epoch: stopper.best_epoch(),
    })
}
