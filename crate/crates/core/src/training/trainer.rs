use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{cross_entropy_value, weighted_cross_entropy, Adam, ClassWeights};
use crate::data::{Dataset, MultiViewBatch};
use crate::fusion::{multi_loss, Component, MvlModel};
use crate::rng;
use crate::tensor::{Graph, Mode, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    /// Required decrease of the validation loss to count as improvement.
    pub min_delta: f64,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            max_epochs: 100,
            patience: 5,
            validation_fraction: 0.1,
            min_delta: 0.0,
            learning_rate: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("max epochs and patience must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        if !(self.min_delta >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("min delta must be >= 0 and learning rate > 0".into()));
        }
        Ok(())
    }
}

/// Patience-based early stopping on a loss that should decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Records the loss of `epoch` (1-based). Improvement is strict:
    /// `loss < best − min_delta`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> Observation {
        let improved = loss < self.best - self.min_delta;
        if improved {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        Observation {
            improved,
            stop: self.wait >= self.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Per-member histories of an ensemble, keyed by view.
    pub members: Vec<(String, History)>,
}

impl History {
    /// `(train, validation)` losses per epoch, without timings.
    pub fn losses(&self) -> Vec<(f64, f64)> {
        self.epochs.iter().map(|e| (e.train_loss, e.val_loss)).collect()
    }

    pub fn seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum::<f64>() + self.members.iter().map(|(_, h)| h.seconds()).sum::<f64>()
    }
}

/// Seeded uniform split of `0..n` into `(train, validation)` index lists,
/// the validation part holding `round(n·fraction)` samples (at least one).
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} outside (0, 1)")));
    }
    if n < 2 {
        return Err(Error::Config(format!("cannot split {n} samples")));
    }
    let size = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "validation"));
    let mut val = idx[..size].to_vec();
    let mut train = idx[size..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Consecutive chunks of `size`; a trailing chunk of one sample joins the
/// previous chunk (batch statistics need at least two rows).
pub fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = (start + size).min(order.len());
        if order.len() - end == 1 {
            end = order.len();
        }
        out.push(&order[start..end]);
        start = end;
    }
    out
}

/// Infer-mode probabilities for every sample of `data`, in chunks.
pub fn predict(model: &mut MvlModel, data: &Dataset, chunk: usize) -> Result<Tensor> {
    let names: Vec<&str> = model.views.iter().map(|v| v.name.as_str()).collect();
    let data = data.select_views(&names)?;
    let order: Vec<usize> = (0..data.len()).collect();
    let mut rows = Vec::new();
    let mut k = 0;
    for idx in order.chunks(chunk.max(1)) {
        let p = model.predict(&data.batch(idx)?)?;
        k = p.shape()[1];
        rows.extend_from_slice(p.data());
    }
    Tensor::new(vec![data.len(), k], rows)
}

fn check_task(labels: &[usize], classes: usize) -> Result<()> {
    let mut seen = vec![false; classes];
    for &y in labels {
        if y >= classes {
            return Err(Error::Label(format!("label {y} outside [0, {classes})")));
        }
        seen[y] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::DegenerateTask("training data holds fewer than two classes".into()));
    }
    Ok(())
}

/// Trains `model` on `data` (all samples are training data; the validation
/// part is split off internally) and restores the best-validation weights.
pub fn train(model: &mut MvlModel, data: &Dataset, config: &TrainConfig, seed: u64) -> Result<History> {
    config.validate()?;
    if data.classes() != model.config.classes {
        return Err(Error::Config(format!(
            "model predicts {} classes, dataset has {}",
            model.config.classes,
            data.classes()
        )));
    }
    check_task(data.labels(), data.classes())?;
    if !model.members().is_empty() {
        let views = model.views.clone();
        let mut members = Vec::new();
        for (member, view) in model.members_mut().iter_mut().zip(&views) {
            let s = member.seed;
            members.push((view.name.clone(), train(member, data, config, s)?));
        }
        return Ok(History {
            seed,
            members,
            ..History::default()
        });
    }
    let names: Vec<&str> = model.views.iter().map(|v| v.name.as_str()).collect();
    let data = data.select_views(&names)?;
    let weights = ClassWeights::from_labels(data.labels(), data.classes())?;
    let (train_idx, val_idx) = validation_split(data.len(), config.validation_fraction, seed)?;
    let val_batches = val_idx
        .chunks(config.batch_size)
        .map(|c| data.batch(c))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(&model.store, config.learning_rate);
    let mut shuffle = rng::stream(seed, "shuffle");
    let mut dropout = rng::stream(seed, "dropout");
    let multi = model.config.component == Component::MultiLoss && model.config.gamma > 0.0;
    let gamma = model.config.gamma;

    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut best = model.store.clone();
    let mut history = History {
        seed,
        ..History::default()
    };
    let mut order = train_idx;
    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle);
        let (mut total, mut seen) = (0.0, 0usize);
        for idx in batches(&order, config.batch_size) {
            let batch = data.batch(idx)?;
            let (net, store, views) = model.parts_mut().expect("non-ensemble model");
            store.zero_grads();
            let mut g = Graph::new(store, Mode::Train, Some(&mut dropout));
            let out = net.forward(&mut g, views, &batch, multi)?;
            let fused = weighted_cross_entropy(&mut g.tape, out.probs, &batch.labels, &weights)?;
            let loss = if multi {
                let per_view = out
                    .view_probs
                    .iter()
                    .map(|&p| weighted_cross_entropy(&mut g.tape, p, &batch.labels, &weights))
                    .collect::<Result<Vec<_>>>()?;
                multi_loss(&mut g.tape, fused, &per_view, gamma)?
            } else {
                fused
            };
            total += g.tape.value(loss).data()[0] * idx.len() as f64;
            seen += idx.len();
            g.backward(loss)?;
            adam.step(store)?;
        }
        let val_loss = validation_loss(model, &val_batches, &weights)?;
        let obs = stopper.observe(epoch, val_loss);
        if obs.improved {
            best = model.store.clone();
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / seen as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        if obs.stop {
            history.stopped_early = true;
            break;
        }
    }
    model.store = best;
    history.best_epoch = stopper.best_epoch;
    history.best_val_loss = stopper.best;
    Ok(history)
}

fn validation_loss(model: &mut MvlModel, chunks: &[MultiViewBatch], weights: &ClassWeights) -> Result<f64> {
    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    let mut k = 0;
    for b in chunks {
        let p = model.predict(b)?;
        k = p.shape()[1];
        rows.extend_from_slice(p.data());
        labels.extend_from_slice(&b.labels);
    }
    cross_entropy_value(&Tensor::new(vec![labels.len(), k], rows)?, &labels, weights)
}
