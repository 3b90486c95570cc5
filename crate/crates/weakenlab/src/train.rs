//! Supervised training loop: soft-label cross-entropy, SGD with momentum
//! and weight decay, a milestone learning-rate schedule, and Top-1/Top-5
//! evaluation. Training draws batches from a vicinal distribution when the
//! config carries augmentation transforms; evaluation always runs on
//! untouched samples.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_hidden_transforms, apply_input_transforms, AugmentSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{Model, Param};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 128;

/// Full training-run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestone_epochs: Vec<usize>,
    pub milestone_gamma: f64,
    pub seed: u64,
    pub augment: AugmentSpec,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0,1), got {}", self.momentum)));
        }
        if !(self.milestone_gamma > 0.0 && self.milestone_gamma <= 1.0) {
            return Err(Error::config(format!(
                "milestone_gamma must be in (0,1], got {}",
                self.milestone_gamma
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        for w in self.milestone_epochs.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::config("milestone_epochs must be strictly increasing"));
            }
        }
        if let Some(last) = self.milestone_epochs.last() {
            if *last >= self.epochs {
                return Err(Error::config("milestone_epochs must lie before the last epoch"));
            }
        }
        self.augment.validate()
    }
}

/// One epoch of the metrics trajectory. Accuracies are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: f64,
    pub val_top5: f64,
    pub lr_in_effect: f64,
    pub wall_ms: u64,
}

/// Mean over the batch of `-sum(labels * log_softmax(logits))`. Supports
/// soft labels, so mixed-sample losses need no special casing.
pub fn cross_entropy(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    if logits.shape() != labels.shape() || logits.rank() != 2 {
        return Err(Error::shape(format!(
            "cross_entropy: logits {:?} and labels {:?} must both be [N,K]",
            logits.shape(),
            labels.shape()
        )));
    }
    let n = logits.shape()[0] as f64;
    logits
        .log_softmax(1)?
        .mul(labels)?
        .sum()
        .scalar_mul(-1.0 / n)
}

/// SGD velocity buffers, one per parameter.
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(params: &[Param]) -> SgdState {
        SgdState { velocity: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect() }
    }
}

/// One optimizer step: `v <- momentum*v + grad + wd*param`,
/// `param <- param - lr*v`. Gradients are cleared afterwards.
pub fn sgd_step(
    params: &[Param],
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    for (p, v) in params.iter().zip(state.velocity.iter_mut()) {
        let grad = p
            .tensor
            .grad()
            .ok_or_else(|| Error::arg(format!("sgd_step: parameter {} has no gradient", p.name)))?;
        let mut data = p.tensor.to_vec();
        for i in 0..data.len() {
            v[i] = momentum * v[i] + grad[i] + weight_decay * data[i];
            data[i] -= lr * v[i];
        }
        p.tensor.set_data(&data);
        p.tensor.zero_grad();
    }
    Ok(())
}

/// Piecewise-constant schedule: base lr decayed by `gamma` at each
/// milestone already reached.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.milestone_epochs.iter().filter(|m| **m <= epoch).count();
    cfg.lr * cfg.milestone_gamma.powi(passed as i32)
}

/// Class indices of one logit row ordered by descending logit, ties broken
/// by lowest class index.
fn ranked_classes(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    idx
}

/// Clean Top-1/Top-5 accuracy (percent) in evaluation mode.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::arg("evaluate: empty dataset"));
    }
    let k = data.class_count;
    let (mut hit1, mut hit5) = (0usize, 0usize);
    for batch in data.batches(EVAL_BATCH, None) {
        let logits = model.forward(&batch.inputs)?;
        let l = logits.data();
        let y = batch.labels.data();
        for r in 0..batch.len() {
            let truth = y[r * k..(r + 1) * k]
                .iter()
                .position(|v| *v == 1.0)
                .expect("evaluation batch must carry hard labels");
            let ranked = ranked_classes(&l[r * k..(r + 1) * k]);
            if ranked[0] == truth {
                hit1 += 1;
            }
            if ranked[..k.min(5)].contains(&truth) {
                hit5 += 1;
            }
        }
    }
    let n = data.len() as f64;
    Ok((100.0 * hit1 as f64 / n, 100.0 * hit5 as f64 / n))
}

/// Full training run. Deterministic given the config seeds; returns the
/// per-epoch metrics trajectory.
pub fn train(
    model: &mut Model,
    train_data: &Dataset,
    val_data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::arg("train: empty dataset"));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.augment.rng_seed);
    let mut state = SgdState::new(model.params());
    let mut records = Vec::with_capacity(cfg.epochs);
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut loss_sum = 0.0;
        let mut batch_count = 0usize;
        let epoch_shuffle = shuffle_rng.next_u64();
        for batch in train_data.batches(cfg.batch_size, Some(epoch_shuffle)) {
            let batch = apply_input_transforms(&cfg.augment.input_transforms, &batch, &mut aug_rng)?;
            let rep = model.forward_features(&batch.inputs)?;
            let rep = apply_hidden_transforms(&cfg.augment.hidden_transforms, &rep, true, &mut aug_rng)?;
            let logits = model.decision(&rep)?;
            let loss = cross_entropy(&logits, &batch.labels)?;
            model.zero_grads();
            loss.backward()?;
            sgd_step(model.params(), &mut state, lr, cfg.momentum, cfg.weight_decay)?;
            loss_sum += loss.item();
            batch_count += 1;
        }
        let (top1, top5) = evaluate(model, val_data)?;
        records.push(MetricsRecord {
            epoch,
            train_loss: loss_sum / batch_count as f64,
            val_top1: top1,
            val_top5: top5,
            lr_in_effect: lr,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok(records)
}

/// Highest validation Top-1 over a trajectory.
pub fn best_top1(records: &[MetricsRecord]) -> f64 {
    records.iter().map(|r| r.val_top1).fold(f64::NEG_INFINITY, f64::max)
}

/// CSV with header `epoch,train_loss,val_top1,val_top5,lr,wall_ms`.
pub fn write_metrics_csv(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,train_loss,val_top1,val_top5,lr,wall_ms")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_top1, r.val_top5, r.lr_in_effect, r.wall_ms
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_json(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, records)?;
    w.flush()?;
    Ok(())
}
