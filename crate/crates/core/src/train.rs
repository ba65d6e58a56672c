//! Loss/gradient evaluation and the deterministic SGD loop.

use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_diff_check_fn, Tape, Tensor};
use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::experts::{ExpertView, ExpertWeights};
use crate::params::ParameterVector;
use crate::rng::{derive_seed, stream_rng};
use crate::tasks::{Split, TaskDataset};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Expert training budget.
    fn default() -> Self {
        Self {
            steps: 900,
            batch_size: 32,
            lr: 0.01,
            optimizer: Optimizer::Momentum { beta: 0.9 },
            label_smoothing: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-parameter backbone pretraining.
    pub fn pretraining() -> Self {
        Self { steps: 600, lr: 0.05, ..Self::default() }
    }

    /// Interpolation tuning starts from trained experts and stays short.
    pub fn interpolation() -> Self {
        Self { steps: 50, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!("label smoothing must lie in [0,1), got {}", self.label_smoothing)));
        }
        if let Optimizer::Momentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("momentum must lie in [0,1), got {beta}")));
            }
        }
        Ok(())
    }

    pub fn with_steps(&self, steps: usize) -> Self {
        Self { steps, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("train config serialises")
    }
}

/// Inputs, labels and per-sample weights (0 masks a sample out).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn new(x: Tensor, y: Vec<usize>) -> Self {
        let weights = vec![1.0; y.len()];
        Self { x, y, weights }
    }

    pub fn masked(x: Tensor, y: Vec<usize>, weights: Vec<f64>) -> Self {
        Self { x, y, weights }
    }

    pub fn from_split(split: &Split, idx: &[usize]) -> Self {
        Self::new(split.x.gather_rows(idx), idx.iter().map(|&i| split.y[i]).collect())
    }

    fn check(&self, backbone: &Backbone) -> Result<()> {
        backbone.check_input(&self.x)?;
        if self.y.len() != self.x.shape()[0] || self.weights.len() != self.y.len() {
            return Err(Error::Layout(format!(
                "batch has {} rows but {} labels and {} weights",
                self.x.shape()[0],
                self.y.len(),
                self.weights.len()
            )));
        }
        let classes = backbone.config().classes;
        if let Some(bad) = self.y.iter().find(|&&y| y >= classes) {
            return Err(Error::Layout(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(())
    }
}

/// Mean cross-entropy of the backbone+expert on `batch` and its gradient
/// with respect to the expert parameters only.
pub fn value_and_grad(
    backbone: &Backbone,
    expert: &ExpertWeights,
    batch: &Batch,
    label_smoothing: f64,
) -> Result<(f64, ParameterVector)> {
    batch.check(backbone)?;
    expert.check_attachable(backbone.config())?;
    let mut tape = Tape::new();
    let theta = tape.constant(Tensor::vector(backbone.params().0.clone()));
    let x = tape.constant(batch.x.clone());
    let flat = tape.param(Tensor::vector(expert.values.0.clone()));
    let view = ExpertView { layout: &expert.layout, flat };
    let view = (!expert.is_empty()).then_some(&view);
    let logits = backbone.forward(&mut tape, theta, view, x);
    let loss = tape.cross_entropy(logits, &batch.y, &batch.weights, label_smoothing);
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numerical { step: 0, detail: format!("loss is {value}") });
    }
    let mut grads = tape.backward(loss);
    let g = grads.take(flat).unwrap_or_default();
    Ok((value, ParameterVector(g)))
}

/// Loss only; used by finite differences.
pub fn loss(backbone: &Backbone, expert: &ExpertWeights, batch: &Batch, label_smoothing: f64) -> Result<f64> {
    batch.check(backbone)?;
    let mut tape = Tape::new();
    let theta = tape.constant(Tensor::vector(backbone.params().0.clone()));
    let x = tape.constant(batch.x.clone());
    let flat = tape.constant(Tensor::vector(expert.values.0.clone()));
    let view = ExpertView { layout: &expert.layout, flat };
    let view = (!expert.is_empty()).then_some(&view);
    let logits = backbone.forward(&mut tape, theta, view, x);
    let loss = tape.cross_entropy(logits, &batch.y, &batch.weights, label_smoothing);
    Ok(tape.value(loss).data()[0])
}

/// Max relative error between the analytic expert gradient and central differences.
pub fn finite_diff_check(backbone: &Backbone, expert: &ExpertWeights, batch: &Batch, step: f64) -> Result<f64> {
    if step <= 0.0 {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let (_, analytic) = value_and_grad(backbone, expert, batch, 0.0)?;
    let f = |v: &[f64]| {
        let probe = ExpertWeights { values: ParameterVector(v.to_vec()), ..expert.clone() };
        loss(backbone, &probe, batch, 0.0).unwrap_or(f64::NAN)
    };
    Ok(finite_diff_check_fn(&f, &analytic.0, &expert.values.0, step))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub loss: f64,
}

impl EvalMetrics {
    pub fn error(&self) -> f64 {
        1.0 - self.accuracy
    }
}

/// Accuracy and mean (unsmoothed) cross-entropy on a split.
pub fn evaluate(backbone: &Backbone, expert: Option<&ExpertWeights>, split: &Split) -> Result<EvalMetrics> {
    const CHUNK: usize = 256;
    let n = split.len();
    if n == 0 {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    let mut correct = 0usize;
    let mut total_loss = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let logits = crate::experts::apply(backbone, expert, &split.x.rows(start, end))?;
        let c = logits.last_dim();
        for (row, &y) in logits.data().chunks(c).zip(&split.y[start..end]) {
            let (arg, _) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            if arg == y {
                correct += 1;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total_loss += lse - row[y];
        }
        start = end;
    }
    Ok(EvalMetrics { accuracy: correct as f64 / n as f64, loss: total_loss / n as f64 })
}

/// Parameter range with its own learning rate. Frozen groups are never touched.
#[derive(Clone, Debug)]
pub(crate) struct ParamGroup {
    pub range: Range<usize>,
    pub lr: f64,
    pub trainable: bool,
}

pub(crate) struct SgdOutcome {
    pub params: Vec<f64>,
    pub losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Minibatch SGD over `n` training rows. Batches are consecutive windows of
/// a per-epoch permutation drawn from the `(seed, epoch)` stream.
pub(crate) fn run_sgd<F>(
    init: Vec<f64>,
    groups: &[ParamGroup],
    n: usize,
    cfg: &TrainConfig,
    mut step_fn: F,
) -> Result<SgdOutcome>
where
    F: FnMut(&[f64], &[usize]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Data("training split is empty".into()));
    }
    let beta = match cfg.optimizer {
        Optimizer::Sgd => 0.0,
        Optimizer::Momentum { beta } => beta,
    };
    let shuffle_seed = derive_seed(cfg.seed, "batches");
    let mut params = init;
    let mut velocity = vec![0.0; params.len()];
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut epoch_losses = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut epoch_sum = 0.0;
    let mut epoch_steps = 0usize;
    let mut last_finite = f64::NAN;

    for step in 0..cfg.steps {
        if cursor >= order.len() {
            if epoch_steps > 0 {
                epoch_losses.push(epoch_sum / epoch_steps as f64);
            }
            order = (0..n).collect();
            order.shuffle(&mut stream_rng(shuffle_seed, epoch));
            epoch += 1;
            cursor = 0;
            epoch_sum = 0.0;
            epoch_steps = 0;
        }
        let end = (cursor + cfg.batch_size).min(n);
        let idx = &order[cursor..end];
        cursor = end;

        let diverged = |last_finite_loss: f64, state: &[f64]| Error::Diverged {
            step,
            last_finite_loss,
            last_finite_state: Box::new(state.to_vec()),
        };
        let (loss, grad) = match step_fn(&params, idx) {
            Ok(v) => v,
            Err(Error::Numerical { .. }) => return Err(diverged(last_finite, &params)),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(last_finite, &params));
        }
        last_finite = loss;
        losses.push(loss);
        epoch_sum += loss;
        epoch_steps += 1;

        for g in groups.iter().filter(|g| g.trainable) {
            for i in g.range.clone() {
                velocity[i] = beta * velocity[i] + grad[i];
                params[i] -= g.lr * velocity[i];
            }
        }
    }
    if epoch_steps > 0 {
        epoch_losses.push(epoch_sum / epoch_steps as f64);
    }
    Ok(SgdOutcome { params, losses, epoch_losses })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub expert: ExpertWeights,
    pub losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Trains the expert on `dataset`'s train split. The backbone is untouched.
pub fn train(
    backbone: &Backbone,
    expert: &ExpertWeights,
    dataset: &TaskDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_on_split(backbone, expert, &dataset.train, cfg)
}

pub fn train_on_split(
    backbone: &Backbone,
    expert: &ExpertWeights,
    split: &Split,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    expert.check_attachable(backbone.config())?;
    if split.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let groups = [ParamGroup { range: 0..expert.len(), lr: cfg.lr, trainable: true }];
    let outcome = run_sgd(expert.values.0.clone(), &groups, split.len(), cfg, |p, idx| {
        let probe = ExpertWeights { values: ParameterVector(p.to_vec()), ..expert.clone() };
        let (l, g) = value_and_grad(backbone, &probe, &Batch::from_split(split, idx), cfg.label_smoothing)?;
        Ok((l, g.0))
    })?;
    Ok(TrainOutcome {
        expert: expert.with_values(ParameterVector(outcome.params))?,
        losses: outcome.losses,
        epoch_losses: outcome.epoch_losses,
    })
}

/// Full-parameter gradient of the bare backbone; used for pretraining.
pub(crate) fn backbone_value_and_grad(
    backbone: &Backbone,
    theta: &[f64],
    batch: &Batch,
    label_smoothing: f64,
) -> Result<(f64, Vec<f64>)> {
    batch.check(backbone)?;
    let mut tape = Tape::new();
    let th = tape.param(Tensor::vector(theta.to_vec()));
    let x = tape.constant(batch.x.clone());
    let logits = backbone.forward(&mut tape, th, None, x);
    let loss = tape.cross_entropy(logits, &batch.y, &batch.weights, label_smoothing);
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numerical { step: 0, detail: format!("loss is {value}") });
    }
    let mut grads = tape.backward(loss);
    Ok((value, grads.take(th).unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { label_smoothing: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn smoothed_cross_entropy_minimum_is_target_entropy() {
        // Fit free logits to a single sample; the loss floor is H(q).
        let (c, s) = (4usize, 0.1);
        let q: Vec<f64> = (0..c).map(|j| if j == 2 { 1.0 - s + s / c as f64 } else { s / c as f64 }).collect();
        let entropy: f64 = -q.iter().map(|p| p * p.ln()).sum::<f64>();
        let mut z = vec![0.0; c];
        let mut last = f64::INFINITY;
        for _ in 0..4000 {
            let mut tape = Tape::new();
            let zv = tape.param(Tensor::new(vec![1, c], z.clone()).unwrap());
            let l = tape.cross_entropy(zv, &[2], &[1.0], s);
            last = tape.value(l).data()[0];
            let g = tape.backward(l).get(zv).unwrap();
            for (zi, gi) in z.iter_mut().zip(g.data()) {
                *zi -= 1.0 * gi;
            }
        }
        assert!(last >= entropy - 1e-12);
        assert!((last - entropy).abs() < 1e-9, "{last} vs {entropy}");
    }
}
