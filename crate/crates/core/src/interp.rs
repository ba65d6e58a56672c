//! Softmax-weighted interpolation of a target expert with retrieved
//! auxiliary experts, its tuning modes, zero-shot transfer and the
//! multi-task variant.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_in_place, Tape, Tensor};
use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::experts::{build_expert, ExpertView, ExpertWeights};
use crate::fisher::{fisher_diag, rank_against, top_k, TaskEmbedding, DEFAULT_SAMPLE_CAP};
use crate::params::ParameterVector;
use crate::registry::ExpertPool;
use crate::rng::derive_seed;
use crate::tasks::{Split, TaskDataset};
use crate::train::{evaluate, run_sgd, train_on_split, Batch, EvalMetrics, ParamGroup, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuneMode {
    #[default]
    Joint,
    ScaleOnly,
    RandomInitAux,
    Frozen,
}

impl TuneMode {
    pub const ALL: [TuneMode; 4] = [TuneMode::Joint, TuneMode::ScaleOnly, TuneMode::RandomInitAux, TuneMode::Frozen];

    pub fn name(self) -> &'static str {
        match self {
            TuneMode::Joint => "joint",
            TuneMode::ScaleOnly => "scale-only",
            TuneMode::RandomInitAux => "random-init-aux",
            TuneMode::Frozen => "frozen",
        }
    }
}

impl fmt::Display for TuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TuneMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tune mode `{s}`")))
    }
}

/// Numerically stable softmax of `logits`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut w = logits.to_vec();
    softmax_in_place(&mut w);
    w
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationEnsemble {
    pub target_id: String,
    pub target: ExpertWeights,
    /// Auxiliary experts by descending similarity.
    pub aux: Vec<ExpertWeights>,
    pub aux_ids: Vec<String>,
    pub aux_similarity: Vec<f64>,
    /// `k + 1` logits; index 0 is the target.
    pub alpha: Vec<f64>,
}

impl InterpolationEnsemble {
    /// Zero logits, so the weights start uniform.
    pub fn new(
        target_id: impl Into<String>,
        target: ExpertWeights,
        aux: Vec<(String, f64, ExpertWeights)>,
    ) -> Result<Self> {
        let target_id = target_id.into();
        for (id, _, e) in &aux {
            if e.config != target.config || !e.layout.is_compatible(&target.layout) || e.len() != target.len() {
                return Err(Error::Layout(format!(
                    "auxiliary expert `{id}` is not layout-compatible with target `{target_id}`"
                )));
            }
        }
        let k = aux.len();
        let (mut aux_ids, mut aux_similarity, mut experts) = (Vec::new(), Vec::new(), Vec::new());
        for (id, s, e) in aux {
            aux_ids.push(id);
            aux_similarity.push(s);
            experts.push(e);
        }
        Ok(Self { target_id, target, aux: experts, aux_ids, aux_similarity, alpha: vec![0.0; k + 1] })
    }

    pub fn k(&self) -> usize {
        self.aux.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.alpha)
    }

    /// Target first, then the aux experts.
    pub fn members(&self) -> impl Iterator<Item = &ExpertWeights> {
        std::iter::once(&self.target).chain(&self.aux)
    }

    fn check(&self) -> Result<()> {
        if self.alpha.len() != self.k() + 1 {
            return Err(Error::Layout(format!(
                "ensemble has {} experts but {} logits",
                self.k() + 1,
                self.alpha.len()
            )));
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numerical { step: 0, detail: "interpolation logits must be finite".into() });
        }
        for (id, e) in self.aux_ids.iter().zip(&self.aux) {
            if !e.layout.is_compatible(&self.target.layout) || e.len() != self.target.len() {
                return Err(Error::Layout(format!("auxiliary expert `{id}` no longer matches the target layout")));
            }
        }
        Ok(())
    }

    fn flat(&self) -> Vec<f64> {
        let mut p = self.alpha.clone();
        for e in self.members() {
            p.extend_from_slice(&e.values.0);
        }
        p
    }

    fn with_flat(&self, p: &[f64]) -> Result<Self> {
        let (k1, n) = (self.k() + 1, self.target.len());
        let member = |i: usize| ParameterVector(p[k1 + i * n..k1 + (i + 1) * n].to_vec());
        let mut out = self.clone();
        out.alpha = p[..k1].to_vec();
        out.target = self.target.with_values(member(0))?;
        for (i, e) in out.aux.iter_mut().enumerate() {
            *e = e.with_values(member(i + 1))?;
        }
        Ok(out)
    }
}

/// Target expert from the pool plus its `k` nearest neighbours.
pub fn build_ensemble(target_id: &str, pool: &ExpertPool, k: usize) -> Result<InterpolationEnsemble> {
    let target = pool.get(target_id)?.expert.clone();
    let ranked = top_k(target_id, &pool.embeddings(), k)?;
    let aux = ranked
        .into_iter()
        .map(|(id, s)| Ok((id.clone(), s, pool.get(&id)?.expert.clone())))
        .collect::<Result<Vec<_>>>()?;
    InterpolationEnsemble::new(target_id, target, aux)
}

/// `sum_i softmax(alpha)_i * phi_i`, accumulated in member order. The
/// result keeps the target's config, layout and provenance.
pub fn interpolate(ens: &InterpolationEnsemble) -> Result<ExpertWeights> {
    ens.check()?;
    let w = ens.weights();
    let mut out = vec![0.0; ens.target.len()];
    for (wi, e) in w.iter().zip(ens.members()) {
        for (o, x) in out.iter_mut().zip(&e.values.0) {
            *o += wi * x;
        }
    }
    ens.target.with_values(ParameterVector(out))
}

/// Loss and gradient over `[alpha, phi_t, phi_1..phi_k]` with the mixture
/// formed on the tape.
fn ensemble_value_and_grad(
    backbone: &Backbone,
    ens: &InterpolationEnsemble,
    p: &[f64],
    batch: &Batch,
    smoothing: f64,
) -> Result<(f64, Vec<f64>)> {
    let (k1, n) = (ens.k() + 1, ens.target.len());
    let mut tape = Tape::new();
    let theta = tape.constant(Tensor::vector(backbone.params().0.clone()));
    let x = tape.constant(batch.x.clone());
    let flat = tape.param(Tensor::vector(p.to_vec()));
    let logits = tape.slice(flat, 0, vec![k1]);
    let w = tape.softmax(logits);
    let members: Vec<_> = (0..k1).map(|i| tape.slice(flat, k1 + i * n, vec![n])).collect();
    let mixed = tape.weighted_sum(w, &members);
    let view = ExpertView { layout: &ens.target.layout, flat: mixed };
    let out = backbone.forward(&mut tape, theta, (n > 0).then_some(&view), x);
    let loss = tape.cross_entropy(out, &batch.y, &batch.weights, smoothing);
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numerical { step: 0, detail: format!("loss is {value}") });
    }
    let g = tape.backward(loss).take(flat).unwrap_or_else(|| vec![0.0; p.len()]);
    Ok((value, g))
}

/// Logits of the ensemble's interpolated forward pass, computed on a tape
/// rather than through [`interpolate`].
pub fn ensemble_logits(backbone: &Backbone, ens: &InterpolationEnsemble, x: &Tensor) -> Result<Tensor> {
    ens.check()?;
    backbone.check_input(x)?;
    let (k1, n) = (ens.k() + 1, ens.target.len());
    let mut tape = Tape::new();
    let theta = tape.constant(Tensor::vector(backbone.params().0.clone()));
    let xv = tape.constant(x.clone());
    let logits = tape.constant(Tensor::vector(ens.alpha.clone()));
    let w = tape.softmax(logits);
    let members: Vec<_> = ens.members().map(|e| tape.constant(Tensor::vector(e.values.0.clone()))).collect();
    let mixed = tape.weighted_sum(w, &members);
    let view = ExpertView { layout: &ens.target.layout, flat: mixed };
    let out = backbone.forward(&mut tape, theta, (n > 0).then_some(&view), xv);
    debug_assert_eq!(members.len(), k1);
    Ok(tape.value(out).clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneMetrics {
    pub task: String,
    pub mode: TuneMode,
    pub k: usize,
    pub aux: Vec<String>,
    pub aux_similarity: Vec<f64>,
    pub steps: usize,
    pub epoch_losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
}

impl TuneMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiTuneOutcome {
    pub ensemble: InterpolationEnsemble,
    pub collapsed: ExpertWeights,
    pub metrics: TuneMetrics,
}

/// Knobs beyond [`TrainConfig`]. `alpha_lr` defaults to the expert rate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TuneOptions {
    pub alpha_lr: Option<f64>,
}

/// Tunes `ensemble` on `task`'s train split in the given mode and
/// evaluates the collapsed expert on val and test.
pub fn pi_tune(
    backbone: &Backbone,
    task: &TaskDataset,
    ensemble: &InterpolationEnsemble,
    mode: TuneMode,
    tc: &TrainConfig,
) -> Result<PiTuneOutcome> {
    pi_tune_with(backbone, task, ensemble, mode, tc, TuneOptions::default())
}

pub fn pi_tune_with(
    backbone: &Backbone,
    task: &TaskDataset,
    ensemble: &InterpolationEnsemble,
    mode: TuneMode,
    tc: &TrainConfig,
    opts: TuneOptions,
) -> Result<PiTuneOutcome> {
    if task.val.is_empty() {
        return Err(Error::Data(format!("task `{}` has no validation split", task.id())));
    }
    let (tuned, epoch_losses) = tune_on_split(backbone, &task.train, None, ensemble, mode, tc, opts)?;
    let collapsed = interpolate(&tuned)?;
    let val = evaluate(backbone, Some(&collapsed), &task.val)?;
    let test = evaluate(backbone, Some(&collapsed), &task.test)?;
    let metrics = TuneMetrics {
        task: task.id().to_string(),
        mode,
        k: tuned.k(),
        aux: tuned.aux_ids.clone(),
        aux_similarity: tuned.aux_similarity.clone(),
        steps: if mode == TuneMode::Frozen { 0 } else { tc.steps },
        epoch_losses,
        weights: tuned.weights(),
        val_accuracy: val.accuracy,
        test_accuracy: test.accuracy,
        test_loss: test.loss,
    };
    Ok(PiTuneOutcome { ensemble: tuned, collapsed, metrics })
}

fn tune_on_split(
    backbone: &Backbone,
    split: &Split,
    row_weights: Option<&[f64]>,
    ensemble: &InterpolationEnsemble,
    mode: TuneMode,
    tc: &TrainConfig,
    opts: TuneOptions,
) -> Result<(InterpolationEnsemble, Vec<f64>)> {
    ensemble.check()?;
    ensemble.target.check_attachable(backbone.config())?;
    tc.validate()?;
    if mode == TuneMode::Frozen {
        return Ok((ensemble.clone(), Vec::new()));
    }
    let mut start = ensemble.clone();
    if mode == TuneMode::RandomInitAux {
        for (i, e) in start.aux.iter_mut().enumerate() {
            let fresh = build_expert(&e.config, backbone, derive_seed(tc.seed, &format!("aux/{i}")))?;
            *e = e.with_values(fresh.values)?;
        }
    }
    let (k1, n) = (start.k() + 1, start.target.len());
    let alpha_lr = opts.alpha_lr.unwrap_or(tc.lr);
    if !(alpha_lr > 0.0 && alpha_lr.is_finite()) {
        return Err(Error::Config(format!("alpha learning rate must be positive, got {alpha_lr}")));
    }
    let groups = [
        ParamGroup { range: 0..k1, lr: alpha_lr, trainable: true },
        ParamGroup { range: k1..k1 + k1 * n, lr: tc.lr, trainable: mode != TuneMode::ScaleOnly },
    ];
    let outcome = run_sgd(start.flat(), &groups, split.len(), tc, |p, idx| {
        let mut batch = Batch::from_split(split, idx);
        if let Some(w) = row_weights {
            batch.weights = idx.iter().map(|&i| w[i]).collect();
        }
        ensemble_value_and_grad(backbone, &start, p, &batch, tc.label_smoothing)
    })?;
    Ok((start.with_flat(&outcome.params)?, outcome.epoch_losses))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotMetrics {
    pub task: String,
    pub neighbor: String,
    pub similarity: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
}

/// Evaluates the expert of the task nearest to `target_embedding` on the
/// target's test split, with no tuning. The target itself is skipped if it
/// is in the pool.
pub fn zero_shot(
    backbone: &Backbone,
    target: &TaskDataset,
    target_embedding: &TaskEmbedding,
    pool: &ExpertPool,
) -> Result<ZeroShotMetrics> {
    if pool.is_empty() {
        return Err(Error::Retrieval("zero-shot transfer needs a nonempty pool".into()));
    }
    let ranked = rank_against(target_embedding, &pool.embeddings())?;
    let (neighbor, similarity) = ranked
        .into_iter()
        .next()
        .ok_or_else(|| Error::Retrieval(format!("pool holds no task other than `{}`", target.id())))?;
    let m = evaluate(backbone, Some(&pool.get(&neighbor)?.expert), &target.test)?;
    Ok(ZeroShotMetrics {
        task: target.id().to_string(),
        neighbor,
        similarity,
        test_accuracy: m.accuracy,
        test_loss: m.loss,
    })
}

/// Probe step budget for embedding a task that has no trained expert.
pub const PROBE_STEPS: usize = 50;

/// Embedding of `target` via a briefly trained probe expert: `init` trained
/// for [`PROBE_STEPS`] steps, then the Fisher on the train split.
pub fn probe_embedding(
    backbone: &Backbone,
    init: &ExpertWeights,
    target: &TaskDataset,
    tc: &TrainConfig,
) -> Result<TaskEmbedding> {
    let probe = train_on_split(backbone, init, &target.train, &tc.with_steps(PROBE_STEPS))?;
    fisher_diag(backbone, &probe.expert, target.id(), &target.train, DEFAULT_SAMPLE_CAP)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultitaskReport {
    pub pi: BTreeMap<String, EvalMetrics>,
    pub baseline: BTreeMap<String, EvalMetrics>,
    pub weights: Vec<f64>,
}

impl MultitaskReport {
    pub fn mean_accuracy(m: &BTreeMap<String, EvalMetrics>) -> f64 {
        m.values().map(|e| e.accuracy).sum::<f64>() / m.len().max(1) as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Tunes one ensemble jointly on the union of `tasks`' train splits, with
/// rows weighted so that every task carries equal total weight. The
/// baseline is the ensemble's target expert alone, trained the same way.
pub fn multitask_tune(
    backbone: &Backbone,
    tasks: &[TaskDataset],
    ensemble: &InterpolationEnsemble,
    tc: &TrainConfig,
) -> Result<MultitaskReport> {
    if tasks.is_empty() {
        return Err(Error::Data("multi-task tuning needs at least one task".into()));
    }
    let union = Split::concat(&tasks.iter().map(|t| &t.train).collect::<Vec<_>>())?;
    let mut weights = Vec::with_capacity(union.len());
    for t in tasks {
        let w = 1.0 / t.train.len() as f64;
        weights.extend(std::iter::repeat_n(w, t.train.len()));
    }
    let opts = TuneOptions::default();
    let (pi, _) = tune_on_split(backbone, &union, Some(&weights), ensemble, TuneMode::Joint, tc, opts)?;
    let pi_expert = interpolate(&pi)?;
    let solo = InterpolationEnsemble::new(&ensemble.target_id, ensemble.target.clone(), Vec::new())?;
    let (base, _) = tune_on_split(backbone, &union, Some(&weights), &solo, TuneMode::Joint, tc, opts)?;
    let base_expert = interpolate(&base)?;
    let mut report = MultitaskReport { pi: BTreeMap::new(), baseline: BTreeMap::new(), weights: pi.weights() };
    for t in tasks {
        report.pi.insert(t.id().to_string(), evaluate(backbone, Some(&pi_expert), &t.test)?);
        report.baseline.insert(t.id().to_string(), evaluate(backbone, Some(&base_expert), &t.test)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::experts::ExpertConfig;

    fn bb() -> Backbone {
        let cfg =
            BackboneConfig { layers: 1, dim: 8, tokens: 2, input_dim: 4, mlp_dim: 8, classes: 3, ..Default::default() };
        Backbone::init(cfg, 3).unwrap().freeze()
    }

    fn constant(e: &ExpertWeights, v: f64) -> ExpertWeights {
        e.with_values(ParameterVector(vec![v; e.len()])).unwrap()
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in TuneMode::ALL {
            assert_eq!(m.name().parse::<TuneMode>().unwrap(), m);
        }
        assert!("both".parse::<TuneMode>().is_err());
    }

    #[test]
    fn interpolation_examples() {
        let b = bb();
        let e = build_expert(&ExpertConfig::adapter(2), &b, 0).unwrap();
        let (one, two, four) = (constant(&e, 1.0), constant(&e, 2.0), constant(&e, 4.0));
        let ens =
            InterpolationEnsemble::new("t", one.clone(), vec![("a".into(), 0.9, two.clone()), ("b".into(), 0.5, four)])
                .unwrap();
        assert_eq!(ens.weights(), vec![1.0 / 3.0; 3]);
        let mixed = interpolate(&ens).unwrap();
        assert!(mixed.values.0.iter().all(|v| (v - 7.0 / 3.0).abs() < 1e-15));
        assert_eq!(mixed.layout, e.layout);

        let mut pair = InterpolationEnsemble::new("t", one.clone(), vec![("a".into(), 0.9, two)]).unwrap();
        pair.alpha = vec![0.0, 3f64.ln()];
        let w = pair.weights();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        assert!(interpolate(&pair).unwrap().values.0.iter().all(|v| (v - 1.75).abs() < 1e-15));
        pair.alpha = vec![40.0, -40.0];
        assert!(interpolate(&pair).unwrap().values.0.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let lone = InterpolationEnsemble::new("t", one.clone(), Vec::new()).unwrap();
        assert_eq!(interpolate(&lone).unwrap(), one);
    }

    #[test]
    fn incompatible_aux_is_rejected() {
        let b = bb();
        let a = build_expert(&ExpertConfig::adapter(2), &b, 0).unwrap();
        let l = build_expert(&ExpertConfig::lora(2), &b, 0).unwrap();
        assert!(InterpolationEnsemble::new("t", a, vec![("l".into(), 1.0, l)]).is_err());
    }
}
