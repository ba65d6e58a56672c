//! Synthetic task families with a known similarity structure.
//!
//! A task draws class `c` uniformly and emits `x = R(rho) mu_c + eps`,
//! `eps ~ N(0, sigma^2 I)`, labelled `perm(c)`. The class means sit on a
//! regular polygon of radius 3 in the plane of the first two coordinates and
//! `R(rho)` rotates that plane. Ground-truth similarity is `cos(rho_i - rho_j)`,
//! minus 1 for pairs with different label permutations.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::format::{self, Header, DATASET_MAGIC};
use crate::params::ParameterVector;
use crate::rng::{derive_seed, labelled_rng};
use crate::train::{backbone_value_and_grad, run_sgd, Batch, ParamGroup, TrainConfig};

pub const CLASS_MEAN_NORM: f64 = 3.0;
/// Similarity penalty for pairs whose label permutations differ.
pub const PERMUTATION_PENALTY: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Rotation,
    LabelPermutation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub family: FamilyKind,
    /// Rotation angle in radians, in `[0, 2pi)`.
    pub angle: f64,
    pub permutation: Vec<usize>,
    pub classes: usize,
    pub noise: f64,
    pub dim: usize,
}

impl TaskSpec {
    pub fn rotation(id: impl Into<String>, angle: f64) -> Self {
        let classes = 5;
        Self {
            id: id.into(),
            family: FamilyKind::Rotation,
            angle: angle.rem_euclid(TAU),
            permutation: (0..classes).collect(),
            classes,
            noise: 1.0,
            dim: 128,
        }
    }

    pub fn with_permutation(mut self, permutation: Vec<usize>) -> Self {
        self.family = if is_identity(&permutation) { FamilyKind::Rotation } else { FamilyKind::LabelPermutation };
        self.permutation = permutation;
        self
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn is_identity_permutation(&self) -> bool {
        is_identity(&self.permutation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\', '\n', '=']) {
            return Err(Error::Config(format!("invalid task id {:?}", self.id)));
        }
        if !(0.0..TAU).contains(&self.angle) {
            return Err(Error::Config(format!("angle {} outside [0, 2pi)", self.angle)));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config("rotation needs dim >= 2".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be >= 0, got {}", self.noise)));
        }
        let set: BTreeSet<usize> = self.permutation.iter().copied().collect();
        if self.permutation.len() != self.classes || set.len() != self.classes || set.iter().any(|&c| c >= self.classes)
        {
            return Err(Error::Config(format!(
                "permutation {:?} is not a bijection on 0..{}",
                self.permutation, self.classes
            )));
        }
        let expected = if is_identity(&self.permutation) { FamilyKind::Rotation } else { FamilyKind::LabelPermutation };
        if self.family != expected {
            return Err(Error::Config(format!(
                "task {} is tagged {:?} but its permutation says {:?}",
                self.id, self.family, expected
            )));
        }
        Ok(())
    }

    /// Mean of class `c` before labelling: `R(angle) mu_c`.
    pub fn class_mean(&self, c: usize) -> Vec<f64> {
        let phase = TAU * c as f64 / self.classes as f64 + self.angle;
        let mut m = vec![0.0; self.dim];
        m[0] = CLASS_MEAN_NORM * phase.cos();
        m[1] = CLASS_MEAN_NORM * phase.sin();
        m
    }
}

fn is_identity(p: &[usize]) -> bool {
    p.iter().enumerate().all(|(i, &v)| i == v)
}

/// Ground-truth similarity between two specs.
pub fn ground_truth_similarity(a: &TaskSpec, b: &TaskSpec) -> f64 {
    let mut s = (a.angle - b.angle).cos();
    if a.permutation != b.permutation {
        s -= PERMUTATION_PENALTY;
    }
    s.clamp(-1.0, 1.0)
}

/// Inputs to [`make_family`]. Specs enumerate permutations (outer) by angles
/// (inner); the first `count` are kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyRequest {
    pub base_seed: u64,
    pub count: usize,
    pub angles_deg: Vec<f64>,
    pub permutations: Vec<Vec<usize>>,
    pub classes: usize,
    pub noise: f64,
    pub dim: usize,
}

impl FamilyRequest {
    pub fn rotations(base_seed: u64, angles_deg: &[f64]) -> Self {
        Self {
            base_seed,
            count: angles_deg.len(),
            angles_deg: angles_deg.to_vec(),
            permutations: vec![(0..5).collect()],
            classes: 5,
            noise: 1.0,
            dim: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub specs: Vec<TaskSpec>,
    /// Per-task dataset seeds derived from the base seed.
    pub data_seeds: Vec<u64>,
    pub ground_truth: Vec<Vec<f64>>,
}

pub fn task_id(angle_deg: f64, perm_index: usize) -> String {
    let a = if angle_deg.fract() == 0.0 {
        format!("{:03}", angle_deg as i64)
    } else {
        format!("{angle_deg}").replace('.', "p")
    };
    if perm_index == 0 {
        format!("rot{a}")
    } else {
        format!("rot{a}-perm{perm_index}")
    }
}

pub fn make_family(req: &FamilyRequest) -> Result<Family> {
    if req.count < 2 {
        return Err(Error::Config(format!("a family needs n >= 2 tasks, got {}", req.count)));
    }
    let available = req.angles_deg.len() * req.permutations.len();
    if req.count > available {
        return Err(Error::Config(format!("requested {} tasks but the grid only has {available}", req.count)));
    }
    let mut specs = Vec::with_capacity(req.count);
    'outer: for (pi, perm) in req.permutations.iter().enumerate() {
        for &deg in &req.angles_deg {
            if specs.len() == req.count {
                break 'outer;
            }
            let spec = TaskSpec {
                id: task_id(deg, pi),
                family: FamilyKind::Rotation,
                angle: deg.to_radians().rem_euclid(TAU),
                permutation: (0..req.classes).collect(),
                classes: req.classes,
                noise: req.noise,
                dim: req.dim,
            }
            .with_permutation(perm.clone());
            spec.validate()?;
            specs.push(spec);
        }
    }
    let mut seen = BTreeSet::new();
    for s in &specs {
        if !seen.insert(s.id.clone()) {
            return Err(Error::Config(format!("duplicate task id `{}`", s.id)));
        }
    }
    let ground_truth = specs.iter().map(|a| specs.iter().map(|b| ground_truth_similarity(a, b)).collect()).collect();
    let data_seeds = specs.iter().map(|s| derive_seed(req.base_seed, &format!("data/{}", s.id))).collect();
    Ok(Family { specs, data_seeds, ground_truth })
}

/// Row-major inputs with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.last_dim()
    }

    pub fn subset(&self, idx: &[usize]) -> Split {
        Split { x: self.x.gather_rows(idx), y: idx.iter().map(|&i| self.y[i]).collect() }
    }

    pub fn concat(parts: &[&Split]) -> Result<Split> {
        let first = parts.first().ok_or_else(|| Error::Data("nothing to concatenate".into()))?;
        let d = first.dim();
        let mut data = Vec::new();
        let mut y = Vec::new();
        for p in parts {
            if p.dim() != d {
                return Err(Error::Layout(format!("split widths differ: {} vs {d}", p.dim())));
            }
            data.extend_from_slice(p.x.data());
            y.extend_from_slice(&p.y);
        }
        Ok(Split { x: Tensor::from_parts(vec![y.len(), d], data), y })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self { train: 2000, val: 500, test: 500 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub spec: TaskSpec,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl TaskDataset {
    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut h = Header::new();
        h.push("task", &self.spec.id)
            .push("dim", self.spec.dim)
            .push("train", self.train.len())
            .push("val", self.val.len())
            .push("test", self.test.len());
        let mut payload = Vec::new();
        for s in [&self.train, &self.val, &self.test] {
            payload.extend_from_slice(s.x.data());
            payload.extend(s.y.iter().map(|&y| y as f64));
        }
        format::write_file(path, DATASET_MAGIC, &h, &payload)
    }

    pub fn load(path: &Path, spec: TaskSpec) -> Result<Self> {
        let (h, payload) = format::read_file(path, DATASET_MAGIC)?;
        if h.require("task", path)? != spec.id {
            return Err(Error::format(path, format!("dataset cache is not for task `{}`", spec.id)));
        }
        let d: usize = h.parse("dim", path)?;
        let sizes: Vec<usize> = ["train", "val", "test"].iter().map(|k| h.parse(k, path)).collect::<Result<_>>()?;
        let need: usize = sizes.iter().map(|n| n * (d + 1)).sum();
        if payload.len() != need {
            return Err(Error::format(path, "dataset payload size mismatch"));
        }
        let mut off = 0;
        let mut splits = Vec::new();
        for n in sizes {
            let x = payload[off..off + n * d].to_vec();
            off += n * d;
            let y = payload[off..off + n].iter().map(|&v| v as usize).collect();
            off += n;
            splits.push(Split { x: Tensor::new(vec![n, d], x)?, y });
        }
        let test = splits.pop().unwrap();
        let val = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        Ok(Self { spec, train, val, test })
    }
}

fn sample_split(spec: &TaskSpec, n: usize, seed: u64, label: &str) -> Split {
    let mut rng = labelled_rng(seed, &format!("split/{label}"));
    let means: Vec<Vec<f64>> = (0..spec.classes).map(|c| spec.class_mean(c)).collect();
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..spec.classes);
        for &m in &means[c] {
            let e: f64 = rng.sample(StandardNormal);
            data.push(m + spec.noise * e);
        }
        y.push(spec.permutation[c]);
    }
    Split { x: Tensor::from_parts(vec![n, spec.dim], data), y }
}

/// Pure function of `(spec, sizes, seed)`; each split uses its own stream.
pub fn realize(spec: &TaskSpec, sizes: SplitSizes, seed: u64) -> Result<TaskDataset> {
    spec.validate()?;
    if sizes.train == 0 || sizes.val == 0 || sizes.test == 0 {
        return Err(Error::Config(format!("split sizes must be positive: {sizes:?}")));
    }
    Ok(TaskDataset {
        spec: spec.clone(),
        train: sample_split(spec, sizes.train, seed, "train"),
        val: sample_split(spec, sizes.val, seed, "val"),
        test: sample_split(spec, sizes.test, seed, "test"),
    })
}

/// Per-class uniform subsample of the train split; val/test untouched.
/// Kept rows stay in their original order.
pub fn few_shot(dataset: &TaskDataset, shots: usize, seed: u64) -> Result<TaskDataset> {
    if shots == 0 {
        return Err(Error::Config("shots must be >= 1".into()));
    }
    let mut rng = labelled_rng(seed, &format!("few-shot/{}", dataset.spec.id));
    let mut keep = Vec::with_capacity(shots * dataset.spec.classes);
    for class in 0..dataset.spec.classes {
        let mut idx: Vec<usize> = (0..dataset.train.len()).filter(|&i| dataset.train.y[i] == class).collect();
        if idx.len() < shots {
            return Err(Error::Data(format!(
                "class {class} of task `{}` has {} train samples, {shots} shots requested",
                dataset.spec.id,
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        keep.extend_from_slice(&idx[..shots]);
    }
    keep.sort_unstable();
    Ok(TaskDataset { train: dataset.train.subset(&keep), ..dataset.clone() })
}

/// Trains every backbone weight on the pooled train splits, then freezes.
/// Only identity-permutation tasks may be pooled.
pub fn pretrain_backbone(config: BackboneConfig, pool: &[TaskDataset], tc: &TrainConfig) -> Result<Backbone> {
    if pool.is_empty() {
        return Err(Error::Data("pretraining pool is empty".into()));
    }
    if let Some(t) = pool.iter().find(|t| !t.spec.is_identity_permutation()) {
        return Err(Error::Data(format!("task `{}` has permuted labels and is reserved for experts", t.spec.id)));
    }
    let union = Split::concat(&pool.iter().map(|t| &t.train).collect::<Vec<_>>())?;
    let init = Backbone::init(config, derive_seed(tc.seed, "pretrain"))?;
    if union.dim() != init.config().input_dim {
        return Err(Error::Layout(format!(
            "task width {} does not match backbone input {}",
            union.dim(),
            init.config().input_dim
        )));
    }
    let groups = [ParamGroup { range: 0..init.params().len(), lr: tc.lr, trainable: true }];
    let outcome = run_sgd(init.params().0.clone(), &groups, union.len(), tc, |p, idx| {
        backbone_value_and_grad(&init, p, &Batch::from_split(&union, idx), tc.label_smoothing)
    })?;
    Ok(init.with_params(ParameterVector(outcome.params))?.freeze())
}

/// Task manifest: one `[[task]]` record per spec.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub task: Vec<ManifestRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    #[serde(flatten)]
    pub spec: TaskSpec,
    pub data_seed: u64,
    pub sizes: SplitSizes,
    /// Held-in tasks feed backbone pretraining.
    #[serde(default)]
    pub pretrain: bool,
    /// Low-shot tasks keep this many train rows per class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
}

impl Manifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
        let mut seen = BTreeSet::new();
        for r in &m.task {
            r.spec.validate()?;
            if !seen.insert(r.spec.id.as_str()) {
                return Err(Error::format(path, format!("duplicate task id `{}`", r.spec.id)));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRecord> {
        self.task.iter().find(|r| r.spec.id == id)
    }
}
