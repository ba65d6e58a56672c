#![allow(dead_code)]

use pitune_core::autodiff::Tensor;
use pitune_core::rng::labelled_rng;
use pitune_core::tasks::realize;
use pitune_core::{Backbone, BackboneConfig, Batch, SplitSizes, TaskDataset, TaskSpec};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn backbone(seed: u64) -> Backbone {
    Backbone::init(BackboneConfig::default(), seed).unwrap().freeze()
}

pub fn small_sizes() -> SplitSizes {
    SplitSizes { train: 200, val: 100, test: 100 }
}

pub fn rotation_task(id: &str, deg: f64, sizes: SplitSizes, seed: u64) -> TaskDataset {
    realize(&TaskSpec::rotation(id, f64::to_radians(deg)), sizes, seed).unwrap()
}

/// Gaussian batch with uniform random labels.
pub fn random_batch(cfg: &BackboneConfig, rows: usize, seed: u64) -> Batch {
    let mut rng = labelled_rng(seed, "test-batch");
    let data = (0..rows * cfg.input_dim).map(|_| rng.sample(StandardNormal)).collect();
    let y = (0..rows).map(|_| rng.random_range(0..cfg.classes)).collect();
    Batch::new(Tensor::new(vec![rows, cfg.input_dim], data).unwrap(), y)
}

/// Random values in `[-scale, scale]` for every expert coordinate, so that
/// zero-initialised parts are exercised too.
pub fn perturb(expert: &pitune_core::ExpertWeights, scale: f64, seed: u64) -> pitune_core::ExpertWeights {
    let mut rng = labelled_rng(seed, "perturb");
    let v = (0..expert.len()).map(|_| rng.random_range(-scale..scale)).collect();
    expert.with_values(pitune_core::ParameterVector(v)).unwrap()
}
