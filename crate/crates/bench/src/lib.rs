//! Fixtures shared by the benchmarks.

use pitune_core::tasks::realize;
use pitune_core::{
    build_expert, Backbone, BackboneConfig, ExpertConfig, ExpertWeights, SplitSizes, TaskDataset, TaskSpec,
};

pub struct Fixture {
    pub backbone: Backbone,
    pub dataset: TaskDataset,
    pub expert: ExpertWeights,
}

/// Untrained default backbone, one realized rotation task, and a fresh
/// expert of `cfg`.
pub fn fixture(cfg: &ExpertConfig, train_rows: usize) -> Fixture {
    let backbone = Backbone::init(BackboneConfig::default(), 1).expect("default backbone").freeze();
    let spec = TaskSpec::rotation("bench", 0.5);
    let sizes = SplitSizes { train: train_rows, val: 16, test: 16 };
    let dataset = realize(&spec, sizes, 2).expect("task realizes");
    let expert = build_expert(cfg, &backbone, 3).expect("expert builds");
    Fixture { backbone, dataset, expert }
}
