//! Test accuracy as a function of the number of auxiliary experts.

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::interp::{build_ensemble, pi_tune, TuneMode};
use crate::registry::ExpertPool;
use crate::tasks::TaskDataset;
use crate::train::TrainConfig;

/// Joint π-tune for `k = 0..=k_max`, all with the same config and seed.
pub fn k_sweep(
    backbone: &Backbone,
    target: &TaskDataset,
    pool: &ExpertPool,
    k_max: usize,
    tc: &TrainConfig,
) -> Result<Vec<(usize, f64)>> {
    let limit = pool.len().saturating_sub(1);
    if k_max > limit {
        return Err(Error::Retrieval(format!("k max {k_max} exceeds pool size - 1 = {limit}")));
    }
    (0..=k_max)
        .map(|k| {
            let ens = build_ensemble(target.id(), pool, k)?;
            Ok((k, pi_tune(backbone, target, &ens, TuneMode::Joint, tc)?.metrics.test_accuracy))
        })
        .collect()
}
