//! Predict-interpolate tuning over a frozen toy transformer.
//!
//! Pipeline: train one parameter-efficient expert per task, embed each task
//! by the diagonal empirical Fisher of its expert, retrieve the most similar
//! tasks, then tune a softmax-weighted interpolation of their experts on the
//! target task. The collapsed result has the same layout as a single expert.

pub mod analysis;
pub mod autodiff;
pub mod backbone;
pub mod error;
pub mod experts;
pub mod fisher;
pub mod format;
pub mod interp;
pub mod params;
pub mod registry;
pub mod rng;
pub mod tasks;
pub mod train;

pub use backbone::{Backbone, BackboneConfig};
pub use error::{Error, Result};
pub use experts::{build_expert, ExpertConfig, ExpertKind, ExpertWeights};
pub use params::{Layout, ParameterVector};
pub use tasks::{Split, SplitSizes, TaskDataset, TaskSpec};
pub use train::{Batch, EvalMetrics, TrainConfig};
