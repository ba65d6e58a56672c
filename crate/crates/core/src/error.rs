use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layout error: {0}")]
    Layout(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    /// `k` outside `0..=pool-1`, or the target missing from the pool.
    #[error("retrieval error: {0}")]
    Retrieval(String),

    #[error("non-finite value at step {step}: {detail}")]
    Numerical { step: usize, detail: String },

    /// Training produced a non-finite loss. Carries the last finite parameter state.
    #[error("training diverged at step {step} (last finite loss {last_finite_loss})")]
    Diverged { step: usize, last_finite_loss: f64, last_finite_state: Box<Vec<f64>> },

    #[error("degenerate embedding for task `{0}`: all entries are zero")]
    DegenerateEmbedding(String),

    #[error("degenerate basis: orthogonal component norm {0:e} below 1e-10")]
    DegenerateBasis(f64),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}
