use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Bessel order {order} exceeds the supported maximum {max}")]
    UnsupportedOrder { order: u32, max: u32 },

    #[error("matrix is numerically rank deficient at column {column}")]
    RankDeficient { column: usize },

    #[error("sample set is empty")]
    EmptySample,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("stage {stage} outside horizon {horizon}")]
    Stage { stage: usize, horizon: usize },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("characteristic-function table does not live on the active frequency grid")]
    GridMismatch,

    #[error("non-finite value in trajectory {trajectory} at stage {stage}")]
    Divergence { trajectory: usize, stage: usize },

    #[error("target is not real and symmetric (max |Im| = {max_imag:e})")]
    Symmetry { max_imag: f64 },

    #[error("target is rougher than the noise allows; infeasible modes {modes:?}")]
    InfeasibleTarget { modes: Vec<i64> },

    #[error("sensitivity matrix needs {needed} bytes, budget is {budget}")]
    MemoryBudget { needed: usize, budget: usize },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
