use std::path::PathBuf;

use e2ebt_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),
    #[error("sample is not one-hot: {0}")]
    NotOneHot(String),
    #[error("dimension mismatch: {what} ({left} vs {right})")]
    DimensionMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("batch is missing the {0} side")]
    MissingSide(&'static str),
    #[error("sequence too long: {len} > {max}")]
    TooLong { len: usize, max: usize },
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("non-finite loss at iteration {iteration}: {report}")]
    NonFiniteLoss { iteration: u64, report: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line counts differ ({left} vs {right})")]
    LineCountMismatch {
        path: PathBuf,
        left: usize,
        right: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    /// Collapse into the tensor error type, for closures handed to the
    /// tensor crate.
    pub fn into_tensor(self) -> TensorError {
        match self {
            CoreError::Tensor(e) => e,
            other => TensorError::InvalidArgument {
                op: "core",
                msg: other.to_string(),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
