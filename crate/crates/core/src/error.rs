use crate::data::DataError;
use crate::diff::DiffError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("tokenization: {0}")]
    Tokenization(String),
    #[error("pooling: {0}")]
    Pooling(String),
    #[error("`{0}` is not a node of the graph")]
    Lookup(String),
    #[error("{0} input unavailable for pair ({1}, {2})")]
    Availability(&'static str, String, String),
    #[error("negative sampling: {0}")]
    Sampling(String),
    #[error("threshold: {0}")]
    Threshold(String),
    #[error("evaluation: {0}")]
    Evaluation(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("synthetic data: {0}")]
    Generation(String),
    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit status: 2 usage, 3 data validation, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Diff(_) | Error::Divergence { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
