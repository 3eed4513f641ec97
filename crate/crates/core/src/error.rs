use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("degenerate representation: latent vector of example {example} is constant")]
    DegenerateRepresentation { example: usize },

    #[error("incomplete matrix: missing value for partner `{partner}` / target `{target}`")]
    Incomplete { partner: String, target: String },

    #[error("training diverged at epoch {epoch} ({run})")]
    TrainingDiverged { run: String, epoch: usize },

    #[error("no valid grouping fits the budget {budget}")]
    Infeasible { budget: f64 },

    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),

    #[error("integrity error in bundled data `{file}`: {reason}")]
    Integrity { file: String, reason: String },

    #[error("output directory {0} exists and is not empty")]
    OutputExists(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
