use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no traces")]
    NoTraces,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid config: `{field}`: {msg}")]
    InvalidConfig { field: String, msg: String },

    #[error("empty history")]
    EmptyHistory,

    #[error("action {action} out of range for {encodings} encodings")]
    ActionOutOfRange { action: usize, encodings: usize },

    #[error("step on terminal session state")]
    Terminal,

    #[error("degenerate probabilities: {0}")]
    DegenerateProbabilities(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("non-finite gradient at iteration {iteration} (norm {norm})")]
    NonFiniteGradient { iteration: usize, norm: f64 },

    #[error("singular covariance after jitter escalation (last jitter {jitter:e})")]
    SingularCovariance { jitter: f64 },

    #[error("rank-deficient design matrix")]
    RankDeficient,

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
