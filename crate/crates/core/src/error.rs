use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user-supplied configuration (unknown names, out-of-range values).
    #[error("configuration error: {0}")]
    Config(String),

    /// The dataset violates a structural constraint.
    #[error("dataset integrity error: {0}")]
    Integrity(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Training produced a non-finite loss; retry with a smaller learning rate.
    #[error("training diverged: loss is {loss}")]
    Divergence { loss: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable short tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Integrity(_) => "integrity",
            Error::Parse { .. } => "parse",
            Error::Divergence { .. } => "divergence",
            Error::Empty(_) => "empty",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
