use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("referential integrity: {0}")]
    Referential(String),

    #[error("{what} index {index} out of range (size {size})")]
    OutOfRange { what: &'static str, index: usize, size: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }

    /// Short machine-readable tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid-config",
            Error::InvalidArgument(_) | Error::OutOfRange { .. } => "invalid-argument",
            Error::Parse { .. } => "parse",
            Error::Referential(_) => "referential-integrity",
            Error::Dimension { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::Numerical(_) => "numerical",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::Format(_) => "format",
            Error::File { source, .. } | Error::Io(source) => {
                if source.kind() == std::io::ErrorKind::NotFound {
                    "missing-file"
                } else {
                    "io"
                }
            }
        }
    }
}
