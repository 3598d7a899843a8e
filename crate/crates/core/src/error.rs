use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not fit the operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A value outside an operation's mathematical domain (e.g. `log` of a
    /// non-positive number, or a non-finite forward result).
    #[error("domain error: {0}")]
    Domain(String),

    /// API misuse, such as calling backward on a non-scalar root.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data, carrying the row/column location when known.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite loss during optimization.
    #[error("training error at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    /// A fairness or ranking metric is undefined on the supplied rows.
    #[error("metric error: {0}")]
    Metric(String),

    /// Malformed model file.
    #[error("model file error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line surface:
    /// 2 config/usage, 3 data, 4 training/metric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Io { .. } => 2,
            Error::Data(_) | Error::Format(_) => 3,
            Error::Training { .. } | Error::Metric(_) | Error::Dimension(_) | Error::Domain(_) => 4,
        }
    }
}
