use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown behavior label `{0}`")]
    UnknownBehavior(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("gradient check failed for {0}")]
    GradientMismatch(String),

    #[error("user {0} has interacted with every item; no negative available")]
    NoNegatives(usize),

    #[error("no evaluable users")]
    NoEvaluableUsers,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
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

    /// Stable, machine-parsable category used by the command-line driver.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::UnknownBehavior(_) | Error::EmptyInput(_) => "data",
            Error::InvalidArgument(_) | Error::Shape(_) => "argument",
            Error::Config(_) => "config",
            Error::NonFinite(_) | Error::GradientMismatch(_) => "numeric",
            Error::NoNegatives(_) | Error::NoEvaluableUsers => "data",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
        }
    }
}
