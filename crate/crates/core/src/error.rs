use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A logging policy assigned zero probability to some action.
    #[error("support violation: action {action} has probability {probability}")]
    Support { action: usize, probability: f64 },

    /// Logged data that breaks an estimator precondition (e.g. a propensity outside (0, 1)).
    #[error("invalid logged data: {0}")]
    Data(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("cannot fit {variant}: {reason}")]
    Fit { variant: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. } => 2,
            Error::Format { .. } | Error::Data(_) => 3,
            _ => 1,
        }
    }
}
