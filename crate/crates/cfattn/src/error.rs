use std::io;
use std::path::PathBuf;

use cfattn_core::{AnalysisError, CorpusError, ModelError};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const FORMAT: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("checkpoint {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("checkpoint {path} has format version {found}, this build reads version {expected}")]
    Version {
        path: PathBuf,
        found: u16,
        expected: u16,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => exit::FAILURE,
            Error::Config { .. } | Error::Usage(_) => exit::USAGE,
            Error::Format { .. } | Error::Version { .. } => exit::FORMAT,
            Error::Model(ModelError::NonFiniteLoss { .. })
            | Error::Model(ModelError::Tensor(cfattn_core::TensorError::NonFinite { .. })) => {
                exit::NUMERIC
            }
            Error::Analysis(AnalysisError::StaleTrace { .. }) => exit::FORMAT,
            Error::Model(ModelError::Config(_)) | Error::Corpus(_) => exit::USAGE,
            Error::Model(_) | Error::Analysis(_) => exit::FAILURE,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
