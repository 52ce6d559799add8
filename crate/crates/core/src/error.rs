use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model/training/CLI configuration, or incompatible shapes.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("uninitialized normalization statistics for layer {0}")]
    UninitializedStats(String),

    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("checkpoint format version mismatch: file has version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },

    #[error("{0}")]
    Undefined(String),

    #[error("{0}")]
    Empty(String),

    #[error("loss became non-finite at iteration {iteration} (lr {lr}, total {total}, final {final_term}, sides {sides:?})")]
    NonFiniteLoss {
        iteration: u64,
        lr: f64,
        total: f64,
        final_term: f64,
        sides: Vec<f64>,
    },

    #[error("I/O error on {path}: {source}")]
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

    pub(crate) fn parse(
        source_name: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
