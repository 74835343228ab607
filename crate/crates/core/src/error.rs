use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the engine can report.
///
/// The variants group into the stable process exit codes used by the CLI:
/// configuration problems exit with 2, bad or corrupt data with 3 and
/// incompatible artifacts with 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("window out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("pose out of range: {0}")]
    PoseOutOfRange(String),

    #[error("invalid scene `{scene}`: {reason}")]
    Scene { scene: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corrupt or invalid data: {0}")]
    Data(String),

    #[error("incompatible artifacts: {0}")]
    Compat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Scene { .. } | Error::PoseOutOfRange(_) => 2,
            Error::Data(_) | Error::Io { .. } | Error::Range(_) | Error::Shape(_) => 3,
            Error::Compat(_) => 4,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
