use std::path::{Path, PathBuf};

use mdgan_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("unsupported checkpoint version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 for validation failures, 3 for I/O and integrity failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Tensor(TensorError::Format(_) | TensorError::Io(_))
            | Error::Integrity(_)
            | Error::UnsupportedVersion { .. }
            | Error::Io { .. } => 3,
            _ => 2,
        }
    }
}
