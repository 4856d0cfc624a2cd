use std::path::PathBuf;

use thiserror::Error;

/// Failures before the service starts listening.
#[derive(Debug, Error)]
pub enum StartupError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("dataset {dataset}: {message}")]
    Index { dataset: String, message: String },
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
}
