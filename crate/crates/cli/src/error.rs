use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures of a command, each mapped to a fixed exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 2,
            CliError::Format(_) => 3,
            CliError::Config(_) => 4,
            CliError::Check(_) => 5,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, msg: impl std::fmt::Display) -> Self {
        CliError::Format(format!("{}: {msg}", path.display()))
    }
}

/// Core errors surfacing from a forward pass mean the files do not fit together.
impl From<hednet_core::Error> for CliError {
    fn from(e: hednet_core::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
