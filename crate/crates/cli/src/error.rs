use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Failure of a CLI run, grouped by where it went wrong.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or config values; nothing was computed.
    #[error("{0}")]
    Config(String),
    /// A file could not be read or written.
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    /// An input file exists but its contents are unusable.
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    /// A library module rejected the work.
    #[error("{message}")]
    Module {
        module: &'static str,
        message: String,
    },
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::Input { .. } => "input",
            Self::Module { module, .. } => module,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Module { .. } => 1,
            Self::Config(_) => 2,
            Self::Io { .. } | Self::Input { .. } => 3,
        }
    }

    pub(crate) fn module(module: &'static str, e: impl std::fmt::Display) -> Self {
        Self::Module {
            module,
            message: e.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
