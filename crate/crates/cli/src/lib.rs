//! Config-driven front end for `varoc`.
//!
//! Each subcommand reads a TOML [`config::RunConfig`], runs, and writes its
//! artifacts into the configured output directory. Failures map to process
//! exit codes through [`CliError::exit_code`].

pub mod config;
pub mod output;
pub mod run;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("derivative check failed: {0}")]
    CheckFailed(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Parse(_) | CliError::Config(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            message: e.to_string(),
        }
    }
}

impl From<varoc::ModelError> for CliError {
    fn from(e: varoc::ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}
