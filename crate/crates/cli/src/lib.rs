//! Experiment runner for the `metalearn` library.
//!
//! Each study is a subcommand taking a flat key=value config file plus an
//! output directory, and writes a resolved-config echo, CSV data files, and
//! a JSON summary. Runs are deterministic functions of (config, seed),
//! independent of worker-thread count.

use std::path::PathBuf;

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod output;
pub mod runs;
pub mod svg;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 1,
            CliError::Divergence(_) => 3,
            CliError::CheckFailed(_) => 4,
        }
    }
}

impl From<metalearn::Error> for CliError {
    fn from(e: metalearn::Error) -> Self {
        use metalearn::Error as E;
        match e {
            E::Divergence { .. } | E::NonFinite { .. } | E::OracleFailure(_) => {
                CliError::Divergence(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

/// Arguments shared by every subcommand.
#[derive(Debug, Clone)]
pub struct RunArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub paper_scale: bool,
    pub svg: bool,
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub out_dir: PathBuf,
}
