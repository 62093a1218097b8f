//! Experiment harness for iterative magnitude pruning of Hamiltonian neural
//! networks.
//!
//! The numerical work lives in [`imp_rg_core`]; this crate adds TOML
//! configs, multi-seed batches, CSV/JSON persistence and report emission.

use std::path::{Path, PathBuf};

pub mod config;
pub mod harness;
pub mod io;
pub mod report;

pub use config::ExperimentConfig;
pub use harness::{average_runs, run_experiment, run_transfer, RunArtifact};
pub use report::{emit_report, Summary};

/// Version tag written into every artifact; bump on any schema change.
pub const FORMAT_VERSION: &str = "imp-rg/1";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] imp_rg_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("averaging: {0}")]
    Average(String),
    #[error("all {0} runs failed")]
    NoCompletedRuns(usize),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, message: impl Into<String>) -> Self {
        HarnessError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}
