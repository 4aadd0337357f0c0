//! Experiment runner for the VMGP meta-learning library: configuration,
//! train/evaluate orchestration, CSV and JSONL artifacts, result tables and
//! a built-in oracle self-test.

pub mod config;
pub mod experiment;
pub mod report;
pub mod verify;

pub use config::{ExperimentConfig, ModelKind, Profile, SweepConfig};
pub use experiment::{run_experiment, ResultRow, RunOutput};
pub use report::{read_results, table_report};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Core(#[from] vmgp_core::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit code: 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| HarnessError::Io { context, source }
    }
}
