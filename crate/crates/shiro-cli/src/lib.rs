//! Training harness: run configuration, the training loop, metrics and
//! checkpoint I/O, evaluation, and plot-data export. The `shiro` binary is a
//! thin command-line front end over this library.

pub mod checkpoint;
pub mod config;
pub mod export;
pub mod metrics;
pub mod trainer;

use thiserror::Error;

/// Harness-level failures, mapped to process exit codes by the binary:
/// configuration errors exit 2, numerical aborts exit 3.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical abort at step {step}: {detail}")]
    Numerical { step: u64, detail: String },
    #[error("{0}")]
    Other(String),
}

pub use checkpoint::{load_checkpoint, save_checkpoint, Agents, Checkpoint};
pub use config::{RunConfig, TemperatureMode, Variant};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter};
pub use trainer::{derive_seed, evaluate, train_run, RunArtifacts, Trainer};
