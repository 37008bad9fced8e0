//! Experiment orchestration: configuration, the case matrix, open-loop
//! validation scenarios and result files.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use acfleet_core::channel::ChannelError;
use acfleet_core::fleet::FleetError;
use acfleet_core::grid::GridError;
use acfleet_core::metrics::MetricsError;
use acfleet_core::signal::SignalError;
use thiserror::Error;

pub mod config;
pub mod experiment;
pub mod matrix;
pub mod presets;
pub mod validation;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, ExperimentResult};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
