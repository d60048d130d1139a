//! Experiment configuration, orchestration, logs and the command line.

pub mod cli;
pub mod config;
pub mod log;
pub mod runner;

pub use config::{ExperimentConfig, MuConfig};
pub use log::{compute_metrics, export, load, MetricRow, Metrics, RunLog};
pub use runner::{run_experiment, train_and_evaluate, Simulation};
