//! Experiment driver: configuration loading, data generation, training runs and reports.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{ExperimentConfig, Overrides};
pub use error::CliError;
