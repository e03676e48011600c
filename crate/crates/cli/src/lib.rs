//! Batch workflows: generate data, train models, run attack sweeps and
//! ablations, and render result tables.

pub mod config;
pub mod data;
pub mod error;
pub mod report;
pub mod sweep;
pub mod train;
pub mod workflow;

pub use config::ExperimentConfig;
pub use error::CliError;
