//! Command-line experiment runner: configuration, presets and run outputs.

pub mod config;
pub mod error;
pub mod run;

pub use config::{parse_config, ExperimentConfig, Overrides};
pub use error::CliError;
pub use run::{run, run_experiment, RunSummary};
