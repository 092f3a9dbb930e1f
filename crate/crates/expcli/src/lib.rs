//! Experiment runner for the `precgd` solvers: TOML configs, single runs
//! from a shared starting point, parameter sweeps with log-log scaling fits,
//! diagnostics and SVG plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
