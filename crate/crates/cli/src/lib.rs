//! Experiment drivers behind the `exset` command-line tool.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind, Method};
