//! Experiment harness: configuration, sweeps, persistence, and the CLI.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod golden;
pub mod selftest;

pub use cli::cli;
pub use config::{parse_config, ConfigError, ExperimentConfig, ProblemKind, Report, TopologyKind};
pub use experiment::{run_experiment, ExperimentSummary, HarnessError, RunSummary, SlopeRow};
