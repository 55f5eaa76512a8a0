//! Configuration, run directories, metrics logs and the command line.

mod cli;
mod config;
mod metrics;
mod run;

pub use cli::{execute, run_command, Cli, Command};
pub use config::{load_config, parse_config, DataConfig, ExperimentConfig, FdConfig, FeatureSource};
pub use metrics::*;
pub use run::*;
