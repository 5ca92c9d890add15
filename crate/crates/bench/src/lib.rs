//! Experiment harness: config parsing, runs, and result tables.

pub mod compare;
pub mod config;
pub mod fmt;
pub mod grid;
pub mod run;

pub use compare::compare;
pub use config::{parse_config, ConfigError, ExperimentConfig, Method, Scale, Task};
pub use run::{data_root, run_config_file, run_experiment, RunError, RunOutcome};
