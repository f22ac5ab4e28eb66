//! Experiment driver: TOML configs in, CSV traces and a JSON manifest out.

pub mod config;
pub mod runner;

pub use config::{parse_config, ConfigError, Experiment, ExperimentConfig, LEAF_KEYS};
pub use runner::{planned_files, run, FileEntry, Manifest, RunError, RunOptions, MANIFEST_FILE};
