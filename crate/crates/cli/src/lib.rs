//! Experiment runner: configs, result bundles and reports.

pub mod bundle;
pub mod config;
pub mod error;
pub mod experiments;
pub mod report;
pub mod summary;

pub use bundle::{run, ResultBundle};
pub use config::{resolve_settings, ExperimentConfig, RunSettings};
pub use error::{CliError, CliResult};
