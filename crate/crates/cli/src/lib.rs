//! Configuration-driven experiment runner around `podgrad`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod summary;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiment::run_experiment;
pub use summary::RunSummary;
