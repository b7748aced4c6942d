//! Experiment runner for `bitvi`: declarative JSON configs in, CSV/JSON
//! artifacts out.

pub mod config;
pub mod error;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use run::{run, RunMetrics};
