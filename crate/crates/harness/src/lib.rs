//! Experiment orchestration for the plasticity engine: declarative configs,
//! seeded replicated runs, hyperparameter sweeps, binned metrics with standard
//! errors, and CSV/JSON export.

pub mod config;
pub mod error;
pub mod export;
pub mod metrics;
pub mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
