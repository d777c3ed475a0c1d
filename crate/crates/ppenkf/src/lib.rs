//! Twin-experiment harness, result tables and command line for pilot point
//! ensemble Kalman filtering. The numerics live in `ppenkf-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod stats;
pub mod suite;

pub use config::{ExperimentConfig, ScenarioId, SuiteConfig};
pub use error::{AppError, Result};
pub use experiment::{run_reference_benchmark, run_synthetic_experiment, Cache, ExperimentReport, Setup};
