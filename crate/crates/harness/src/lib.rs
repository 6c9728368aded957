//! Experiment harness: configs, evaluation, sweeps, scaling runs, CSV and SVG output.

pub mod commands;
pub mod config;
pub mod csv_out;
pub mod error;
pub mod eval;
pub mod plot;
pub mod scaling;

pub use config::{ExperimentConfig, Method, Sweep};
pub use error::{HarnessError, Result};
pub use eval::ResultRow;
