//! Batch experiment runner for the QoS predictors in `qosdiff-core`:
//! configuration parsing, per-cell execution, CSV reports, figures and
//! consolidated tables.

pub mod config;
pub mod error;
pub mod output;
pub mod plot;
pub mod report;
pub mod runner;
pub mod seeds;

pub use config::{DatasetSpec, ExperimentConfig, ModelKind};
pub use error::{CliError, Result};
pub use runner::{run, run_variants, sweep, RunManifest, RunSummary, SweepAxis, Variant};
