//! Command-line front end and experiment runner for `shapsel`.
//!
//! An experiment is a single JSON config. [`experiment::run_experiment`]
//! executes it in memory and [`report::emit_report`] writes the JSON report
//! and its CSV projections.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod report;
pub mod verify;

pub use error::{CliError, CliResult, Stage};
