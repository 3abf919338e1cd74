//! Experiment runner for the flexbody model: configuration, file formats
//! and the scenarios behind the `flexbody` binary.

pub mod config;
pub mod error;
pub mod io;
pub mod scenarios;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use scenarios::{run, Inputs, RunSpec, Scenario, Summary};
