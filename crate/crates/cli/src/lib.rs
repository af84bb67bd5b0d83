//! Configuration, orchestration and file output for the `facetflow` binary.

pub mod config;
pub mod error;
pub mod output;
pub mod plot;
pub mod run;

pub use config::{parse_config, render, SimConfig, SolverChoice};
pub use error::CliError;
