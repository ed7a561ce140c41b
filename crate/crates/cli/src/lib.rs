//! Orchestration of forecasting runs: configuration, run-directory
//! artifacts, pipeline stages and the run manifest.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod stages;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use stages::{run_pipeline, Context, Manifest};
