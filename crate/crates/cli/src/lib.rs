//! Batch experiment driver for `sdde-core`: a JSON config in, CSV artifacts
//! and a manifest out.

pub mod config;
pub mod error;
pub mod run;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use run::{execute, Command, Manifest, Overrides};
