//! Command-line orchestration of the pre-processing workflow.

pub mod commands;
pub mod manifest;

pub use commands::{CliError, CliResult, RunReceipt};
pub use manifest::Manifest;
