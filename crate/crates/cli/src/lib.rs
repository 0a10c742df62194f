//! Command implementations behind the `kdshape` binary.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

pub use config::PipelineConfig;
pub use error::CliError;
