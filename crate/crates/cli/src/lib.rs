//! File formats, configuration and subcommands for the `stiefel-lora`
//! experiment driver. The numerical work lives in `stiefel-lora-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod matrix_io;
pub mod metrics_csv;

pub use error::CliError;
