//! Command-line front end and streaming session service.

pub mod args;
pub mod commands;
pub mod error;
pub mod protocol;
pub mod service;

pub use error::{CliError, CliResult};
