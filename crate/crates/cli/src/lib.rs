//! Command-line front end for `csf-core`: data ingestion, fitting, saved
//! models, inference reports, plot data and a trial simulator.

pub mod commands;
pub mod error;
pub mod fetch;
pub mod output;
pub mod simulate;
pub mod svg;

pub use commands::{run, Cli};
pub use error::{exit, CliError};
