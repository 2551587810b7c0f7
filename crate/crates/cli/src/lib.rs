//! Driver for the verification suites: configuration, check plans, the
//! runner and report writers. The `ineqlab` binary is a thin wrapper.

pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod suites;

pub use config::Config;
pub use error::CliError;
pub use run::{describe, run, RunOptions, RunSummary};
