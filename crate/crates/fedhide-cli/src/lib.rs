//! Library surface of the experiment runner, kept separate from the binary
//! so integration tests can drive runs, sweeps, and reports in-process.

pub mod config;
pub mod grid;
pub mod report;
pub mod runner;

use thiserror::Error;

/// Configuration problems exit with status 2, runtime failures with 1; both
/// print a single diagnostic line.
#[derive(Error, Debug)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}
