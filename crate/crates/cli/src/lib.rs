//! Scenario files, subcommands and the verification suite behind the `massopt` binary.

pub mod commands;
pub mod config;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("verification failed: {0}")]
    VerifyFailed(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(#[from] massopt::Error),
    #[error("output error: {0}")]
    Output(#[from] std::io::Error),
    #[error("optimizer did not converge: {0}")]
    NotConverged(String),
    #[error("enhancement inequality does not hold: inf-side estimate {inf} < max-side value {max}")]
    VerdictFalse { inf: f64, max: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerifyFailed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Output(_) => 3,
            CliError::NotConverged(_) => 4,
            CliError::VerdictFalse { .. } => 5,
        }
    }
}
