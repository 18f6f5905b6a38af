//! Command-line front end of the HHO generalized Navier-Stokes solver:
//! configuration, subcommands and output writers.

pub mod centerline;
pub mod commands;
pub mod config;
pub mod output;

use hho_core::solver::SolverError;
use hho_core::verify::VerifyError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid input: configuration, parameters or mesh.
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solve(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn from_verify(e: VerifyError) -> Self {
        match e {
            VerifyError::Solver(SolverError::InvalidDegree(_)) | VerifyError::Solver(SolverError::Config(_)) => {
                CliError::Config(e.to_string())
            }
            VerifyError::Solver(_) => CliError::Solve(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }

    /// 2 for invalid input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_INVALID_CONFIG,
            CliError::Solve(_) | CliError::Io(_) => EXIT_NOT_CONVERGED,
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;
