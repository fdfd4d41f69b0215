use std::process::ExitCode;

use rebal_core::asymptotics::AsymptoticError;
use rebal_core::compare::CompareError;
use rebal_core::market::ParamError;
use rebal_core::par::ThreadConfigError;
use rebal_core::simulator::SimError;
use rebal_core::solver::SolveError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{message}\n\n{usage}")]
    Usage { message: String, usage: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Threads(#[from] ThreadConfigError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Asymptotic(#[from] AsymptoticError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
}

impl From<CompareError> for CliError {
    fn from(e: CompareError) -> Self {
        match e {
            CompareError::Solve(e) => e.into(),
            CompareError::Asymptotic(e) => e.into(),
            CompareError::TooFewPoints => CliError::Invalid(e.to_string()),
        }
    }
}

impl CliError {
    /// 1 usage or validation, 2 no matching rate, 3 numerical failure.
    pub fn exit_code(&self) -> ExitCode {
        let code = match self {
            CliError::Solve(SolveError::NoMatch { .. }) => 2,
            CliError::Solve(e) if e.is_numerical() => 3,
            CliError::Asymptotic(AsymptoticError::NoRoot { .. } | AsymptoticError::Evaluation { .. }) => 3,
            CliError::Simulation(SimError::PolicyNotFinite { .. } | SimError::Degenerate(_)) => 3,
            _ => 1,
        };
        ExitCode::from(code)
    }
}
