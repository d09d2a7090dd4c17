use car_late_core::Error;

/// Failure of a command, split by the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input: unreadable file, malformed row, invalid flag value.
    #[error("{0}")]
    Validation(String),
    /// The data were well formed but an estimator is undefined on them.
    #[error("{0}")]
    Estimation(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Estimation(_) => 3,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::EmptyArm(_)
            | Error::WeakFirstStage(_)
            | Error::NoCompliers
            | Error::SingularDenominator
            | Error::DegenerateComplier(_)
            | Error::NonpositiveVariance(_)
            | Error::ZeroVariance(_) => CliError::Estimation(msg),
            _ => CliError::Validation(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}
