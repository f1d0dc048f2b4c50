use parametrix_core::Error;

/// Process exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GUARD: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("guard rail: {0}")]
    Guard(String),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Guard(_) => EXIT_GUARD,
            CliError::Verify(_) => EXIT_VERIFY,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Csv(_) => CliError::Io(msg),
            Error::NonDini { .. }
            | Error::HorizonExceeded { .. }
            | Error::ContractionWitness { .. }
            | Error::MassLeakage { .. }
            | Error::Coverage { .. }
            | Error::BoundaryMargin { .. }
            | Error::SolverDivergence { .. }
            | Error::DegenerateTimeGap { .. }
            | Error::ResolutionUnderflow { .. }
            | Error::GridCoverage(_) => CliError::Guard(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
