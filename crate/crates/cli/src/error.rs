use homlab::io::IoError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("{0}")]
    Core(#[from] homlab::Error),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("{path}: summary schema version {found} is not supported (expected {expected})")]
    SummarySchema { path: String, found: u64, expected: u32 },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn file(path: &std::path::Path, message: impl ToString) -> Self {
        CliError::File { path: path.display().to_string(), message: message.to_string() }
    }

    /// 2 for anything the user can fix in the inputs, 3 for numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Solver(_) | CliError::Core(homlab::Error::SolverFailure { .. }) | CliError::Core(homlab::Error::NumericalDegeneracy(_)) => 3,
            _ => 2,
        }
    }
}
