use geonca::NcaError;
use thiserror::Error;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_ENV: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or output location.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or inconsistent dataset or checkpoint.
    #[error("{0}")]
    Data(String),
    /// The environment refused something, such as a busy port.
    #[error("{0}")]
    Env(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Env(_) => EXIT_ENV,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Contract violations are bad parameters; everything else came from files on disk.
impl From<NcaError> for CliError {
    fn from(e: NcaError) -> Self {
        match e {
            NcaError::Contract(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
