use thiserror::Error;

/// Failures mapped to process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("tolerance check failed: {0}")]
    Tolerance(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Tolerance(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<qam_core::Error> for CliError {
    fn from(e: qam_core::Error) -> Self {
        match e {
            qam_core::Error::InvalidArgument(_) | qam_core::Error::DimensionMismatch { .. } | qam_core::Error::WindowInvalid { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
