use std::fmt;

/// CLI-level errors, split by exit code: configuration problems exit with 1,
/// numerical failures with 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<biokf::Error> for CliError {
    fn from(e: biokf::Error) -> Self {
        use biokf::Error::*;
        match e {
            InvalidParameter(_) | Domain(_) | DimensionMismatch(_) => {
                CliError::Config(e.to_string())
            }
            IntegrationDiverged { .. }
            | SingularInnovation { .. }
            | RiccatiDiverged { .. }
            | FilterDiverged(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
