use std::fmt;

use handsar_io::IoError;
use handsar_nn::NnError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numerical(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<handsar_core::Error> for CliError {
    fn from(e: handsar_core::Error) -> Self {
        match e {
            handsar_core::Error::NonFinite(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            NnError::Core(c) => c.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Invalid(_) => CliError::Config(e.to_string()),
            IoError::Core(c) => c.into(),
            IoError::Nn(n) => n.into(),
            _ => CliError::Io(e.to_string()),
        }
    }
}
