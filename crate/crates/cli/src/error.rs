use std::fmt;
use std::process::ExitCode;

use fgseg::ErrorClass;

/// A failed command together with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { class: ErrorClass::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { class: ErrorClass::Data, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { class: ErrorClass::Numeric, message: message.into() }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self.class {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<fgseg::Error> for CliError {
    fn from(e: fgseg::Error) -> Self {
        Self { class: e.class(), message: e.to_string() }
    }
}

/// I/O failure on `path`, classed as a data error.
pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}
