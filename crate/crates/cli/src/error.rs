use std::fmt;

use subsetgrad::Error;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_FLAG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_TOO_LARGE: i32 = 5;

/// A failure together with the process exit code it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    /// Invalid value for `--{flag}`.
    pub fn flag(flag: &str, msg: impl fmt::Display) -> Self {
        Self { code: EXIT_FLAG, message: format!("--{flag}: {msg}") }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self { code: EXIT_DATA, message: msg.to_string() }
    }

    pub fn output(path: &std::path::Path, msg: impl fmt::Display) -> Self {
        Self { code: EXIT_OTHER, message: format!("cannot write {}: {msg}", path.display()) }
    }

    /// Like `From<Error>`, but configuration errors name `flag`.
    pub fn with_flag(e: Error, flag: &str) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::EmptyRegion { .. } => Self::flag(flag, e),
            other => other.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) | Error::EmptyRegion { .. } => EXIT_FLAG,
            Error::DimensionMismatch { .. }
            | Error::NonFiniteData(_)
            | Error::InsufficientData(_)
            | Error::Parse { .. }
            | Error::MissingTarget(_)
            | Error::Io(_)
            | Error::ZeroNoise
            | Error::ZeroSignal => EXIT_DATA,
            Error::Diverged { .. } => EXIT_DIVERGED,
            Error::TooLarge { .. } => EXIT_TOO_LARGE,
            Error::NumericalFailure(_) | Error::EmptyList => EXIT_OTHER,
        };
        Self { code, message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
