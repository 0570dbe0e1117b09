//! Process failure with a documented exit code.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4
//! numeric failure. Errors are tagged by the pipeline stage they came
//! from: anything raised while interpreting configuration is a config
//! error regardless of kind, anything raised while reading or writing
//! datasets and artifacts is a data error, and non-finite values or
//! broken internal state during compute are numeric failures.

use lgr_core::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_CONFIG, message: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_DATA, message: msg.into() }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_NUMERIC, message: msg.into() }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

/// Maps an error raised while loading or validating configuration.
pub fn config_err(e: Error) -> Failure {
    Failure::config(e.to_string())
}

/// Maps an error raised while reading or writing data files.
pub fn data_err(e: Error) -> Failure {
    Failure::data(e.to_string())
}

/// Maps an error raised mid-computation: numeric and state failures get
/// the numeric exit code, stray argument errors count as configuration,
/// and IO while writing artifacts counts as data.
pub fn run_err(e: Error) -> Failure {
    match e {
        Error::NonFinite(_) | Error::InvalidState(_) => Failure::numeric(e.to_string()),
        Error::InvalidArgument(_) => Failure::config(e.to_string()),
        Error::Parse { .. } | Error::Io(_) => Failure::data(e.to_string()),
    }
}
