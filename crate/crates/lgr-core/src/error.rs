//! Error type shared across the crate.

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by geometry, rendering, the layer stack, and data IO.
#[derive(Debug)]
pub enum Error {
    /// A caller-supplied value is out of range or inconsistent.
    InvalidArgument(String),
    /// An operation was called in a state that does not support it, e.g.
    /// backward before forward or a mismatched forward cache.
    InvalidState(String),
    /// A text format failed to parse. `line` is 1-based; 0 means the
    /// location is not line-oriented (header, binary layout).
    Parse { line: usize, msg: String },
    /// A NaN or infinity appeared where a finite value is required.
    NonFinite(String),
    /// Underlying IO failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvalidState(msg) => write!(f, "invalid state: {msg}"),
            Error::Parse { line: 0, msg } => write!(f, "parse error: {msg}"),
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

/// Shorthand for `Error::InvalidArgument` with formatted text.
#[macro_export]
macro_rules! invalid_arg {
    ($($t:tt)*) => {
        $crate::Error::InvalidArgument(format!($($t)*))
    };
}

/// Shorthand for `Error::InvalidState` with formatted text.
#[macro_export]
macro_rules! invalid_state {
    ($($t:tt)*) => {
        $crate::Error::InvalidState(format!($($t)*))
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_includes_context() {
        let e = Error::Parse { line: 12, msg: "bad float".into() };
        assert_eq!(e.to_string(), "parse error at line 12: bad float");
        let e = Error::Parse { line: 0, msg: "truncated header".into() };
        assert_eq!(e.to_string(), "parse error: truncated header");
        let e = invalid_arg!("k = {} exceeds point count {}", 9, 4);
        assert!(e.to_string().contains("k = 9"));
    }
}
