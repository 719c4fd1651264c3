use std::fmt;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The signal has no usable variation (e.g. constant amplitude).
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    /// The likelihood surface is at the floor density everywhere.
    #[error("degenerate likelihood: {0}")]
    DegenerateLikelihood(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: Location, message: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where in an input a parse error happened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Record(usize),
    Header,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Record(n) => write!(f, "record {n}"),
            Location::Header => write!(f, "header"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn parse_err(location: Location, msg: impl Into<String>) -> Error {
    Error::Parse {
        location,
        message: msg.into(),
    }
}
