//! Error taxonomy shared across the crate.
//!
//! Three families matter to callers: input problems (`Parse`, `Validation`,
//! `Config`), numeric failures inside the samplers or integrators (`Numeric`),
//! and plain I/O. The CLI maps the first family to exit code 1 and `Numeric`
//! to exit code 2, so constructors attach enough context (row, field, the
//! offending state) for the message alone to be actionable.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input that never became a record (bad CSV shape, bad JSON line).
    #[error("parse error at {location}: {msg}")]
    Parse { location: String, msg: String },

    /// A record parsed but violates a documented domain constraint.
    #[error("validation error{}: {msg}", fmt_row(.row))]
    Validation { row: Option<usize>, msg: String },

    /// Bad configuration key, value, or combination.
    #[error("config error: {msg}")]
    Config { msg: String },

    /// A sampler or integrator reached a numerically invalid state.
    #[error("numeric failure in {context}: {msg}")]
    Numeric { context: String, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn fmt_row(row: &Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation { row: None, msg: msg.into() }
    }

    pub fn validation_at(row: usize, msg: impl Into<String>) -> Self {
        Error::Validation { row: Some(row), msg: msg.into() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config { msg: msg.into() }
    }

    pub fn numeric(context: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Numeric { context: context.into(), msg: msg.into() }
    }

    pub fn parse(location: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse { location: location.into(), msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
