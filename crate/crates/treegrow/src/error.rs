//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Malformed structural input (word sets, label maps, configs).
    #[error("structure: {0}")]
    Structure(String),

    /// Text that does not parse as the documented encoding.
    #[error("parse: {0}")]
    Parse(String),

    /// Index or argument out of range.
    #[error("range: {0}")]
    Range(String),

    /// Backward step attempted below the one-leaf floor.
    #[error("floor: cannot step backward from a one-leaf tree")]
    Floor,

    /// Lazy words failed to separate within the prefix budget.
    #[error("separation budget: words indistinguishable within {0} symbols")]
    Budget(usize),

    /// Validation report with at least one violation.
    #[error("validation: {0}")]
    Validation(String),

    /// Exact computation requested beyond its size cap.
    #[error("size cap: {0}")]
    SizeCap(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
