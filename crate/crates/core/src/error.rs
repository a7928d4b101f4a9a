//! Crate-wide error type.

use core::fmt;

/// Errors surfaced by the planning stack.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument was outside the mathematical domain of the operation.
    Domain(&'static str),
    /// The query point lies inside or on the keep-out ellipse, so no exterior
    /// closest point exists.
    InsideEllipse,
    /// Two points that must be distinct coincide (within tolerance).
    CoincidentPoints,
    /// Matrix or vector dimensions do not agree.
    Dimension(String),
    /// A linear system was singular to working precision.
    Singular,
    /// A plan was requested from a solver run that did not produce one.
    PlanUnavailable(&'static str),
    /// A configuration or scenario failed validation.
    Invalid(String),
    /// A metric or trace operation was asked to work on an empty trace.
    EmptyTrace,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(what) => write!(f, "domain error: {what}"),
            Error::InsideEllipse => write!(f, "query point is inside the ellipse"),
            Error::CoincidentPoints => write!(f, "points coincide"),
            Error::Dimension(what) => write!(f, "dimension mismatch: {what}"),
            Error::Singular => write!(f, "singular linear system"),
            Error::PlanUnavailable(status) => {
                write!(f, "no plan available: solver status {status}")
            }
            Error::Invalid(what) => write!(f, "invalid configuration: {what}"),
            Error::EmptyTrace => write!(f, "trace contains no rows"),
        }
    }
}

impl std::error::Error for Error {}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
