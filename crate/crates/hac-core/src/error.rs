//! One error type for the whole core crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands whose shapes cannot be combined.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A single shape an operation cannot accept (wrong rank, wrong extent,
    /// non-scalar loss root, value-count mismatch...).
    InvalidShape { op: &'static str, detail: String },
    /// A primitive produced NaN or ±Inf, or was handed non-finite input.
    NonFinite { op: &'static str },
    /// Out-of-domain input to a strict (unclamped) primitive or kernel.
    Domain { op: &'static str, detail: String },
    /// An operation that needs at least one element got none.
    EmptyInput { op: &'static str },
    /// Bad argument or inconsistent configuration; the message says which.
    Invalid { detail: String },
    /// Training produced a non-finite loss or gradient; carries the
    /// iteration index and a loss-component breakdown.
    Divergence { iteration: usize, detail: String },
}

impl Error {
    pub fn invalid(detail: impl Into<String>) -> Self {
        Error::Invalid {
            detail: detail.into(),
        }
    }

    /// True for failures of the numbers themselves (as opposed to failures
    /// of shapes, arguments, or configuration). The CLI maps these to a
    /// distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Domain { .. } | Error::Divergence { .. }
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::InvalidShape { op, detail } => write!(f, "{op}: {detail}"),
            Error::NonFinite { op } => write!(f, "{op}: non-finite value"),
            Error::Domain { op, detail } => write!(f, "{op}: domain violation: {detail}"),
            Error::EmptyInput { op } => write!(f, "{op}: empty input"),
            Error::Invalid { detail } => write!(f, "invalid argument: {detail}"),
            Error::Divergence { iteration, detail } => {
                write!(f, "training diverged at iteration {iteration}: {detail}")
            }
        }
    }
}

impl core::error::Error for Error {}
