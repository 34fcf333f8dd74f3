//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A square matrix was required.
    NonSquare { rows: usize, cols: usize },
    /// Dimension mismatch; `context` names the offending block or argument.
    DimMismatch {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// NaN or infinity encountered at an API boundary.
    NonFinite { context: &'static str },
    /// A linear solve hit a (numerically) singular matrix.
    Singular { context: &'static str },
    /// A matrix that must be positive semi-definite has an eigenvalue below
    /// the tolerance; usually means an upstream hypothesis is violated.
    NotPsd { min_eig: f64 },
    /// The gain bound hypothesis `γ² > λ_max(D̄ᵀD̄)` fails.
    GainBound { gamma_sq: f64, lambda_max: f64 },
    /// Flow-block invertibility fails somewhere on `[0, h]`.
    AssumptionViolated { r: f64, rcond: f64 },
    /// A scalar argument is outside its admissible range.
    OutOfRange {
        context: &'static str,
        value: f64,
    },
    /// Channel or grid index out of range.
    IndexOutOfRange { index: usize, limit: usize },
    /// Subset enumeration refused: too many channels.
    TooManyChannels { n_u: usize, limit: usize },
    /// Internal cross-check between two independent formulas failed.
    ConsistencyCheck {
        context: &'static str,
        residual: f64,
        tolerance: f64,
    },
    /// Free-form invalid input (parameter validation).
    Invalid(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonSquare { rows, cols } => {
                write!(f, "expected a square matrix, got {rows}x{cols}")
            }
            Error::DimMismatch {
                context,
                expected,
                got,
            } => write!(
                f,
                "dimension mismatch in {context}: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::Singular { context } => write!(f, "singular matrix in {context}"),
            Error::NotPsd { min_eig } => write!(
                f,
                "matrix is not positive semi-definite (min eigenvalue {min_eig:e})"
            ),
            Error::GainBound {
                gamma_sq,
                lambda_max,
            } => write!(
                f,
                "gain bound violated: gamma^2 = {gamma_sq} <= lambda_max(D'D) = {lambda_max}"
            ),
            Error::AssumptionViolated { r, rcond } => write!(
                f,
                "flow block F11(r) near-singular at r = {r} (rcond {rcond:e})"
            ),
            Error::OutOfRange { context, value } => {
                write!(f, "{context} out of range: {value}")
            }
            Error::IndexOutOfRange { index, limit } => {
                write!(f, "index {index} out of range (limit {limit})")
            }
            Error::TooManyChannels { n_u, limit } => {
                write!(f, "subset enumeration needs n_u <= {limit}, got {n_u}")
            }
            Error::ConsistencyCheck {
                context,
                residual,
                tolerance,
            } => write!(
                f,
                "internal consistency check failed in {context}: residual {residual:e} > {tolerance:e}"
            ),
            Error::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}
