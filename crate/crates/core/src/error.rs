//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Design matrix is rank deficient beyond the working tolerance.
    #[error("design matrix is singular or nearly singular")]
    SingularDesign,

    /// Submodel columns are not a subset of the full-model columns.
    #[error("submodel is not nested in the full model")]
    NotNested,

    /// F test with zero numerator or non-positive denominator degrees of freedom.
    #[error("degenerate degrees of freedom: df1 = {df1}, df2 = {df2}")]
    DegenerateDf { df1: isize, df2: isize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A projected replicate had numerically zero norm.
    #[error("degenerate projection: a projected vector has near-zero norm")]
    DegenerateProjection,

    #[error("screener failed: {0}")]
    Screener(String),

    #[error("empty confidence set")]
    EmptySet,
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn insufficient(msg: impl Into<String>) -> Self {
        Error::InsufficientData(msg.into())
    }
}
