use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A sum over an infinite edge star was requested but no analytic tail
    /// bound is available for the enumeration rule.
    #[error("unbounded/unknown: no tail bound available for the infinite star at {0}")]
    UnknownTail(String),

    #[error("matrix is not Hermitian within tolerance: deviation {deviation:e} > {tolerance:e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("invalid quotient spec: {0}")]
    InvalidQuotient(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("finite section too large: N = {n} (max {max}); reduce the box radius L")]
    SectionTooLarge { n: usize, max: usize },

    #[error("propagation refused: t*|H| requires Chebyshev degree {required} > configured max {max}")]
    DegreeExceeded { required: usize, max: usize },

    #[error("wave probe invalid: boundary mass {mass:e} exceeds {limit:e} at box L = {l}")]
    BoundaryContaminated { mass: f64, limit: f64, l: i64 },

    /// A computed quantity violated a caller-imposed certification bound.
    #[error("numerical refusal: {0}")]
    Refused(String),
}

pub type Result<T> = std::result::Result<T, Error>;
