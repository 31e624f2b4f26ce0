use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(
        "matrix is not positive semi-definite (min eigenvalue {min_eig:e}, tolerance {tol:e})"
    )]
    NotPsd { min_eig: f64, tol: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate denominator |1 + w'(C - zI)^-1 w| = {0:e}")]
    DegenerateDenominator(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("law has infinite fourth moment: {0}")]
    InfiniteFourthMoment(String),
    #[error("invalid ladder: {0}")]
    InvalidLadder(String),
    #[error("invalid test matrix: {0}")]
    InvalidTestMatrix(String),
    #[error("invalid lemma instance: {0}")]
    InvalidInstance(String),
    #[error("spec validation failed at `{field}`: {message}")]
    SpecValidation { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
