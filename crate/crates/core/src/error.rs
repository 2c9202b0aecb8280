use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum VcqrError {
    #[error("invalid knots: {0}")]
    InvalidKnots(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("point {t} lies outside the domain [{lo}, {hi}]")]
    OutsideDomain { t: f64, lo: f64, hi: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("singular or collinear system: {0}")]
    Singular(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, VcqrError>;

impl VcqrError {
    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            VcqrError::InvalidKnots(_)
                | VcqrError::InvalidArgument(_)
                | VcqrError::DimensionMismatch(_)
                | VcqrError::OutsideDomain { .. }
                | VcqrError::NonFinite(_)
        )
    }
}
