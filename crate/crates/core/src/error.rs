use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max |M - M^dag| = {residual:e})")]
    NotHermitian { residual: f64 },

    #[error("matrix is not unitary (max |U^dag U - I| = {residual:e})")]
    NotUnitary { residual: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("operator outside its admissible range: {0}")]
    InadmissibleOperator(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    #[error("negative radicand {value:e} ({context})")]
    NegativeRadicand { value: f64, context: &'static str },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
