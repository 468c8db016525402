use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CnrError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid coordinate (lon {lon}, lat {lat}) for great-circle metric")]
    InvalidCoordinate { lon: f64, lat: f64 },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix of dimension {dim} is not positive definite after maximum jitter")]
    NotPositiveDefinite { dim: usize },

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("Bessel K overflow at nu = {nu}, x = {x}")]
    BesselOverflow { nu: f64, x: f64 },

    #[error("Bessel K underflow at nu = {nu}, x = {x}")]
    BesselUnderflow { nu: f64, x: f64 },

    #[error("optimizer failure: {0}")]
    OptimizerFailure(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("rank-deficient design; offending columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("duplicate spline knots for covariate {covariate}")]
    DuplicateKnots { covariate: usize },

    #[error("duplicate location at index {0}")]
    DuplicateLocation(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("bootstrap replicate {index} failed: {reason}")]
    ReplicateFailure { index: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, CnrError>;
