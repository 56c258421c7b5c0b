use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("partition mismatch: left has sizes {left:?}, right has sizes {right:?}")]
    PartitionMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(
        "matrix does not follow the uniform-block pattern: entry ({row},{col}) deviates by {deviation:.3e} (tol {tol:.3e})"
    )]
    StructureViolation { row: usize, col: usize, deviation: f64, tol: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error(
        "covariance admits no autoregressive representation: diagonal inconsistency {deviation:.3e} at block {block} exceeds {tol:.3e}"
    )]
    NotMaudRepresentable { block: usize, deviation: f64, tol: f64 },

    #[error("parameter index {index} out of range (expected < {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error(
        "scoring did not converge: best score norm {score_norm:.3e} after {iterations} iterations (tol {tol:.3e})"
    )]
    NotConverged { score_norm: f64, iterations: usize, tol: f64, best: Vec<f64> },

    #[error("inadmissible starting point: {0}")]
    InadmissibleStart(String),

    #[error("inadmissible dependence parameters: {0}")]
    InadmissibleGamma(String),

    #[error("p-value {value} at position {index} outside [0, 1]")]
    InvalidPValue { index: usize, value: f64 },

    #[error("contrast matrix is rank deficient: rank {rank} < {rows} rows")]
    RankDeficientContrast { rank: usize, rows: usize },

    #[error("contrast covariance is singular")]
    SingularContrastCovariance,

    #[error("perturbed covariance not positive definite after {retries} retries")]
    PerturbationNotPD { retries: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
