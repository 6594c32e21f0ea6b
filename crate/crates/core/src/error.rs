use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed returns data at row {row}: {msg}")]
    MalformedRow { row: usize, msg: String },

    #[error("covariance not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("kappa must be positive, got {0}")]
    NonPositiveKappa(f64),

    #[error("epsilon {epsilon} below WVaR threshold {threshold}")]
    EpsilonBelowWvarThreshold { epsilon: f64, threshold: f64 },

    #[error("transaction cost phi[{index}] = {value} must be strictly positive")]
    NonPositivePhi { index: usize, value: f64 },

    #[error("enumeration budget exceeded: {count} supports (limit {limit})")]
    EnumerationBudget { count: u128, limit: u128 },

    #[error("iterate left the ball of radius {radius} used to choose t (norm {norm})")]
    CapRadiusExceeded { radius: f64, norm: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
