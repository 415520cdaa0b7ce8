use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("step size underflow at t = {t} fs (h = {h:e} fs)")]
    StepUnderflow { t: f64, h: f64 },
    #[error("quadrature did not converge (estimated error {estimate:e})")]
    Quadrature { estimate: f64 },
    #[error("dense size guard exceeded: {size} > {guard}")]
    Guard { size: usize, guard: usize },
    #[error("rank {rank} exceeds capacity {capacity} on bond {bond}")]
    Rank { bond: usize, rank: usize, capacity: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
