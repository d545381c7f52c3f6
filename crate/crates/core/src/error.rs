use thiserror::Error;

use crate::dual::DualError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error("forward model failed at theta={theta:?}, design={design:?}: {reason}")]
    Forward {
        theta: Vec<f64>,
        design: Vec<f64>,
        reason: String,
    },
    #[error("invalid design: {0}")]
    Design(String),
    #[error("sampler: {0}")]
    Sampler(String),
    #[error("estimator: {0}")]
    Estimator(String),
    #[error("optimizer: {0}")]
    Optim(String),
    #[error("config: {0}")]
    Config(String),
    #[error("input data: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
