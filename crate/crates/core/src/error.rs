use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum GpError {
    #[error("cannot fit a surrogate to an empty dataset")]
    EmptyDataset,
    #[error("inputs ({inputs}) and targets ({targets}) differ in length")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("non-finite value in surrogate training data at row {row}")]
    NonFiniteData { row: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("ill-conditioned kernel: factorization failed for {n} points with length scales {length_scales:?} after jitter up to {max_jitter:e}")]
    IllConditioned { n: usize, length_scales: Vec<f64>, max_jitter: f64 },
}

/// An evaluator could not produce a usable `(j, g)` pair.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{0}")]
pub struct EvaluationFailure(pub String);

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("invalid tuning configuration: {0}")]
    Config(String),
    #[error("evaluation {index} failed twice in a row at theta={theta:?}, s={context}: {message}")]
    EvaluationAborted { index: usize, theta: Vec<f64>, context: f64, message: String },
    #[error(transparent)]
    Surrogate(#[from] GpError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("checkpoint does not match configuration: {0}")]
    Resume(String),
}
