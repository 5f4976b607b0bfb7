use thiserror::Error;

/// Errors raised anywhere in the model, training, and experiment pipeline.
#[derive(Debug, Error)]
pub enum NsgpError {
    #[error("matrix is not symmetric (max relative asymmetry {asymmetry:.3e})")]
    NonSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite (jitter cap {cap:.3e} reached)")]
    NotPositiveDefinite { cap: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parameter `{name}` must be strictly positive and finite, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("requested {requested} inducing points but only {available} data points exist")]
    MTooLarge { requested: usize, available: usize },

    #[error("optimization diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("negative predictive variance {value:.3e} at query {index}")]
    NegativeVariance { index: usize, value: f64 },

    #[error("non-positive predictive variance {value:.3e} at index {index}")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("column `{0}` has zero variance")]
    DegenerateColumn(String),

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("acquisition pool is empty")]
    EmptyPool,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NsgpError>;
