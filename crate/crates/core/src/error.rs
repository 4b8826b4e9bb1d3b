use thiserror::Error;

/// Errors raised by the sampling engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad input from the caller (dimension mismatch, out-of-range config, unknown name).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid likelihood: model returned NaN at {0:?}")]
    InvalidLikelihood(Vec<f64>),

    /// The constrained sampler could not produce a point above the threshold.
    #[error("constrained sampler exhausted at threshold {threshold}: {reason}")]
    Exhausted { threshold: f64, reason: String },

    /// The region rejected too many consecutive proposals; a refit is required.
    #[error("region stale after {0} consecutive rejections")]
    RegionStale(usize),

    #[error("walk error: {0}")]
    Walk(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
