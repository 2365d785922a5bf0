use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence has no valid positions")]
    EmptySequence,

    #[error("degenerate vector (norm {norm:e} below 1e-12)")]
    DegenerateVector { norm: f64 },

    #[error("item {item} is outside the {domain} vocabulary of {size} items")]
    Vocabulary { domain: String, item: usize, size: usize },

    #[error("augmentation failed: {0}")]
    Augmentation(String),

    #[error(transparent)]
    Transport(#[from] crate::augment::TransportError),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by invalid user-supplied settings.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
