use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrlError {
    #[error("aggregation over an empty set of updates")]
    EmptyUpdates,

    #[error("trimmed mean needs n > 2c, got n = {n}, c = {c}")]
    TrimTooLarge { n: usize, c: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<FrlError>,
    },

    #[error("group {group}: {source}")]
    Group {
        group: usize,
        #[source]
        source: Box<FrlError>,
    },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FrlError>;
