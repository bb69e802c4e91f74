use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("infeasible scenario shape: {0}")]
    InfeasibleShape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("checkpoint fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty rollout buffer")]
    EmptyBuffer,

    #[error("non-finite loss during update of agent {0}")]
    NonFiniteLoss(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("inconsistent variant: {0}")]
    InconsistentVariant(String),

    #[error("ambiguous lot state: {0}")]
    AmbiguousLot(String),
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
