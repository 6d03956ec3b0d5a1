use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-positive denominator {value} at index {index}")]
    NonPositiveDenominator { index: usize, value: f64 },

    #[error("negative argument {value} to sqrt at index {index}")]
    NegativeSqrt { index: usize, value: f64 },

    #[error("non-finite value {value} at index {index}")]
    NonFiniteEntry { index: usize, value: f64 },

    #[error("corrupt packed one-bit payload: {0}")]
    CorruptPacket(String),

    #[error("expected {expected} workers, got {got}")]
    WorkerCountMismatch { expected: usize, got: usize },

    #[error("step {step} out of range for a run of {total} steps")]
    ScheduleOutOfRange { step: usize, total: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite {what} detected at step {step}")]
    NonFiniteState { step: usize, what: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("config serialize error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}
