use thiserror::Error;

/// Unified error type for the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("inconsistent inputs: {0}")]
    Consistency(String),
    #[error("io error")]
    Io(#[from] std::io::Error),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("condensation error: {0}")]
    Condensation(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("state error: {0}")]
    State(String),
    #[error("augmentation policy error: {0}")]
    Policy(String),
}

pub type Result<T> = std::result::Result<T, Error>;
