use thiserror::Error;

pub type Result<T> = std::result::Result<T, KfcError>;

#[derive(Debug, Error)]
pub enum KfcError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("{what} failed to converge after {iterations} iterations")]
    Numeric { what: &'static str, iterations: usize },

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("config error on line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("topology mismatch:\n--- expected ---\n{expected}\n--- found ---\n{found}")]
    TopologyMismatch { expected: String, found: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl KfcError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        KfcError::Shape(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        KfcError::Argument(msg.into())
    }
}
