use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Tensor shapes or graph structure do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// A NaN or infinity appeared during a forward pass or training step.
    #[error("numeric fault in {op}: {detail}")]
    NumericFault { op: String, detail: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema version {found} is not supported (expected {expected}); {hint}")]
    SchemaVersion {
        found: u32,
        expected: u32,
        hint: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }
}
