use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A bit stream cannot be framed as requested, e.g. its length is not a
    /// multiple of 8 when decoding bytes.
    #[error("framing error: {0}")]
    Framing(String),

    /// A caller-supplied parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input data violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A partition could not be constructed (e.g. a bucket would be empty).
    #[error("partition construction failed: {0}")]
    Construction(String),

    /// The requested bucket has no probability mass to sample from, or a
    /// distribution is too degenerate for the requested encoding.
    #[error("encoding impossible: {0}")]
    EncodingImpossible(String),

    /// A model adapter failed to answer.
    #[error("model unavailable: {0}")]
    ModelUnavailable(String),

    /// Not enough data remains to satisfy the request.
    #[error("truncated input: {0}")]
    Truncation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
