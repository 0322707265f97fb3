use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A symbol that is not part of the declared alphabet.
    #[error("decode error: unknown symbol {symbol:?} at position {position}")]
    UnknownSymbol { symbol: String, position: usize },

    /// A missing value marker in the input.
    #[error("decode error: missing value at position {position}")]
    MissingValue { position: usize },

    #[error("input error: {0}")]
    Input(String),

    #[error("insufficient data: sequence length {len} must exceed the maximal order {order}")]
    InsufficientData { len: usize, order: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("tensor too large: {rows} context rows exceeds the cap of {cap}")]
    TooLarge { rows: u128, cap: u128 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A sampler invariant failed; carries diagnostics about the offending state.
    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("Bayes factor undefined: both posterior probabilities are zero")]
    UndefinedBayesFactor,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
