use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite value in tensor '{name}'")]
    NonFinite { name: String },

    #[error("zero-variance column {column} in {which} matrix")]
    ZeroVariance { which: &'static str, column: usize },

    #[error("link state {state} outside support 1..={max}")]
    StateOutOfSupport { state: usize, max: usize },

    #[error("self-link requested for node {node}")]
    SelfLink { node: usize },

    #[error("node index {index} out of range (n = {n})")]
    NodeOutOfRange { index: usize, n: usize },

    #[error("batch size {requested} exceeds number of available pairs {available}")]
    BatchTooLarge { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training failed at iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("experiment '{context}' failed: {source}")]
    Experiment {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
