use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: every task requires at least one token")]
    EmptyInput,

    #[error("inconsistent attribute columns: token {index} is missing column `{column}`")]
    InconsistentColumns { index: usize, column: String },

    #[error("decision `{decision}` is not allowed in this state")]
    DisallowedDecision { decision: String },

    #[error("unknown decision name `{0}`")]
    UnknownDecision(String),

    #[error("gold annotation length {gold} does not match input length {input}")]
    LengthMismatch { gold: usize, input: usize },

    #[error("non-projective gold tree: no legal decision at step {step}")]
    NonProjective { step: usize },

    #[error("invalid gold annotation: {0}")]
    InvalidGold(String),

    #[error("incomplete decision sequence: got {got} decisions, expected {expected}")]
    IncompleteSequence { got: usize, expected: usize },

    #[error("feature template error: {0}")]
    Template(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown trainable subset `{0}`")]
    UnknownSubset(String),

    #[error("enumeration cap exceeded: {count} sequences > cap {cap}")]
    EnumerationCap { count: u64, cap: u64 },

    #[error("corpus parse error at {path}:{line}: {message}")]
    CorpusParse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("model archive error: {0}")]
    Archive(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("local model reads tokens beyond its declared restriction")]
    LookaheadViolation,

    #[error("zero-probability decision cannot be embedded without a floor")]
    ZeroProbability,

    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("task mismatch: model is for {model}, input is for {input}")]
    TaskMismatch { model: String, input: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
