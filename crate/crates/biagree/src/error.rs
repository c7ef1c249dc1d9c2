use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {kind}: input shapes {shapes:?}")]
    Shape { kind: &'static str, shapes: Vec<Vec<usize>> },

    #[error("array of shape {shape:?} needs {expected} values, got {actual}")]
    ArrayLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("node {0} does not belong to this graph")]
    ForeignNode(usize),

    #[error("graph has no parameter store bound")]
    UnboundParams,

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("invalid token id {id} (vocabulary size {vocab_size})")]
    InvalidToken { id: u32, vocab_size: usize },

    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),

    #[error("decoder state does not match the encoder states it was used with")]
    StateMismatch,

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("KL support violation: q is zero where p = {p}")]
    Support { p: f64 },

    #[error("enumeration guard exceeded: {vocab}^{max_len} sequences is above the limit of {limit}")]
    GuardExceeded {
        vocab: usize,
        max_len: usize,
        limit: u64,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("non-finite loss at step {step} (batch {batch})")]
    Diverged { step: u64, batch: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("line count mismatch: {source_path} has {source_lines} lines, {target_path} has {target_lines}")]
    LineCount {
        source_path: PathBuf,
        source_lines: usize,
        target_path: PathBuf,
        target_lines: usize,
    },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("invalid value for `{key}`: {message}")]
    ConfigValue { key: String, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
