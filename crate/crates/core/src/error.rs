//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch inside a tensor operation.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Non-finite input where the contract demands finite values.
    #[error("non-finite values in {op}: {detail}")]
    NonFinite { op: &'static str, detail: String },

    /// Invalid argument or violated precondition.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Configuration rejected by schema or invariant checks.
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    /// Malformed corpus record, with the 1-based line number.
    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },

    /// Checkpoint file does not start with the expected magic bytes.
    #[error("checkpoint: bad magic bytes")]
    CkptMagic,

    /// Checkpoint format version is not supported.
    #[error("checkpoint: version {found} unsupported (expected {expected})")]
    CkptVersion { found: u32, expected: u32 },

    /// Checkpoint file ended before the declared payload.
    #[error("checkpoint: truncated file")]
    CkptTruncated,

    /// Checkpoint config hash does not match the active config (strict mode).
    #[error("checkpoint: config hash mismatch")]
    CkptHashMismatch,

    /// Checkpoint vocabulary is incompatible with the requested operation.
    #[error("vocab mismatch: {0}")]
    VocabMismatch(String),

    /// Training loss became non-finite.
    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Process exit code for the CLI contract: 2 usage/schema, 3 divergence,
    /// 4 artifact mismatch, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) | Error::Config { .. } | Error::Corpus { .. } => 2,
            Error::Diverged { .. } => 3,
            Error::CkptMagic
            | Error::CkptVersion { .. }
            | Error::CkptTruncated
            | Error::CkptHashMismatch
            | Error::VocabMismatch(_) => 4,
            _ => 1,
        }
    }
}
