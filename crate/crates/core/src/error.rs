use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("loss must be a scalar, got shape [{0}, {1}]")]
    NonScalarLoss(usize, usize),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("actions file was generated for corpus {expected}, but corpus hashes to {found}")]
    HashMismatch { expected: String, found: String },

    #[error("label inventory mismatch: {0}")]
    LabelMismatch(String),

    #[error("reviser returned {got} outputs for an input buffer of {expected}")]
    ReviserLength { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numeric(_) => 4,
            Error::Data(_)
            | Error::Parse { .. }
            | Error::HashMismatch { .. }
            | Error::LabelMismatch(_)
            | Error::Empty(_)
            | Error::Checkpoint(_)
            | Error::Io(_) => 3,
            _ => 1,
        }
    }
}
