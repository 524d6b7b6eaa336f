use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("no token met the minimum count threshold ({min_count})")]
    EmptyVocabulary { min_count: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("not a model file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("model file is truncated")]
    Truncated,

    #[error("model file checksum mismatch (corrupted payload)")]
    ChecksumMismatch,

    #[error("model payload is malformed: {0}")]
    MalformedModel(String),

    #[error("{path}:{line}: {message}")]
    Dataset {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no signal for '{word}': no known context clues and no known subword n-grams")]
    NoSignal { word: String },

    #[error("rank correlation is undefined: {0}")]
    DegenerateCorrelation(String),

    #[error("no usable pairs: {0}")]
    NoUsablePairs(String),

    #[error("non-finite loss encountered at pair {pairs_done} (lr {lr}); aborting")]
    NonFiniteLoss { pairs_done: u64, lr: f64 },

    #[error("{0}")]
    Unsupported(String),
}

impl Error {
    /// Process exit code class for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Unsupported(_) => 1,
            Error::NonFiniteLoss { .. } => 3,
            _ => 2,
        }
    }
}
