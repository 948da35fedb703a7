use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("encoding error: code {code} does not fit in {bits} bits")]
    Encoding { code: u32, bits: u8 },

    #[error("invalid target index {target} for {classes} classes")]
    InvalidTarget { target: usize, classes: usize },

    #[error("bit position {position} out of range for {bits}-bit codes")]
    BitPosition { position: u32, bits: u8 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad magic number in {what}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated file {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("sample count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("not a model file (bad magic string)")]
    ModelMagic,

    #[error("unsupported model file version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt model file length: {0}")]
    CorruptLength(String),

    #[error("model file checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed model file: {0}")]
    Malformed(String),

    #[error("missing file: {0}")]
    MissingFile(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Wraps a numeric error with extra context, leaving other variants alone.
    pub fn with_context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Numeric(msg) => Error::Numeric(format!("{ctx}: {msg}")),
            other => other,
        }
    }
}
