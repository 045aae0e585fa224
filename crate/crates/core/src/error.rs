use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("content of {content} frames exceeds capacity of {capacity} frames")]
    Capacity { content: usize, capacity: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("replay miss: {0}")]
    ReplayMiss(String),

    #[error("invalid decoder context: {0}")]
    InvalidContext(String),

    #[error("session has failed and accepts no further chunks")]
    SessionFailed,

    #[error(transparent)]
    Trace(#[from] TraceError),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Failures while decoding a binary trace or weights file.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bad magic bytes")]
    BadMagic,

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },

    #[error("file truncated while reading {context}")]
    Truncated { context: &'static str },

    #[error("checksum mismatch in section {section} (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum {
        section: String,
        stored: u32,
        computed: u32,
    },

    #[error("unknown section tag {0:?}")]
    UnknownSection([u8; 4]),

    #[error("malformed section {section}: {reason}")]
    Malformed { section: String, reason: String },

    #[error("trailing bytes after final section")]
    TrailingData,

    #[error("trace validation failed: {0}")]
    Validation(String),
}
