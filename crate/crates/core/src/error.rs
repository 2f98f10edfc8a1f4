use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A CSV row or preamble line could not be parsed.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A value violates a domain invariant (geometry bounds, polarity, ...).
    #[error("{location}: {message}")]
    Validation { location: String, message: String },

    /// Message indices or timestamps are out of order.
    #[error("{location}: {message}")]
    Ordering { location: String, message: String },

    #[error("byte {offset}: bad magic {found:02x?}, expected \"EVR1\"")]
    BadMagic { offset: usize, found: Vec<u8> },

    #[error("byte {offset}: unsupported format version {version}")]
    UnsupportedVersion { offset: usize, version: u8 },

    #[error("byte {offset}: truncated header ({available} of 13 bytes)")]
    TruncatedHeader { offset: usize, available: usize },

    #[error("byte {offset}: truncated record {record} of message block {block}")]
    TruncatedRecord { offset: usize, block: usize, record: usize },

    #[error("byte {offset}: truncated message block {block}: {message}")]
    TruncatedBlock {
        offset: usize,
        block: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn ordering(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Ordering {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Byte offset for errors raised by the binary codec.
    pub fn byte_offset(&self) -> Option<usize> {
        match self {
            Error::BadMagic { offset, .. }
            | Error::UnsupportedVersion { offset, .. }
            | Error::TruncatedHeader { offset, .. }
            | Error::TruncatedRecord { offset, .. }
            | Error::TruncatedBlock { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}
