use std::io;

use thiserror::Error;

/// Errors produced by the index and its storage layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("storage full: cannot grow the page store to {requested} pages")]
    StorageFull { requested: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("page range {offset}+{count} outside extent of {len} pages starting at {start}")]
    OutOfRange {
        start: u64,
        len: u64,
        offset: u64,
        count: u64,
    },

    #[error("extent starting at page {0} is not live")]
    FreedExtent(u64),

    #[error("extent starting at page {0} freed twice")]
    DoubleFree(u64),

    #[error("page {0} already written; pages are immutable once written")]
    Overwrite(u64),

    #[error("record codec: {0}")]
    Codec(String),

    #[error("key length {got}, expected {expected}")]
    KeyLength { expected: usize, got: usize },

    #[error("value length {got}, expected {expected}")]
    ValueLength { expected: usize, got: usize },

    #[error("input stream not strictly ascending")]
    Unsorted,

    #[error("manifest version mismatch: found {found}, supported {supported}")]
    ManifestVersion { found: u32, supported: u32 },

    #[error("stored configuration differs: {0}")]
    ConfigMismatch(String),

    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
}

pub type Result<T> = std::result::Result<T, Error>;
