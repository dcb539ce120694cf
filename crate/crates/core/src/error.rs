//! Error types shared across the toolkit.

use std::path::PathBuf;

/// Toolkit-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All errors surfaced by the library.
///
/// The CLI maps these onto process exit codes: configuration problems
/// (`Parameter`, `Config`) exit 2, data problems (`Dimension`, `EmptyInput`,
/// `Container`, `Io`) exit 3, and `Internal` exits 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible shapes; the message names both operands.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A scalar argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A run configuration is inconsistent or incomplete.
    #[error("configuration error: {0}")]
    Config(String),

    /// A tensor container file failed to parse.
    #[error("{}: {source}", path.display())]
    Container {
        path: PathBuf,
        source: ContainerError,
    },

    /// Underlying filesystem failure.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// A state the library promises can never occur.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// Parse failures for the `.ost` tensor container format.
///
/// Each corruption class gets its own variant so callers (and tests) can
/// distinguish them.
#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: Vec<u8> },

    #[error("truncated header: expected {expected} bytes, found {actual}")]
    TruncatedHeader { expected: u64, actual: u64 },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: u64, actual: u64 },

    #[error("trailing data after payload: expected {expected} bytes total, found {actual}")]
    TrailingData { expected: u64, actual: u64 },

    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },
}

impl Error {
    /// Process exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Config(_) => 2,
            Error::Dimension(_)
            | Error::EmptyInput(_)
            | Error::Container { .. }
            | Error::Io { .. } => 3,
            Error::Internal(_) => 4,
        }
    }
}
