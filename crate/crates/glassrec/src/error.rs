//! Crate-wide error type with process exit-code mapping for the CLI.

use thiserror::Error;

/// Convenient alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors or matrices. Indicates a
    /// programming error in the caller, not bad user input.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An API contract was violated (backward called twice, empty relevant
    /// set, identical pair members, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed content in an input file, with the offending line.
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    /// An element symbol or node that is not present where it must be.
    #[error("unknown reference: {0}")]
    Reference(String),

    /// Invalid configuration: hyper-parameters out of range, empty negative
    /// pool, more folds than samples, refusing to clobber output, ...
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A recommendation query that cannot be answered (unknown element,
    /// malformed query string, element absent from the trained network).
    #[error("invalid query: {0}")]
    Query(String),

    #[error("file not found: {0}")]
    NotFound(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wrap an I/O error with the path it occurred on, mapping missing files
    /// to the dedicated [`Error::NotFound`] variant.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit code for the CLI: 1 internal, 2 input error, 3 query error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_) | Error::Contract(_) => 1,
            Error::Format { .. }
            | Error::Reference(_)
            | Error::Config(_)
            | Error::NotFound(_)
            | Error::Io { .. } => 2,
            Error::Query(_) => 3,
        }
    }
}
