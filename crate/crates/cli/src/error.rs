use std::io;
use std::path::PathBuf;

/// Everything the command-line layer can fail with.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{format}: bad magic at byte offset 0: expected {expected}, found {found}")]
    BadMagic {
        format: &'static str,
        expected: String,
        found: String,
    },
    #[error(
        "{format}: truncated at byte offset {offset}: {needed} bytes needed, {available} available"
    )]
    Truncated {
        format: &'static str,
        offset: u64,
        needed: u64,
        available: u64,
    },
    #[error("{format}: payload length mismatch: expected {expected} bytes, found {found}")]
    Length {
        format: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("{format}: {reason} (byte offset {offset})")]
    Malformed {
        format: &'static str,
        offset: u64,
        reason: String,
    },
    #[error("idx: image file holds {images} items but label file holds {labels} (count field at byte offset 4)")]
    CountMismatch { images: u64, labels: u64 },
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error("config: {0}")]
    ConfigSyntax(String),
    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Core(#[from] ossl::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a file path to an error raised while decoding that file.
    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::InFile { .. }) => e,
            e => Error::InFile {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }

    fn root(&self) -> &Error {
        match self {
            Error::InFile { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit status: 3 for a numeric abort during training, 2 for
    /// everything else.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Core(ossl::Error::NonFinite(_)) => 3,
            _ => 2,
        }
    }
}
