use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("could not place asset {asset_index} without overlap after {attempts} attempts")]
    Placement { asset_index: usize, attempts: usize },

    #[error("no regular stride keeps {target} samples within 1% (achievable: {achievable:?})")]
    Downsample {
        target: usize,
        achievable: Vec<usize>,
    },

    #[error("average precision is undefined for an empty ground-truth set")]
    UndefinedAp,

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Record(#[from] RecordError),

    #[error("manifest entry {entry}: {message}")]
    Manifest { entry: usize, message: String },

    #[error("image ids differ between inputs: only in first {only_left:?}, only in second {only_right:?}")]
    Misaligned {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used by the command line for exit codes.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument { .. } => ErrorClass::Usage,
            Error::Placement { .. } | Error::Downsample { .. } | Error::UndefinedAp => {
                ErrorClass::Computation
            }
            _ => ErrorClass::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Computation,
}

/// Binary format violation, located by byte offset.
#[derive(Debug, Error, PartialEq)]
#[error("format error at byte {offset}: {kind}")]
pub struct FormatError {
    pub offset: u64,
    pub kind: FormatErrorKind,
}

#[derive(Debug, Error, PartialEq)]
pub enum FormatErrorKind {
    #[error("bad magic {found:?}, expected \"DMAP\"")]
    BadMagic { found: [u8; 4] },
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("dimensions {width}x{height} overflow the addressable size")]
    DimensionOverflow { width: u32, height: u32 },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: u64 },
    #[error("invalid header field: {0}")]
    Header(String),
}

/// Text-record violation, located by 1-based line number.
#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {kind}")]
pub struct RecordError {
    pub line: usize,
    pub kind: RecordErrorKind,
}

#[derive(Debug, Error, PartialEq)]
pub enum RecordErrorKind {
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("`{field}` = {value} is out of range")]
    OutOfRange { field: String, value: f64 },
    #[error("invariant violated: {0}")]
    Invariant(String),
}
