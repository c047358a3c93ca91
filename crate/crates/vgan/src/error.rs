use std::fmt;
use std::io;
use std::path::PathBuf;

/// Failure to read or write one of the binary formats.
#[derive(Debug)]
pub enum FormatError {
    Io { path: PathBuf, source: io::Error },
    BadMagic { offset: u64, expected: [u8; 4], found: Vec<u8> },
    Version { offset: u64, found: u32 },
    /// The file ends before the header says it should.
    Truncated { expected: u64, actual: u64 },
    Invalid { offset: u64, reason: String },
    Model(vgan_core::Error),
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Self::BadMagic { offset, expected, found } => write!(
                f,
                "bad magic at byte {offset}: expected {:?}, found {:?}",
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(found)
            ),
            Self::Version { offset, found } => write!(f, "unsupported format version {found} at byte {offset}"),
            Self::Truncated { expected, actual } => {
                write!(f, "truncated file: expected {expected} bytes, got {actual}")
            }
            Self::Invalid { offset, reason } => write!(f, "invalid data at byte {offset}: {reason}"),
            Self::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for FormatError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<vgan_core::Error> for FormatError {
    fn from(e: vgan_core::Error) -> Self {
        Self::Model(e)
    }
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> FormatError {
    let path = path.into();
    move |source| FormatError::Io { path, source }
}
