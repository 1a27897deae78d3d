use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] avsm_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {reason}", path.display())]
    Wav { path: PathBuf, reason: String },
    #[error("{}: sample rate is {found} Hz but {expected} Hz is required; resample the file first", path.display())]
    ResampleRequired { path: PathBuf, found: u32, expected: u32 },
    #[error("{}: corrupt file: {reason}", path.display())]
    CorruptFile { path: PathBuf, reason: String },
    #[error("{}: format version {found} is not supported (expected {expected})", path.display())]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::CorruptFile { path: path.into(), reason: reason.into() }
    }

    /// Process exit status: 2 for anything the caller can fix by changing
    /// arguments or configuration, 1 for failures while processing data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Validation(_) => 2,
            Error::Core(avsm_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}
