use std::path::PathBuf;

use thiserror::Error;

use crate::data::SiteId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration or invocation.
    Config,
    /// Input data is malformed, missing or inconsistent.
    Data,
    /// A numerical routine could not produce a result.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("site {site}: bad magic in blob {path}")]
    BadMagic { site: SiteId, path: PathBuf },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("site {site}: checksum mismatch (expected {expected:08x}, found {found:08x})")]
    ChecksumMismatch { site: SiteId, expected: u32, found: u32 },

    #[error("site {site}: blob truncated or malformed ({detail})")]
    Truncated { site: SiteId, detail: String },

    #[error("site {site}: blob {path} is missing")]
    MissingBlob { site: SiteId, path: PathBuf },

    #[error("site {0} not present in store")]
    UnknownSite(SiteId),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("duplicate row for stimulus {stimulus} seed {seed} at site {site}")]
    DuplicateRow { site: SiteId, stimulus: usize, seed: u64 },

    #[error("ratings line {line}, column {column}: {message}")]
    Rating {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid site specification {0:?}")]
    SiteSpec(String),

    #[error("invalid subgroup: {0}")]
    Subgroup(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("matrix is singular or not positive definite ({0})")]
    Singular(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(String),

    #[error("infeasible correlation structure: {0}")]
    Infeasible(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("bad model record: {0}")]
    ModelFormat(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Wraps the error with a description of what was being done.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } | Error::SiteSpec(_) | Error::InvalidArgument(_) => {
                ErrorClass::Config
            }
            Error::NonFinite(_)
            | Error::Singular(_)
            | Error::Degenerate(_)
            | Error::ZeroNorm(_)
            | Error::Infeasible(_) => ErrorClass::Numerical,
            Error::Context { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
