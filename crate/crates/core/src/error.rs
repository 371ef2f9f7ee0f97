use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid too small: {height}x{width} (stencils need at least 4x4)")]
    GridTooSmall { height: usize, width: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite value produced in {context}")]
    NonFinite { context: String },

    #[error("solver failed to converge after {iterations} iterations (residual {residual:e}): {context}")]
    Solver {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error in {path:?}: {kind}")]
    Format { path: PathBuf, kind: FormatError },

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: Vec<u8>, expected: &'static [u8] },
    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("trailing bytes after payload: {0}")]
    Trailing(u64),
    #[error("malformed content: {0}")]
    Malformed(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, kind: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            kind,
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape(_)
                | Error::GridTooSmall { .. }
                | Error::Validation(_)
                | Error::Contract(_)
                | Error::Format { .. }
        )
    }
}

/// Fails with [`Error::NonFinite`] if any value is NaN or infinite.
pub(crate) fn ensure_finite(values: &[f64], context: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context(),
        })
    }
}
