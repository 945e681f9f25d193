use std::path::PathBuf;

/// Errors raised anywhere in the library.
///
/// The variants map onto the CLI exit codes: `Usage`/`Config`/`Dimension`/`Domain` are
/// caller mistakes, `Io`/`Format` are file problems and `Numeric` is a NaN/Inf
/// detected in a computation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error on {axis} axis: {detail}")]
    Dimension { axis: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error in {op}: {detail}")]
    Numeric { op: String, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error in {}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(axis: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            axis,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(detail: impl Into<String>) -> Self {
        Error::Config(detail.into())
    }

    pub(crate) fn numeric(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a training step index to numeric failures.
    pub fn at_step(self, step: u64) -> Self {
        match self {
            Error::Numeric { op, detail } => Error::Numeric {
                op,
                detail: format!("{detail} (step {step})"),
            },
            other => other,
        }
    }
}
