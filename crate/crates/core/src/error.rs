use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HclError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HclError {
    /// Operand shapes do not conform to the operation's contract.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input outside the mathematical domain of the function.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// Masked average pooling over a class that has no pixels.
    #[error("degenerate region: class {class} has no pixels")]
    DegenerateRegion { class: usize },

    #[error("invalid config: {0}")]
    Config(String),

    /// Bad argument value from a caller-facing entry point.
    #[error("usage: {0}")]
    Usage(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HclError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        HclError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(detail: impl Into<String>) -> Self {
        HclError::Contract(detail.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HclError::Io {
            path: path.into(),
            source,
        }
    }
}
