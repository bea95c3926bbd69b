use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("contract violated in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format in {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("png decode error in {path}: {detail}")]
    Png { path: PathBuf, detail: String },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("import failed: {}", .0.join("; "))]
    Import(Vec<String>),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("numerical abort at iteration {iteration} in {component}: {detail}")]
    NumericalAbort {
        iteration: usize,
        component: String,
        detail: String,
    },

    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
