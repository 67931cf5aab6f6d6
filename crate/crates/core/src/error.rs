use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SegError> = std::result::Result<T, E>;

/// Everything that can go wrong inside the library.
///
/// The CLI maps variants onto exit codes through [`SegError::kind`].
#[derive(Debug, Error)]
pub enum SegError {
    #[error("shape mismatch in {op}: {dim} is {got}, expected {expected}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("{op}: {msg}")]
    InvalidInput { op: &'static str, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("{path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },

    #[error("missing files for ids: {}", .0.iter().map(|(id, p)| format!("{id} ({})", p.display())).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<(String, PathBuf)>),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Runtime,
}

impl SegError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            SegError::Config(_) => ErrorKind::Usage,
            SegError::Read { .. }
            | SegError::Image { .. }
            | SegError::Manifest { .. }
            | SegError::MissingFiles(_)
            | SegError::ModelFile(_)
            | SegError::EmptyDataset(_) => ErrorKind::Data,
            SegError::Shape { .. } | SegError::InvalidInput { .. } | SegError::Write { .. } => ErrorKind::Runtime,
        }
    }

    pub(crate) fn shape(op: &'static str, dim: &'static str, got: usize, expected: usize) -> Self {
        SegError::Shape { op, dim, got, expected }
    }

    /// `Ok` when the shapes agree, otherwise an error naming the first
    /// differing dimension.
    pub(crate) fn check_shape(
        op: &'static str,
        got: crate::tensor::Shape,
        expected: crate::tensor::Shape,
    ) -> Result<()> {
        let dims = ["batch", "channels", "height", "width"];
        for ((dim, g), e) in dims.into_iter().zip(got.dims()).zip(expected.dims()) {
            if g != e {
                return Err(SegError::shape(op, dim, g, e));
            }
        }
        Ok(())
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        SegError::InvalidInput { op, msg: msg.into() }
    }
}
