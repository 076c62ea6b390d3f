use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected} but got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("invalid model configuration: {0}")]
    Construction(String),

    #[error("weight container: {0}")]
    Container(#[from] ContainerError),

    #[error("weight binding failed:\n{}", format_issues(.0))]
    Binding(Vec<BindIssue>),

    #[error("model weights are not bound; {} tensor(s) missing, e.g. {}", .0.len(), .0.first().map(String::as_str).unwrap_or("-"))]
    Unbound(Vec<String>),

    #[error("image decode failed for {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("label file {path}, line {line}: {msg}")]
    Label { path: PathBuf, line: usize, msg: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

/// Failure kinds when validating an FWC1 container.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContainerError {
    #[error("bad magic {0:?}, expected \"FWC1\"")]
    BadMagic([u8; 4]),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("tensor {name}: shape {shape:?} needs {expected} bytes but entry declares {nbytes}")]
    SizeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: u64,
        nbytes: u64,
    },
    #[error("tensors {first} and {second} overlap in the data region")]
    Overlap { first: String, second: String },
    #[error("unsupported dtype {dtype:?} for tensor {name}")]
    UnsupportedDtype { name: String, dtype: String },
    #[error("container meta: {0}")]
    Meta(String),
}

/// One problem found while binding a container to the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BindIssue {
    Missing {
        name: String,
        expected: Vec<usize>,
    },
    Extra {
        name: String,
    },
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

impl std::fmt::Display for BindIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BindIssue::Missing { name, expected } => write!(f, "missing tensor {name} (expected shape {expected:?})"),
            BindIssue::Extra { name } => write!(f, "unexpected tensor {name}"),
            BindIssue::ShapeMismatch { name, expected, actual } => {
                write!(f, "tensor {name}: expected shape {expected:?}, got {actual:?}")
            }
        }
    }
}

fn format_issues(issues: &[BindIssue]) -> String {
    issues.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n")
}
