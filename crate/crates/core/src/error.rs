use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: output would be empty ({detail})")]
    EmptyOutput { op: &'static str, detail: String },

    #[error("{op}: spatial dimensions of {shape} must be even")]
    OddDimension { op: &'static str, shape: Shape },

    #[error("backward root must be scalar-shaped, got {0}")]
    NonScalarRoot(Shape),

    #[error("computation graph was already consumed by a backward pass")]
    GraphConsumed,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("expected a {expected} model, got {found}")]
    WrongModelKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("region {region}: clipped box {left},{top},{right},{bottom} has zero area")]
    DegenerateBox {
        region: String,
        left: i64,
        top: i64,
        right: i64,
        bottom: i64,
    },

    #[error("{context}:{line}: {message}")]
    Malformed {
        context: String,
        line: usize,
        message: String,
    },

    #[error("row count mismatch: {pixels} pixel rows vs {votes} vote rows")]
    RowCountMismatch { pixels: usize, votes: usize },

    #[error("{} listed image(s) missing on disk: {}", .0.len(), .0.join(", "))]
    MissingImages(Vec<String>),

    #[error("dataset has no usable training samples")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("class mismatch: checkpoint has {expected:?}, data has {found:?}")]
    ClassMismatch { expected: Vec<String>, found: Vec<String> },

    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("value {0} outside [0, 1]")]
    OutOfUnitRange(f64),

    #[error("{op}: dimension mismatch ({detail})")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image format: {0}")]
    Format(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Malformed {
            context: context.into(),
            line,
            message: message.into(),
        }
    }
}
