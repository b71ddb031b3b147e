use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    /// The inputs have valid shapes but the operation is undefined on them.
    #[error("{op}: {detail}")]
    Degenerate { op: &'static str, detail: String },
}

impl GraphError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        GraphError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn degenerate(op: &'static str, detail: impl Into<String>) -> Self {
        GraphError::Degenerate {
            op,
            detail: detail.into(),
        }
    }

    /// Name of the operation that rejected its inputs.
    pub fn op(&self) -> &'static str {
        match self {
            GraphError::Shape { op, .. } | GraphError::Degenerate { op, .. } => op,
        }
    }
}

pub type Result<T> = std::result::Result<T, GraphError>;
