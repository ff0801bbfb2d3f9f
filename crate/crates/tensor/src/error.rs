use thiserror::Error;

/// Errors raised by tensor construction and graph operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got {elements} elements")]
    NotScalar { elements: usize },

    #[error("row {row} has norm {norm:e} below 1e-12; refusing to normalize a dead embedding")]
    DegenerateNorm { row: usize, norm: f64 },

    #[error("dropout rate must satisfy 0 <= p < 1, got {0}")]
    InvalidDropout(f64),

    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
