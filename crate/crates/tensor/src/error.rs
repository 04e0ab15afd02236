use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: invalid argument: {detail}")]
    Argument { op: &'static str, detail: String },

    #[error("{op}: coordinate ({x}, {y}) outside feature grid of width {width} and height {height}")]
    Range {
        op: &'static str,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("non-finite forward value while probing input {input} at coordinate {index}")]
    NonFiniteProbe { input: usize, index: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::Shape {
        op,
        detail: detail.into(),
    })
}

pub(crate) fn arg_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::Argument {
        op,
        detail: detail.into(),
    })
}
