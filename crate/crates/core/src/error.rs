use std::path::PathBuf;

use deal_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DealError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scene generation failed: placed {achieved} of {requested} objects after {attempts} attempts")]
    Generation {
        achieved: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("prompt sampling failed: {0}")]
    Sampling(String),

    #[error("worst-object selection failed: {0}")]
    Selection(String),

    #[error("annotation parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("annotation validation failed: {0}")]
    Validation(String),

    #[error("missing image file {}", .0.display())]
    MissingImage(PathBuf),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("non-finite loss on scene `{scene_id}`; training aborted")]
    NonFiniteLoss { scene_id: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = DealError> = std::result::Result<T, E>;
