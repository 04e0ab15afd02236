//! Point-prompted small-object detection: synthetic scenes, the DEAL
//! detector, cyclic point-prompt training, AP evaluation and an inference
//! service layer.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod scene;
pub mod service;
pub mod train;

pub use error::{DealError, Result};

/// Detector with `f64` weights, used for training and gradient checks.
pub type Deal64 = model::Deal<f64>;
/// Detector with `f32` weights.
pub type Deal32 = model::Deal<f32>;
