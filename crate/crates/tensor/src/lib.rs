//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! The engine provides the operator set needed by the DEAL detector:
//! broadcasting arithmetic, matrix products, 2-D convolution, softmax,
//! layer normalisation, multi-head attention, bilinear point sampling and the
//! binary focal loss, together with an Adam/SGD optimizer, a checkpoint
//! container and a central-difference gradient checker.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix the element type to `f64`, which is what training and the
//! gradient checks use.

mod checkpoint;
mod error;
mod gradcheck;
mod init;
pub mod ops;
mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, restore, save_checkpoint, FORMAT_VERSION, MAGIC,
};
pub use error::{Result, TensorError};
pub use gradcheck::{check_gradients, check_gradients_detailed, relative_error, GradCheck, REL_ERR_FLOOR, SMOOTHNESS_TOL};
pub use init::kaiming_uniform;
pub use ops::{concat, logit, multi_head_attention, sigmoid, AttentionWeights, Projection, PROB_EPS};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState};
pub use params::{Bound, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{GradSink, Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore64 = ParamStore<f64>;
