mod conv;
mod elementwise;
mod linalg;
mod loss;
mod nn;
mod sample;
mod shape;

pub use elementwise::{logit, sigmoid};
pub use loss::PROB_EPS;
pub use nn::{multi_head_attention, AttentionWeights, Projection};
pub use shape::concat;
