use rand::Rng;

use crate::{Scalar, Tensor};

/// Uniform fan-in scaled initialisation: `U(-b, b)` with `b = gain * sqrt(3 / fan_in)`.
pub fn kaiming_uniform<S: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor<S> {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| S::lit(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and payload agree")
}
