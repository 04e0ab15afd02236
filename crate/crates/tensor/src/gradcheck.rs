//! Central-difference gradient checker.

use crate::error::{Result, TensorError};
use crate::{Scalar, Tape, Tensor, Var};

/// Denominator floor of the relative error: gradients smaller than this sit
/// at the round-off level of f64 finite differences.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Estimates at `h` and `h / 2` disagreeing by more than this (relative)
/// mark a coordinate whose stencil straddles a kink or jump.
pub const SMOOTHNESS_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Worst relative error for each input over its smooth coordinates.
    pub worst: Vec<f64>,
    /// Coordinates whose finite-difference estimate changes with the step
    /// size, as `(input, index)`; their errors are not in `worst`.
    pub non_smooth: Vec<(usize, usize)>,
}

/// Compares autodiff gradients of a scalar-valued `forward` against
/// fourth-order central differences
/// `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, coordinate by
/// coordinate.
///
/// Returns the worst relative error for each input.
pub fn check_gradients<S, F>(forward: F, inputs: &[Tensor<S>], h: S) -> Result<Vec<f64>>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, &[Var<'t, S>]) -> Result<Var<'t, S>>,
{
    Ok(check_gradients_detailed(forward, inputs, h, f64::INFINITY)?.worst)
}

/// [`check_gradients`] for functions with isolated kinks or jumps. Any
/// coordinate whose error exceeds `tol` is re-estimated with step `h / 2`:
/// on a smooth function the two estimates agree to `O(h^4)`, while a kink
/// inside the stencil moves them apart. Such coordinates are reported in
/// `non_smooth` instead of counting as failures.
pub fn check_gradients_detailed<S, F>(forward: F, inputs: &[Tensor<S>], h: S, tol: f64) -> Result<GradCheck>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, &[Var<'t, S>]) -> Result<Var<'t, S>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_, S>> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = forward(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<S>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
    drop(grads);

    let eval = |probe: &[Tensor<S>]| -> Result<S> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, S>> = probe.iter().map(|t| tape.constant(t)).collect();
        Ok(forward(&tape, &vars)?.item())
    };

    let mut probe: Vec<Tensor<S>> = inputs.to_vec();
    let mut worst = vec![0.0; inputs.len()];
    let mut non_smooth = Vec::new();
    let hf = h.as_f64();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let x = input.data()[j];
            let mut estimate = |step: f64| -> Result<f64> {
                let mut at = |offset: f64| -> Result<f64> {
                    probe[i].data_mut()[j] = x + S::lit(offset * step);
                    let v = eval(&probe)?;
                    if !v.is_finite() {
                        return Err(TensorError::NonFiniteProbe { input: i, index: j });
                    }
                    Ok(v.as_f64())
                };
                let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
                Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step))
            };
            let numeric = estimate(hf)?;
            let a = analytic[i][j].as_f64();
            let mut err = relative_error(a, numeric);
            if err > tol {
                let half = estimate(hf / 2.0)?;
                if relative_error(numeric, half) > SMOOTHNESS_TOL {
                    non_smooth.push((i, j));
                    err = 0.0;
                }
            }
            probe[i].data_mut()[j] = x;
            if err > worst[i] {
                worst[i] = err;
            }
        }
    }
    Ok(GradCheck { worst, non_smooth })
}
