//! Parameter updates: plain SGD and Adam with bias correction.

use crate::error::{shape_err, Result, TensorError};
use crate::{ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub kind: OptimizerKind,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            lr,
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            lr,
            kind: OptimizerKind::Sgd,
        }
    }
}

/// First and second moment buffers plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState<S> {
    pub step: u64,
    moments: Vec<(Vec<S>, Vec<S>)>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new() -> Self {
        Self {
            step: 0,
            moments: Vec::new(),
        }
    }
}

/// Applies one update. `grads[i]` belongs to the `i`-th registered parameter;
/// a `None` entry is reported by name.
pub fn optimizer_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &[Option<Vec<S>>],
    config: &OptimizerConfig,
    state: &mut OptimizerState<S>,
) -> Result<()> {
    if grads.len() != params.len() {
        return shape_err(
            "optimizer_step",
            format!("{} gradients for {} parameters", grads.len(), params.len()),
        );
    }
    for ((name, tensor), grad) in params.iter_mut().zip(grads) {
        match grad {
            None => return Err(TensorError::MissingGrad(name.to_string())),
            Some(g) if g.len() != tensor.numel() => {
                return shape_err(
                    "optimizer_step",
                    format!("gradient for `{name}` has {} elements, parameter has {}", g.len(), tensor.numel()),
                )
            }
            Some(_) => {}
        }
    }
    if state.moments.len() != params.len() {
        state.moments = params
            .iter()
            .map(|(_, _, t)| (vec![S::zero(); t.numel()], vec![S::zero(); t.numel()]))
            .collect();
    }
    state.step += 1;
    let lr = S::lit(config.lr);
    for (((_, tensor), grad), (m, v)) in params.iter_mut().zip(grads).zip(&mut state.moments) {
        let grad = grad.as_ref().expect("checked above");
        let data = tensor.data_mut();
        match config.kind {
            OptimizerKind::Sgd => {
                for (w, &g) in data.iter_mut().zip(grad) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (S::lit(beta1), S::lit(beta2), S::lit(eps));
                let c1 = S::one() - S::lit(beta1.powi(state.step as i32));
                let c2 = S::one() - S::lit(beta2.powi(state.step as i32));
                for i in 0..data.len() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + (S::one() - b1) * g;
                    v[i] = b2 * v[i] + (S::one() - b2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
