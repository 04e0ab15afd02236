use crate::error::{arg_err, shape_err, Result};
use crate::{Scalar, Tensor, Var};

/// Probability clamp applied inside log-based losses.
pub const PROB_EPS: f64 = 1e-7;

impl<'t, S: Scalar> Var<'t, S> {
    /// Binary focal loss averaged over elements.
    ///
    /// `self` holds probabilities; `target` holds labels in `[0, 1]` (soft
    /// labels interpolate the positive and negative terms). Probabilities are
    /// clamped to `[eps, 1 - eps]` and the clamped region has zero gradient.
    pub fn focal_loss(self, target: &Tensor<S>, alpha: f64, gamma: f64) -> Result<Var<'t, S>> {
        let shape = self.shape();
        if shape != target.shape() {
            return shape_err(
                "focal_loss",
                format!("prediction {shape:?} and target {:?} differ", target.shape()),
            );
        }
        if !(0.0..=1.0).contains(&alpha) || gamma < 0.0 {
            return arg_err("focal_loss", format!("alpha {alpha} must be in [0,1] and gamma {gamma} non-negative"));
        }
        let (a, gm) = (S::lit(alpha), S::lit(gamma));
        let (lo, hi) = (S::lit(PROB_EPS), S::one() - S::lit(PROB_EPS));
        let one = S::one();
        let pv = self.value();
        let tv = target.data().to_vec();
        let n = S::lit(pv.len() as f64);
        let mut total = S::zero();
        let mut dloss = vec![S::zero(); pv.len()];
        for i in 0..pv.len() {
            let raw = pv[i];
            let p = raw.max(lo).min(hi);
            let t = tv[i];
            let q = one - p;
            let pos = -a * q.powf(gm) * p.ln();
            let neg = -(one - a) * p.powf(gm) * q.ln();
            total += t * pos + (one - t) * neg;
            if raw >= lo && raw <= hi {
                let dpos = a * (gm * q.powf(gm - one) * p.ln() - q.powf(gm) / p);
                let dneg = -(one - a) * (gm * p.powf(gm - one) * q.ln() - p.powf(gm) / q);
                dloss[i] = (t * dpos + (one - t) * dneg) / n;
            }
        }
        let id = self.id();
        Ok(self.tape().push_op(vec![1], vec![total / n], &[id], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for (s, d) in slot.iter_mut().zip(&dloss) {
                    *s += g[0] * *d;
                }
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor};

    #[test]
    fn half_probability_positive() {
        let tape = Tape::<f64>::new();
        let p = tape.param(&Tensor::scalar(0.5));
        let loss = p.focal_loss(&Tensor::scalar(1.0), 0.25, 2.0).unwrap();
        let expected = 0.25 * 0.25 * std::f64::consts::LN_2;
        assert!((loss.item() - expected).abs() < 1e-15);
        assert!((loss.item() - 0.04332).abs() < 1e-5);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let tape = Tape::<f64>::new();
        let target = Tensor::from_f64([4], &[1., 0., 1., 0.]).unwrap();
        let p = tape.param(&target);
        let loss = p.focal_loss(&target, 0.25, 2.0).unwrap();
        assert!(loss.item() <= 1e-5);
    }

    #[test]
    fn shape_mismatch() {
        let tape = Tape::<f64>::new();
        let p = tape.param(&Tensor::full([2], 0.5));
        assert!(p.focal_loss(&Tensor::zeros([3]), 0.25, 2.0).is_err());
    }
}
