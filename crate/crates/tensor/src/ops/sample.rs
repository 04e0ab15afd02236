use crate::error::{shape_err, Result, TensorError};
use crate::{Scalar, Var};

impl<'t, S: Scalar> Var<'t, S> {
    /// Bilinear interpolation of a `C x H x W` feature at grid coordinate
    /// `(x, y)`, returning a `[C]` vector. Differentiable in the feature only.
    pub fn bilinear_sample(self, x: f64, y: f64) -> Result<Var<'t, S>> {
        let shape = self.shape();
        let [c, h, w] = shape[..] else {
            return shape_err("bilinear_sample", format!("expected a C x H x W feature, got {shape:?}"));
        };
        let in_range = |v: f64, hi: usize| v.is_finite() && v >= 0.0 && v <= (hi - 1) as f64;
        if !in_range(x, w) || !in_range(y, h) {
            return Err(TensorError::Range {
                op: "bilinear_sample",
                x,
                y,
                width: w,
                height: h,
            });
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (S::lit(x - x0 as f64), S::lit(y - y0 as f64));
        let one = S::one();
        let taps = [
            (y0 * w + x0, (one - fx) * (one - fy)),
            (y0 * w + x1, fx * (one - fy)),
            (y1 * w + x0, (one - fx) * fy),
            (y1 * w + x1, fx * fy),
        ];
        let fv = self.value();
        let plane = h * w;
        let out: Vec<S> = (0..c)
            .map(|ch| taps.iter().map(|&(i, wt)| wt * fv[ch * plane + i]).sum())
            .collect();
        let id = self.id();
        Ok(self.tape().push_op(vec![c], out, &[id], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for ch in 0..c {
                    for &(i, wt) in &taps {
                        slot[ch * plane + i] += wt * g[ch];
                    }
                }
            }
        }))
    }
}
