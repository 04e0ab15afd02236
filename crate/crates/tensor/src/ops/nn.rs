//! Normalisation, softmax and attention built from tape primitives.

use crate::error::{arg_err, shape_err, Result};
use crate::ops::shape::concat;
use crate::{Scalar, Var};

fn rows_and_width(shape: &[usize]) -> (usize, usize) {
    let width = *shape.last().expect("shapes are non-empty");
    (shape.iter().product::<usize>() / width, width)
}

impl<'t, S: Scalar> Var<'t, S> {
    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'t, S> {
        let shape = self.shape();
        let (rows, width) = rows_and_width(&shape);
        let xv = self.value();
        let mut out = vec![S::zero(); rows * width];
        for r in 0..rows {
            let src = &xv[r * width..][..width];
            let dst = &mut out[r * width..][..width];
            let max = src.iter().copied().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - max).exp();
                total += *d;
            }
            dst.iter_mut().for_each(|d| *d /= total);
        }
        let yv = std::rc::Rc::new(out.clone());
        let id = self.id();
        self.tape().push_op(shape, out, &[id], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for r in 0..rows {
                    let y = &yv[r * width..][..width];
                    let gr = &g[r * width..][..width];
                    let dot: S = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yi), &gi) in slot[r * width..][..width].iter_mut().zip(y).zip(gr) {
                        *d += yi * (gi - dot);
                    }
                }
            }
        })
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(self, gamma: Var<'t, S>, beta: Var<'t, S>, eps: S) -> Result<Var<'t, S>> {
        let shape = self.shape();
        let (rows, width) = rows_and_width(&shape);
        if gamma.shape() != [width] || beta.shape() != [width] {
            return shape_err(
                "layer_norm",
                format!("affine parameters must have shape [{width}], got {:?} and {:?}", gamma.shape(), beta.shape()),
            );
        }
        let xv = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let n = S::lit(width as f64);
        let mut xhat = vec![S::zero(); rows * width];
        let mut inv_std = vec![S::zero(); rows];
        let mut out = vec![S::zero(); rows * width];
        for r in 0..rows {
            let src = &xv[r * width..][..width];
            let mean = src.iter().copied().sum::<S>() / n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let is = S::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..width {
                let h = (src[i] - mean) * is;
                xhat[r * width + i] = h;
                out[r * width + i] = h * gv[i] + bv[i];
            }
        }
        let (ix, ig, ib) = (self.id(), gamma.id(), beta.id());
        Ok(self.tape().push_op(shape, out, &[ix, ig, ib], move |g, sink| {
            if let Some(gg) = sink.slot(ig) {
                for r in 0..rows {
                    for i in 0..width {
                        gg[i] += g[r * width + i] * xhat[r * width + i];
                    }
                }
            }
            if let Some(gb) = sink.slot(ib) {
                for r in 0..rows {
                    for i in 0..width {
                        gb[i] += g[r * width + i];
                    }
                }
            }
            if let Some(gx) = sink.slot(ix) {
                let mut dxhat = vec![S::zero(); width];
                for r in 0..rows {
                    let h = &xhat[r * width..][..width];
                    for i in 0..width {
                        dxhat[i] = g[r * width + i] * gv[i];
                    }
                    let mean_d = dxhat.iter().copied().sum::<S>() / n;
                    let mean_dh = dxhat.iter().zip(h).map(|(&a, &b)| a * b).sum::<S>() / n;
                    for i in 0..width {
                        gx[r * width + i] += inv_std[r] * (dxhat[i] - mean_d - h[i] * mean_dh);
                    }
                }
            }
        }))
    }
}

/// Affine map `x * weight + bias` on row vectors; `weight` is `in x out`.
#[derive(Clone, Copy, Debug)]
pub struct Projection<'t, S> {
    pub weight: Var<'t, S>,
    pub bias: Option<Var<'t, S>>,
}

impl<'t, S: Scalar> Projection<'t, S> {
    pub fn new(weight: Var<'t, S>, bias: Option<Var<'t, S>>) -> Self {
        Self { weight, bias }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn apply(&self, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let y = x.matmul(self.weight)?;
        match self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

/// Query/key/value/output projections of one attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights<'t, S> {
    pub query: Projection<'t, S>,
    pub key: Projection<'t, S>,
    pub value: Projection<'t, S>,
    pub output: Projection<'t, S>,
}

/// Scaled dot-product attention with `heads` heads.
///
/// `query` is `k x dq`, `key` is `m x dk`, `value` is `m x dv`. All three are
/// projected to the model width `d` (the query projection's output width),
/// attended per head with scale `1/sqrt(d/heads)`, concatenated and passed
/// through the output projection.
pub fn multi_head_attention<'t, S: Scalar>(
    query: Var<'t, S>,
    key: Var<'t, S>,
    value: Var<'t, S>,
    weights: &AttentionWeights<'t, S>,
    heads: usize,
) -> Result<Var<'t, S>> {
    let d = weights.query.out_features();
    if heads == 0 || d % heads != 0 {
        return arg_err(
            "multi_head_attention",
            format!("model width {d} is not divisible by {heads} heads"),
        );
    }
    if weights.key.out_features() != d || weights.value.out_features() != d {
        return shape_err(
            "multi_head_attention",
            format!(
                "projection widths differ: query {d}, key {}, value {}",
                weights.key.out_features(),
                weights.value.out_features()
            ),
        );
    }
    let (ks, vs) = (key.shape(), value.shape());
    if ks.len() != 2 || vs.len() != 2 || ks[0] != vs[0] {
        return shape_err(
            "multi_head_attention",
            format!("key {ks:?} and value {vs:?} must be 2-D with equal row counts"),
        );
    }
    let q = weights.query.apply(query)?;
    let k = weights.key.apply(key)?;
    let v = weights.value.apply(value)?;
    let head_dim = d / heads;
    let scale = S::one() / S::lit(head_dim as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                q.narrow(1, h * head_dim, head_dim)?,
                k.narrow(1, h * head_dim, head_dim)?,
                v.narrow(1, h * head_dim, head_dim)?,
            )
        };
        let attn = qh.matmul(kh.transpose()?)?.scale(scale).softmax();
        outs.push(attn.matmul(vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { concat(&outs, 1)? };
    weights.output.apply(joined)
}
