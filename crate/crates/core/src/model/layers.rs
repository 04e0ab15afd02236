//! Parameterised building blocks: convolution, linear, layer norm, attention
//! and transformer blocks.

use rand_chacha::ChaCha8Rng;

use deal_tensor::{kaiming_uniform, multi_head_attention, AttentionWeights, Bound, ParamId, ParamStore, Projection, Scalar, Tensor, Var};

use crate::error::Result;

const LN_EPS: f64 = 1e-5;

/// Registers freshly initialised parameters under a dotted name prefix.
pub(crate) struct Init<'a, S> {
    pub store: &'a mut ParamStore<S>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<S: Scalar> Init<'_, S> {
    pub fn add(&mut self, name: &str, t: Tensor<S>) -> Result<ParamId> {
        Ok(self.store.register(name, t)?)
    }

    pub fn kaiming(&mut self, name: &str, shape: &[usize], fan_in: usize, gain: f64) -> Result<ParamId> {
        let t = kaiming_uniform(shape, fan_in, gain, self.rng);
        self.add(name, t)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub fn new<S: Scalar>(init: &mut Init<S>, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        let w = init.kaiming(&format!("{name}.weight"), &[cout, cin, k, k], cin * k * k, 1.0)?;
        let b = init.add(&format!("{name}.bias"), Tensor::zeros([cout]))?;
        Ok(Self { w, b, stride, pad: k / 2 })
    }

    pub fn bias_id(&self) -> ParamId {
        self.b
    }

    pub fn apply<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        Ok(x.conv2d(p.get(self.w), Some(p.get(self.b)), self.stride, self.pad)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new<S: Scalar>(init: &mut Init<S>, name: &str, fin: usize, fout: usize) -> Result<Self> {
        Self::scaled(init, name, fin, fout, 1.0)
    }

    /// Weight bound scaled by `gain`; `gain = 0` gives an all-zero layer.
    pub fn scaled<S: Scalar>(init: &mut Init<S>, name: &str, fin: usize, fout: usize, gain: f64) -> Result<Self> {
        let w = if gain == 0.0 {
            init.add(&format!("{name}.weight"), Tensor::zeros([fin, fout]))?
        } else {
            init.kaiming(&format!("{name}.weight"), &[fin, fout], fin, gain)?
        };
        let b = init.add(&format!("{name}.bias"), Tensor::zeros([fout]))?;
        Ok(Self { w, b })
    }

    pub fn bias_id(&self) -> ParamId {
        self.b
    }

    pub fn projection<'t, S: Scalar>(&self, p: &Bound<'t, S>) -> Projection<'t, S> {
        Projection::new(p.get(self.w), Some(p.get(self.b)))
    }

    pub fn apply<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        Ok(self.projection(p).apply(x)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    g: ParamId,
    b: ParamId,
}

impl Norm {
    pub fn new<S: Scalar>(init: &mut Init<S>, name: &str, width: usize) -> Result<Self> {
        let g = init.add(&format!("{name}.gamma"), Tensor::ones([width]))?;
        let b = init.add(&format!("{name}.beta"), Tensor::zeros([width]))?;
        Ok(Self { g, b })
    }

    pub fn apply<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        Ok(x.layer_norm(p.get(self.g), p.get(self.b), S::lit(LN_EPS))?)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    /// Queries of width `dq`, keys/values of width `dkv`, internal width `d`,
    /// output width `dout`.
    pub fn new<S: Scalar>(
        init: &mut Init<S>,
        name: &str,
        dq: usize,
        dkv: usize,
        d: usize,
        dout: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            q: Linear::new(init, &format!("{name}.q"), dq, d)?,
            k: Linear::new(init, &format!("{name}.k"), dkv, d)?,
            v: Linear::new(init, &format!("{name}.v"), dkv, d)?,
            o: Linear::new(init, &format!("{name}.o"), d, dout)?,
            heads,
        })
    }

    pub fn apply<'t, S: Scalar>(&self, p: &Bound<'t, S>, q: Var<'t, S>, k: Var<'t, S>, v: Var<'t, S>) -> Result<Var<'t, S>> {
        let w = AttentionWeights {
            query: self.q.projection(p),
            key: self.k.projection(p),
            value: self.v.projection(p),
            output: self.o.projection(p),
        };
        Ok(multi_head_attention(q, k, v, &w, self.heads)?)
    }
}

fn add_pos<'t, S: Scalar>(x: Var<'t, S>, pos: Option<Var<'t, S>>) -> Result<Var<'t, S>> {
    match pos {
        Some(p) => Ok(x.add(p)?),
        None => Ok(x),
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new<S: Scalar>(init: &mut Init<S>, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(init, &format!("{name}.up"), width, 2 * width)?,
            down: Linear::new(init, &format!("{name}.down"), 2 * width, width)?,
        })
    }

    pub fn apply<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        self.down.apply(p, self.up.apply(p, x)?.silu())
    }
}

/// Pre-norm self-attention encoder block over `n x width` tokens.
#[derive(Clone, Copy, Debug)]
pub(crate) struct EncoderBlock {
    norm1: Norm,
    attn: Attention,
    norm2: Norm,
    ffn: FeedForward,
}

impl EncoderBlock {
    pub fn new<S: Scalar>(init: &mut Init<S>, name: &str, width: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm1: Norm::new(init, &format!("{name}.norm1"), width)?,
            attn: Attention::new(init, &format!("{name}.attn"), width, width, width, width, heads)?,
            norm2: Norm::new(init, &format!("{name}.norm2"), width)?,
            ffn: FeedForward::new(init, &format!("{name}.ffn"), width)?,
        })
    }

    pub fn apply<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>, pos: Option<Var<'t, S>>) -> Result<Var<'t, S>> {
        let h = self.norm1.apply(p, x)?;
        let qk = add_pos(h, pos)?;
        let x = x.add(self.attn.apply(p, qk, qk, h)?)?;
        let h = self.norm2.apply(p, x)?;
        Ok(x.add(self.ffn.apply(p, h)?)?)
    }
}

/// Pre-norm decoder layer: query self-attention, cross-attention to memory,
/// feed-forward.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DecoderLayer {
    norm1: Norm,
    self_attn: Attention,
    norm2: Norm,
    cross_attn: Attention,
    norm3: Norm,
    ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new<S: Scalar>(init: &mut Init<S>, name: &str, width: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm1: Norm::new(init, &format!("{name}.norm1"), width)?,
            self_attn: Attention::new(init, &format!("{name}.self_attn"), width, width, width, width, heads)?,
            norm2: Norm::new(init, &format!("{name}.norm2"), width)?,
            cross_attn: Attention::new(init, &format!("{name}.cross_attn"), width, width, width, width, heads)?,
            norm3: Norm::new(init, &format!("{name}.norm3"), width)?,
            ffn: FeedForward::new(init, &format!("{name}.ffn"), width)?,
        })
    }

    pub fn apply<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        q: Var<'t, S>,
        q_pos: Var<'t, S>,
        memory: Var<'t, S>,
        memory_pos: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        let h = self.norm1.apply(p, q)?;
        let hp = h.add(q_pos)?;
        let q = q.add(self.self_attn.apply(p, hp, hp, h)?)?;
        let h = self.norm2.apply(p, q)?.add(q_pos)?;
        let q = q.add(self.cross_attn.apply(p, h, memory.add(memory_pos)?, memory)?)?;
        let h = self.norm3.apply(p, q)?;
        Ok(q.add(self.ffn.apply(p, h)?)?)
    }
}

/// Sine embedding of normalised 2-D points, `n x width` with `width`
/// divisible by 4.
pub(crate) fn sine_embedding<S: Scalar>(points: &[(f64, f64)], width: usize) -> Vec<S> {
    let quarter = width / 4;
    let mut out = Vec::with_capacity(points.len() * width);
    for &(x, y) in points {
        for coord in [x, y] {
            let v = coord * std::f64::consts::TAU;
            for i in 0..quarter {
                let freq = 10000f64.powf(i as f64 / quarter as f64);
                out.push(S::lit((v / freq).sin()));
            }
            for i in 0..quarter {
                let freq = 10000f64.powf(i as f64 / quarter as f64);
                out.push(S::lit((v / freq).cos()));
            }
        }
    }
    out
}

/// Centres of an `h x w` grid in normalised coordinates, row-major.
pub(crate) fn grid_centres(h: usize, w: usize) -> Vec<(f64, f64)> {
    (0..h)
        .flat_map(|y| (0..w).map(move |x| ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64)))
        .collect()
}

/// `1 x C x h x w` feature to `hw x C` tokens.
pub(crate) fn to_tokens<'t, S: Scalar>(x: Var<'t, S>) -> Result<Var<'t, S>> {
    let s = x.shape();
    let (c, hw) = (s[1], s[2] * s[3]);
    Ok(x.reshape([c, hw])?.transpose()?)
}

/// `hw x C` tokens back to `1 x C x h x w`.
pub(crate) fn from_tokens<'t, S: Scalar>(t: Var<'t, S>, h: usize, w: usize) -> Result<Var<'t, S>> {
    let c = t.shape()[1];
    Ok(t.transpose()?.reshape([1, c, h, w])?)
}
