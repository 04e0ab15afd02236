//! Elementwise unary and broadcasting binary operators.

use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::{Scalar, Var};

/// Index maps from every output element to the contributing input elements.
struct Broadcast {
    shape: Vec<usize>,
    lhs: Option<Vec<usize>>,
    rhs: Option<Vec<usize>>,
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast {
            shape: a.to_vec(),
            lhs: None,
            rhs: None,
        });
    }
    let ndim = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; ndim - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    let mut shape = Vec::with_capacity(ndim);
    for (i, (&da, &db)) in pa.iter().zip(&pb).enumerate() {
        if da != db && da != 1 && db != 1 {
            return shape_err(op, format!("cannot broadcast {a:?} with {b:?} (axis {i})"));
        }
        shape.push(da.max(db));
    }
    let index_map = |p: &[usize]| -> Option<Vec<usize>> {
        if p == shape.as_slice() {
            return None;
        }
        let mut strides = vec![0usize; ndim];
        let mut acc = 1;
        for d in (0..ndim).rev() {
            strides[d] = if p[d] == 1 { 0 } else { acc };
            acc *= p[d];
        }
        let numel: usize = shape.iter().product();
        let mut out = Vec::with_capacity(numel);
        let mut idx = vec![0usize; ndim];
        let mut flat = 0usize;
        for _ in 0..numel {
            out.push(flat);
            for d in (0..ndim).rev() {
                idx[d] += 1;
                flat += strides[d];
                if idx[d] < shape[d] {
                    break;
                }
                flat -= strides[d] * shape[d];
                idx[d] = 0;
            }
        }
        Some(out)
    };
    let lhs = index_map(&pa);
    let rhs = index_map(&pb);
    Ok(Broadcast { shape, lhs, rhs })
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
            Binary::Min => "minimum",
            Binary::Max => "maximum",
        }
    }

    #[inline]
    fn apply<S: Scalar>(self, a: S, b: S) -> S {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
            Binary::Min => a.min(b),
            Binary::Max => a.max(b),
        }
    }

    /// Partial derivatives with respect to each operand. Ties in min/max
    /// route the gradient to the left operand.
    #[inline]
    fn partials<S: Scalar>(self, a: S, b: S) -> (S, S) {
        let (zero, one) = (S::zero(), S::one());
        match self {
            Binary::Add => (one, one),
            Binary::Sub => (one, -one),
            Binary::Mul => (b, a),
            Binary::Div => (one / b, -a / (b * b)),
            Binary::Min => {
                if a <= b {
                    (one, zero)
                } else {
                    (zero, one)
                }
            }
            Binary::Max => {
                if a >= b {
                    (one, zero)
                } else {
                    (zero, one)
                }
            }
        }
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    fn binary(self, other: Var<'t, S>, op: Binary) -> Result<Var<'t, S>> {
        self.same_tape(other);
        let plan = broadcast(op.name(), &self.shape(), &other.shape())?;
        let av = self.value();
        let bv = other.value();
        let numel: usize = plan.shape.iter().product();
        let ai = |i: usize, m: &Option<Vec<usize>>| m.as_ref().map_or(i, |m| m[i]);
        let out: Vec<S> = match (&plan.lhs, &plan.rhs) {
            (None, None) => av.iter().zip(bv.iter()).map(|(&a, &b)| op.apply(a, b)).collect(),
            _ => (0..numel)
                .map(|i| op.apply(av[ai(i, &plan.lhs)], bv[ai(i, &plan.rhs)]))
                .collect(),
        };
        let (ia, ib) = (self.id(), other.id());
        let lhs = plan.lhs.map(Rc::new);
        let rhs = plan.rhs.map(Rc::new);
        Ok(self.tape().push_op(plan.shape, out, &[ia, ib], move |g, sink| {
            let idx = |i: usize, m: &Option<Rc<Vec<usize>>>| m.as_ref().map_or(i, |m| m[i]);
            if sink.wants(ia) {
                let slot = sink.slot(ia).unwrap();
                for (i, &gi) in g.iter().enumerate() {
                    let (ja, jb) = (idx(i, &lhs), idx(i, &rhs));
                    slot[ja] += gi * op.partials(av[ja], bv[jb]).0;
                }
            }
            if sink.wants(ib) {
                let slot = sink.slot(ib).unwrap();
                for (i, &gi) in g.iter().enumerate() {
                    let (ja, jb) = (idx(i, &lhs), idx(i, &rhs));
                    slot[jb] += gi * op.partials(av[ja], bv[jb]).1;
                }
            }
        }))
    }

    pub fn add(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Binary::Div)
    }

    pub fn minimum(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Binary::Min)
    }

    pub fn maximum(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Binary::Max)
    }

    /// `y = f(x)` with `dy/dx = df(x, y)`.
    fn unary(self, f: impl Fn(S) -> S, df: impl Fn(S, S) -> S + 'static) -> Var<'t, S> {
        let xv = self.value();
        let out: Vec<S> = xv.iter().map(|&x| f(x)).collect();
        let yv = Rc::new(out.clone());
        let id = self.id();
        self.tape().push_op(self.shape(), out, &[id], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for i in 0..g.len() {
                    slot[i] += g[i] * df(xv[i], yv[i]);
                }
            }
        })
    }

    pub fn neg(self) -> Var<'t, S> {
        self.unary(|x| -x, |_, _| -S::one())
    }

    pub fn scale(self, c: S) -> Var<'t, S> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: S) -> Var<'t, S> {
        self.unary(move |x| x + c, |_, _| S::one())
    }

    pub fn exp(self) -> Var<'t, S> {
        self.unary(S::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t, S> {
        self.unary(S::ln, |x, _| S::one() / x)
    }

    pub fn sqrt(self) -> Var<'t, S> {
        self.unary(S::sqrt, |_, y| S::lit(0.5) / y)
    }

    pub fn abs(self) -> Var<'t, S> {
        self.unary(S::abs, |x, _| {
            if x > S::zero() {
                S::one()
            } else if x < S::zero() {
                -S::one()
            } else {
                S::zero()
            }
        })
    }

    pub fn square(self) -> Var<'t, S> {
        self.unary(|x| x * x, |x, _| S::lit(2.0) * x)
    }

    pub fn relu(self) -> Var<'t, S> {
        self.unary(
            |x| x.max(S::zero()),
            |x, _| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    pub fn sigmoid(self) -> Var<'t, S> {
        self.unary(sigmoid, |_, y| y * (S::one() - y))
    }

    pub fn tanh(self) -> Var<'t, S> {
        self.unary(S::tanh, |_, y| S::one() - y * y)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(self) -> Var<'t, S> {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (S::one() + x * (S::one() - s))
            },
        )
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(self, lo: S, hi: S) -> Var<'t, S> {
        self.unary(
            move |x| x.max(lo).min(hi),
            move |x, _| {
                if x < lo || x > hi {
                    S::zero()
                } else {
                    S::one()
                }
            },
        )
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Inverse of [`sigmoid`] for `p` in `(0, 1)`.
#[inline]
pub fn logit<S: Scalar>(p: S) -> S {
    (p / (S::one() - p)).ln()
}
