//! Reductions, slicing, concatenation and layout changes.

use std::rc::Rc;

use crate::error::{arg_err, shape_err, Result};
use crate::{Scalar, Var};

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, S: Scalar> Var<'t, S> {
    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'t, S> {
        let total = self.value().iter().copied().sum();
        let id = self.id();
        self.tape().push_op(vec![1], vec![total], &[id], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                slot.iter_mut().for_each(|s| *s += g[0]);
            }
        })
    }

    pub fn mean(self) -> Var<'t, S> {
        let n = S::lit(self.numel() as f64);
        self.sum().scale(S::one() / n)
    }

    /// Sums over `axis`, keeping it with extent 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, S>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return arg_err("sum_axis", format!("axis {axis} out of range for {shape:?}"));
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let xv = self.value();
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let src = &xv[(o * extent + e) * inner..][..inner];
                for (d, s) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *d += *s;
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let id = self.id();
        Ok(self.tape().push_op(out_shape, out, &[id], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for o in 0..outer {
                    for e in 0..extent {
                        let dst = &mut slot[(o * extent + e) * inner..][..inner];
                        for (d, s) in dst.iter_mut().zip(&g[o * inner..][..inner]) {
                            *d += *s;
                        }
                    }
                }
            }
        }))
    }

    /// Maximum over `axis`, keeping it with extent 1. The gradient goes to the
    /// first maximal element.
    pub fn max_axis(self, axis: usize) -> Result<Var<'t, S>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return arg_err("max_axis", format!("axis {axis} out of range for {shape:?}"));
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let xv = self.value();
        let mut out = vec![S::neg_infinity(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                for i in 0..inner {
                    let src = (o * extent + e) * inner + i;
                    let dst = o * inner + i;
                    if xv[src] > out[dst] {
                        out[dst] = xv[src];
                        arg[dst] = src;
                    }
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let id = self.id();
        Ok(self.tape().push_op(out_shape, out, &[id], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for (gi, &src) in g.iter().zip(&arg) {
                    slot[src] += *gi;
                }
            }
        }))
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, S>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return arg_err("narrow", format!("axis {axis} out of range for {shape:?}"));
        }
        if len == 0 || start + len > shape[axis] {
            return shape_err(
                "narrow",
                format!("range {start}..{} exceeds extent {} of axis {axis}", start + len, shape[axis]),
            );
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let xv = self.value();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xv[(o * extent + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let id = self.id();
        Ok(self.tape().push_op(out_shape, out, &[id], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for o in 0..outer {
                    let dst = &mut slot[(o * extent + start) * inner..][..len * inner];
                    for (d, s) in dst.iter_mut().zip(&g[o * len * inner..][..len * inner]) {
                        *d += *s;
                    }
                }
            }
        }))
    }

    /// Gathers entries `indices` along axis 0. Indices may repeat.
    pub fn index_select(self, indices: &[usize]) -> Result<Var<'t, S>> {
        let shape = self.shape();
        if indices.is_empty() {
            return arg_err("index_select", "no indices given");
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[0]) {
            return shape_err(
                "index_select",
                format!("index {bad} out of range for leading extent {}", shape[0]),
            );
        }
        let row: usize = shape[1..].iter().product();
        let xv = self.value();
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            out.extend_from_slice(&xv[i * row..][..row]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        let indices = indices.to_vec();
        let id = self.id();
        Ok(self.tape().push_op(out_shape, out, &[id], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for (k, &i) in indices.iter().enumerate() {
                    let dst = &mut slot[i * row..][..row];
                    for (d, s) in dst.iter_mut().zip(&g[k * row..][..row]) {
                        *d += *s;
                    }
                }
            }
        }))
    }

    /// Transpose of a 2-D variable.
    pub fn transpose(self) -> Result<Var<'t, S>> {
        let shape = self.shape();
        let [rows, cols] = shape[..] else {
            return shape_err("transpose", format!("expected a 2-D input, got {shape:?}"));
        };
        let xv = self.value();
        let mut out = vec![S::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = xv[r * cols + c];
            }
        }
        let id = self.id();
        Ok(self.tape().push_op(vec![cols, rows], out, &[id], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for r in 0..rows {
                    for c in 0..cols {
                        slot[r * cols + c] += g[c * rows + r];
                    }
                }
            }
        }))
    }

    /// Nearest-neighbour 2x upsampling of the two trailing axes.
    pub fn upsample2x(self) -> Result<Var<'t, S>> {
        let shape = self.shape();
        if shape.len() < 2 {
            return shape_err("upsample2x", format!("expected at least 2 axes, got {shape:?}"));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let xv = self.value();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![S::zero(); planes * oh * ow];
        for p in 0..planes {
            for y in 0..oh {
                for x in 0..ow {
                    out[(p * oh + y) * ow + x] = xv[(p * h + y / 2) * w + x / 2];
                }
            }
        }
        let mut out_shape = shape;
        let n = out_shape.len();
        out_shape[n - 2] = oh;
        out_shape[n - 1] = ow;
        let id = self.id();
        Ok(self.tape().push_op(out_shape, out, &[id], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for p in 0..planes {
                    for y in 0..oh {
                        for x in 0..ow {
                            slot[(p * h + y / 2) * w + x / 2] += g[(p * oh + y) * ow + x];
                        }
                    }
                }
            }
        }))
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t, S: Scalar>(parts: &[Var<'t, S>], axis: usize) -> Result<Var<'t, S>> {
    let Some(first) = parts.first() else {
        return arg_err("concat", "nothing to concatenate");
    };
    let base = first.shape();
    if axis >= base.len() {
        return arg_err("concat", format!("axis {axis} out of range for {base:?}"));
    }
    let mut extents = Vec::with_capacity(parts.len());
    for p in parts {
        first.same_tape(*p);
        let s = p.shape();
        let compatible = s.len() == base.len()
            && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return shape_err("concat", format!("{s:?} does not match {base:?} off axis {axis}"));
        }
        extents.push(s[axis]);
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let total: usize = extents.iter().sum();
    let values: Vec<Rc<Vec<S>>> = parts.iter().map(|p| p.value()).collect();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &e) in values.iter().zip(&extents) {
            out.extend_from_slice(&v[o * e * inner..][..e * inner]);
        }
    }
    let mut out_shape = base;
    out_shape[axis] = total;
    let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
    let ids_bw = ids.clone();
    Ok(first.tape().push_op(out_shape, out, &ids, move |g, sink| {
        let mut offset = 0;
        for (&id, &e) in ids_bw.iter().zip(&extents) {
            if let Some(slot) = sink.slot(id) {
                for o in 0..outer {
                    let src = &g[(o * total + offset) * inner..][..e * inner];
                    for (d, s) in slot[o * e * inner..][..e * inner].iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
            offset += e;
        }
    }))
}
