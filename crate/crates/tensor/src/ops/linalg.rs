use crate::error::{shape_err, Result};
use crate::{Scalar, Var};

impl<'t, S: Scalar> Var<'t, S> {
    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(self, rhs: Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_tape(rhs);
        let (ls, rs) = (self.shape(), rhs.shape());
        let (&[m, k], &[k2, n]) = (&ls[..], &rs[..]) else {
            return shape_err("matmul", format!("expected 2-D operands, got {ls:?} and {rs:?}"));
        };
        if k != k2 {
            return shape_err("matmul", format!("inner extents differ: {ls:?} x {rs:?}"));
        }
        let (av, bv) = (self.value(), rhs.value());
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, S::one(), &av, (k as isize, 1), &bv, (n as isize, 1), S::zero(), &mut out, (n as isize, 1));
        let (ia, ib) = (self.id(), rhs.id());
        Ok(self.tape().push_op(vec![m, n], out, &[ia, ib], move |g, sink| {
            if let Some(ga) = sink.slot(ia) {
                // dA = G * B^T
                S::gemm(m, n, k, S::one(), g, (n as isize, 1), &bv, (1, n as isize), S::one(), ga, (k as isize, 1));
            }
            if let Some(gb) = sink.slot(ib) {
                // dB = A^T * G
                S::gemm(k, m, n, S::one(), &av, (1, k as isize), g, (n as isize, 1), S::one(), gb, (n as isize, 1));
            }
        }))
    }
}
