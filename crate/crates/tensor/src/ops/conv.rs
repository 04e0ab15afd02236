use std::rc::Rc;

use crate::error::{arg_err, shape_err, Result};
use crate::{Scalar, Var};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one `C x H x W` image into a `(C*kh*kw) x (out_h*out_w)` matrix.
    fn im2col<S: Scalar>(&self, image: &[S], cols: &mut [S]) {
        let p = self.positions();
        for c in 0..self.channels {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..][..p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        let line = &mut dst[oy * self.out_w..][..self.out_w];
                        if iy < 0 || iy >= self.height as isize {
                            line.fill(S::zero());
                            continue;
                        }
                        let src = &image[(c * self.height + iy as usize) * self.width..][..self.width];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            *d = if ix < 0 || ix >= self.width as isize {
                                S::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters-and-adds columns into an image.
    fn col2im<S: Scalar>(&self, cols: &[S], image: &mut [S]) {
        let p = self.positions();
        for c in 0..self.channels {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..][..p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst = &mut image[(c * self.height + iy as usize) * self.width..][..self.width];
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.width as isize {
                                dst[ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    /// 2-D cross-correlation of an `N x C x H x W` input with an
    /// `O x C x kh x kw` kernel, zero padding on all sides.
    pub fn conv2d(
        self,
        kernel: Var<'t, S>,
        bias: Option<Var<'t, S>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, S>> {
        self.same_tape(kernel);
        if stride == 0 {
            return arg_err("conv2d", "stride must be positive");
        }
        let (xs, ks) = (self.shape(), kernel.shape());
        let (&[n, c, h, w], &[o, kc, kh, kw]) = (&xs[..], &ks[..]) else {
            return shape_err("conv2d", format!("expected NCHW input and OIHW kernel, got {xs:?} and {ks:?}"));
        };
        if c != kc {
            return shape_err("conv2d", format!("input has {c} channels but kernel expects {kc}"));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return shape_err(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * padding, w + 2 * padding),
            );
        }
        if let Some(b) = bias {
            self.same_tape(b);
            if b.shape() != [o] {
                return shape_err("conv2d", format!("bias shape {:?} does not match {o} output channels", b.shape()));
            }
        }
        let geo = Geometry {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let (patch, pos) = (geo.patch(), geo.positions());
        let xv = self.value();
        let wv = kernel.value();
        let bv = bias.map(|b| b.value());
        let mut out = vec![S::zero(); n * o * pos];
        let mut all_cols = Vec::with_capacity(n);
        for b in 0..n {
            let mut cols = vec![S::zero(); patch * pos];
            geo.im2col(&xv[b * c * h * w..][..c * h * w], &mut cols);
            let dst = &mut out[b * o * pos..][..o * pos];
            if let Some(bv) = &bv {
                for (oc, row) in dst.chunks_mut(pos).enumerate() {
                    row.fill(bv[oc]);
                }
            }
            S::gemm(o, patch, pos, S::one(), &wv, (patch as isize, 1), &cols, (pos as isize, 1), S::one(), dst, (pos as isize, 1));
            all_cols.push(cols);
        }
        let all_cols = Rc::new(all_cols);
        let (ix, ik) = (self.id(), kernel.id());
        let ib = bias.map(|b| b.id());
        let mut inputs = vec![ix, ik];
        inputs.extend(ib);
        Ok(self.tape().push_op(vec![n, o, geo.out_h, geo.out_w], out, &inputs, move |g, sink| {
            for b in 0..n {
                let gb = &g[b * o * pos..][..o * pos];
                if let Some(gk) = sink.slot(ik) {
                    S::gemm(o, pos, patch, S::one(), gb, (pos as isize, 1), &all_cols[b], (1, pos as isize), S::one(), gk, (patch as isize, 1));
                }
                if let Some(bias_id) = ib {
                    if let Some(gbias) = sink.slot(bias_id) {
                        for (oc, row) in gb.chunks(pos).enumerate() {
                            gbias[oc] += row.iter().copied().sum::<S>();
                        }
                    }
                }
                if sink.wants(ix) {
                    let mut dcols = vec![S::zero(); patch * pos];
                    S::gemm(patch, o, pos, S::one(), &wv, (1, patch as isize), gb, (pos as isize, 1), S::zero(), &mut dcols, (pos as isize, 1));
                    let gx = sink.slot(ix).unwrap();
                    geo.col2im(&dcols, &mut gx[b * c * h * w..][..c * h * w]);
                }
            }
        }))
    }
}
