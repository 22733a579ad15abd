//! Truncated spectral convolution written as explicit DFT matrix products.
//!
//! Retained modes are `kx ∈ [0, m)` and `ky ∈ [0, m) ∪ [H−m, H)`; the
//! inverse treats the truncated half-spectrum as Hermitian, so the layer
//! maps real fields to real fields. Spectral weights are stored as
//! `[2, I, O, 2m, m]` (real part, then imaginary part).

use std::sync::Arc;

use super::ops::{gelu, gelu_grad, pointwise_backward, pointwise_forward};
use super::{Graph, Tensor, Var};
use crate::scalar::{matmul, Scalar};

#[derive(Debug)]
pub struct SpectralConvPlan<T> {
    h: usize,
    w: usize,
    m: usize,
    /// `[W, m]` forward x-transform.
    cx: Vec<T>,
    sx: Vec<T>,
    /// `[m, W]` inverse x-transform including Hermitian weights and 1/(HW).
    cxi: Vec<T>,
    sxi: Vec<T>,
    /// `[2m, H]` y-transform.
    cy: Vec<T>,
    sy: Vec<T>,
}

impl<T: Scalar> SpectralConvPlan<T> {
    /// Plan for `h × w` grids keeping `m` modes per axis. Needs `2m ≤ h` and `m ≤ w/2`.
    pub fn new(h: usize, w: usize, m: usize) -> crate::Result<Self> {
        if m == 0 || 2 * m > h || 2 * m > w {
            return Err(crate::Error::Invalid(format!("{m} retained modes do not fit a {h}x{w} grid")));
        }
        let tau = 2.0 * std::f64::consts::PI;
        let r = 2 * m;
        let t = T::from_f64_lossy;
        let mut cx = vec![T::zero(); w * m];
        let mut sx = vec![T::zero(); w * m];
        let mut cxi = vec![T::zero(); m * w];
        let mut sxi = vec![T::zero(); m * w];
        let norm = 1.0 / (h * w) as f64;
        for x in 0..w {
            for k in 0..m {
                let a = tau * (k * x) as f64 / w as f64;
                cx[x * m + k] = t(a.cos());
                sx[x * m + k] = t(a.sin());
                let herm = if k == 0 || 2 * k == w { 1.0 } else { 2.0 };
                cxi[k * w + x] = t(herm * norm * a.cos());
                sxi[k * w + x] = t(herm * norm * a.sin());
            }
        }
        let mut cy = vec![T::zero(); r * h];
        let mut sy = vec![T::zero(); r * h];
        for (ri, ky) in (0..m).chain(h - m..h).enumerate() {
            for y in 0..h {
                let a = tau * ((ky * y) % h) as f64 / h as f64;
                cy[ri * h + y] = t(a.cos());
                sy[ri * h + y] = t(a.sin());
            }
        }
        Ok(SpectralConvPlan { h, w, m, cx, sx, cxi, sxi, cy, sy })
    }

    pub fn modes(&self) -> usize {
        self.m
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn spec_len(&self) -> usize {
        2 * self.m * self.m
    }

    /// Truncated forward DFT of `nf` frames, returning `(re, im)` each `[nf, 2m, m]`.
    fn forward(&self, x: &[T], nf: usize) -> (Vec<T>, Vec<T>) {
        let (h, w, m) = (self.h, self.w, self.m);
        let one = T::one();
        let mut ar = vec![T::zero(); nf * h * m];
        let mut ai = vec![T::zero(); nf * h * m];
        matmul(nf * h, w, m, one, x, false, &self.cx, false, T::zero(), &mut ar);
        matmul(nf * h, w, m, -one, x, false, &self.sx, false, T::zero(), &mut ai);
        let sl = self.spec_len();
        let mut xr = vec![T::zero(); nf * sl];
        let mut xi = vec![T::zero(); nf * sl];
        let r = 2 * m;
        for f in 0..nf {
            let (a_r, a_i) = (&ar[f * h * m..(f + 1) * h * m], &ai[f * h * m..(f + 1) * h * m]);
            let (o_r, o_i) = (&mut xr[f * sl..(f + 1) * sl], &mut xi[f * sl..(f + 1) * sl]);
            matmul(r, h, m, one, &self.cy, false, a_r, false, T::zero(), o_r);
            matmul(r, h, m, one, &self.sy, false, a_i, false, one, o_r);
            matmul(r, h, m, one, &self.cy, false, a_i, false, T::zero(), o_i);
            matmul(r, h, m, -one, &self.sy, false, a_r, false, one, o_i);
        }
        (xr, xi)
    }

    /// Adjoint of [`Self::forward`], accumulated into `dx`.
    fn forward_adjoint(&self, dxr: &[T], dxi: &[T], nf: usize, dx: &mut [T]) {
        let (h, w, m) = (self.h, self.w, self.m);
        let one = T::one();
        let r = 2 * m;
        let sl = self.spec_len();
        let mut dar = vec![T::zero(); nf * h * m];
        let mut dai = vec![T::zero(); nf * h * m];
        for f in 0..nf {
            let (g_r, g_i) = (&dxr[f * sl..(f + 1) * sl], &dxi[f * sl..(f + 1) * sl]);
            let (o_r, o_i) = (&mut dar[f * h * m..(f + 1) * h * m], &mut dai[f * h * m..(f + 1) * h * m]);
            matmul(h, r, m, one, &self.cy, true, g_r, false, T::zero(), o_r);
            matmul(h, r, m, -one, &self.sy, true, g_i, false, one, o_r);
            matmul(h, r, m, one, &self.sy, true, g_r, false, T::zero(), o_i);
            matmul(h, r, m, one, &self.cy, true, g_i, false, one, o_i);
        }
        matmul(nf * h, m, w, one, &dar, false, &self.cx, true, one, dx);
        matmul(nf * h, m, w, -one, &dai, false, &self.sx, true, one, dx);
    }

    /// Real field `[nf, H, W]` from a truncated spectrum.
    fn inverse(&self, yr: &[T], yi: &[T], nf: usize, out: &mut [T]) {
        let (h, w, m) = (self.h, self.w, self.m);
        let one = T::one();
        let r = 2 * m;
        let sl = self.spec_len();
        let mut br = vec![T::zero(); nf * h * m];
        let mut bi = vec![T::zero(); nf * h * m];
        for f in 0..nf {
            let (y_r, y_i) = (&yr[f * sl..(f + 1) * sl], &yi[f * sl..(f + 1) * sl]);
            let (o_r, o_i) = (&mut br[f * h * m..(f + 1) * h * m], &mut bi[f * h * m..(f + 1) * h * m]);
            matmul(h, r, m, one, &self.cy, true, y_r, false, T::zero(), o_r);
            matmul(h, r, m, -one, &self.sy, true, y_i, false, one, o_r);
            matmul(h, r, m, one, &self.cy, true, y_i, false, T::zero(), o_i);
            matmul(h, r, m, one, &self.sy, true, y_r, false, one, o_i);
        }
        matmul(nf * h, m, w, one, &br, false, &self.cxi, false, T::zero(), out);
        matmul(nf * h, m, w, -one, &bi, false, &self.sxi, false, one, out);
    }

    /// Adjoint of [`Self::inverse`].
    fn inverse_adjoint(&self, d_out: &[T], nf: usize) -> (Vec<T>, Vec<T>) {
        let (h, w, m) = (self.h, self.w, self.m);
        let one = T::one();
        let r = 2 * m;
        let sl = self.spec_len();
        let mut dbr = vec![T::zero(); nf * h * m];
        let mut dbi = vec![T::zero(); nf * h * m];
        matmul(nf * h, w, m, one, d_out, false, &self.cxi, true, T::zero(), &mut dbr);
        matmul(nf * h, w, m, -one, d_out, false, &self.sxi, true, T::zero(), &mut dbi);
        let mut dyr = vec![T::zero(); nf * sl];
        let mut dyi = vec![T::zero(); nf * sl];
        for f in 0..nf {
            let (g_r, g_i) = (&dbr[f * h * m..(f + 1) * h * m], &dbi[f * h * m..(f + 1) * h * m]);
            let (o_r, o_i) = (&mut dyr[f * sl..(f + 1) * sl], &mut dyi[f * sl..(f + 1) * sl]);
            matmul(r, h, m, one, &self.cy, false, g_r, false, T::zero(), o_r);
            matmul(r, h, m, one, &self.sy, false, g_i, false, one, o_r);
            matmul(r, h, m, -one, &self.sy, false, g_r, false, T::zero(), o_i);
            matmul(r, h, m, one, &self.cy, false, g_i, false, one, o_i);
        }
        (dyr, dyi)
    }
}

/// Complex per-mode channel mixing `Y[b,o] = Σ_i X[b,i] W[i,o]`.
fn mix<T: Scalar>(xr: &[T], xi: &[T], wt: &[T], b: usize, ci: usize, co: usize, sl: usize) -> (Vec<T>, Vec<T>) {
    let half = ci * co * sl;
    let (wr, wi) = wt.split_at(half);
    let mut yr = vec![T::zero(); b * co * sl];
    let mut yi = vec![T::zero(); b * co * sl];
    for bi in 0..b {
        for i in 0..ci {
            let xr_ = &xr[(bi * ci + i) * sl..(bi * ci + i + 1) * sl];
            let xi_ = &xi[(bi * ci + i) * sl..(bi * ci + i + 1) * sl];
            for o in 0..co {
                let wr_ = &wr[(i * co + o) * sl..(i * co + o + 1) * sl];
                let wi_ = &wi[(i * co + o) * sl..(i * co + o + 1) * sl];
                let yr_ = &mut yr[(bi * co + o) * sl..(bi * co + o + 1) * sl];
                for k in 0..sl {
                    yr_[k] += xr_[k] * wr_[k] - xi_[k] * wi_[k];
                }
                let yi_ = &mut yi[(bi * co + o) * sl..(bi * co + o + 1) * sl];
                for k in 0..sl {
                    yi_[k] += xr_[k] * wi_[k] + xi_[k] * wr_[k];
                }
            }
        }
    }
    (yr, yi)
}

impl<T: Scalar> Graph<T> {
    /// One FNO block: `gelu(K(x) + W x + b)` with `K` the truncated spectral
    /// convolution. `x: [B, I, H, W]`, `spec: [2, I, O, 2m, m]`, `w: [O, I]`, `b: [O]`.
    pub fn fno_layer(&mut self, x: Var, spec: Var, w: Var, b: Var, plan: Arc<SpectralConvPlan<T>>) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4, "fno_layer input must be [B, I, H, W]");
        let (bsz, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        assert_eq!((h, wd), (plan.h, plan.w), "fno_layer grid vs plan");
        let m = plan.m;
        let sl = plan.spec_len();
        let ss = self.shape(spec).to_vec();
        assert_eq!(ss.len(), 5, "spectral weight must be [2, I, O, 2m, m]");
        assert_eq!((ss[0], ss[1], ss[3], ss[4]), (2, ci, 2 * m, m), "spectral weight shape {ss:?}");
        let co = ss[2];
        assert_eq!(self.shape(w), &[co, ci], "bypass weight shape");
        assert_eq!(self.shape(b), &[co], "bias shape");
        let hw = h * wd;

        let xv = &self.value(x).data;
        let (xr, xi) = plan.forward(xv, bsz * ci);
        let (yr, yi) = mix(&xr, &xi, &self.value(spec).data, bsz, ci, co, sl);
        let mut z = vec![T::zero(); bsz * co * hw];
        plan.inverse(&yr, &yi, bsz * co, &mut z);
        let mut bypass = vec![T::zero(); bsz * co * hw];
        pointwise_forward(xv, &self.value(w).data, &self.value(b).data, bsz, ci, co, hw, &mut bypass);
        z.iter_mut().zip(&bypass).for_each(|(a, v)| *a += *v);
        drop(bypass);
        let out: Vec<T> = z.iter().map(|v| gelu(*v)).collect();

        let needs_x = self.needs_grad(x);
        let saved_spec = if needs_x || self.needs_grad(spec) { Some((xr, xi)) } else { None };
        self.op(Tensor::new(vec![bsz, co, h, wd], out), &[x, spec, w, b], move |ctx, sink| {
            let dz: Vec<T> = z.iter().zip(ctx.grad).map(|(zv, g)| *g * gelu_grad(*zv)).collect();
            let (xv, sv, wv) = (&ctx.inputs[0].data, &ctx.inputs[1].data, &ctx.inputs[2].data);
            pointwise_backward(xv, wv, &dz, bsz, ci, co, hw, None, sink.grad(2), None);
            pointwise_backward(xv, wv, &dz, bsz, ci, co, hw, None, None, sink.grad(3));
            if !sink.wants(0) && !sink.wants(1) {
                return;
            }
            let (dyr, dyi) = plan.inverse_adjoint(&dz, bsz * co);
            let (xr, xi) = saved_spec.as_ref().expect("spectrum saved when gradients are needed");
            if let Some(g) = sink.grad(1) {
                let half = ci * co * sl;
                let (gr, gi) = g.split_at_mut(half);
                for bi in 0..bsz {
                    for i in 0..ci {
                        let xr_ = &xr[(bi * ci + i) * sl..(bi * ci + i + 1) * sl];
                        let xi_ = &xi[(bi * ci + i) * sl..(bi * ci + i + 1) * sl];
                        for o in 0..co {
                            let dr = &dyr[(bi * co + o) * sl..(bi * co + o + 1) * sl];
                            let di = &dyi[(bi * co + o) * sl..(bi * co + o + 1) * sl];
                            let off = (i * co + o) * sl;
                            for k in 0..sl {
                                gr[off + k] += dr[k] * xr_[k] + di[k] * xi_[k];
                                gi[off + k] += di[k] * xr_[k] - dr[k] * xi_[k];
                            }
                        }
                    }
                }
            }
            if let Some(g) = sink.grad(0) {
                pointwise_backward(xv, wv, &dz, bsz, ci, co, hw, Some(&mut *g), None, None);
                let half = ci * co * sl;
                let (wr, wi) = sv.split_at(half);
                let mut dxr = vec![T::zero(); bsz * ci * sl];
                let mut dxi = vec![T::zero(); bsz * ci * sl];
                for bi in 0..bsz {
                    for i in 0..ci {
                        let (or_, oi_) = (
                            &mut dxr[(bi * ci + i) * sl..(bi * ci + i + 1) * sl],
                            &mut dxi[(bi * ci + i) * sl..(bi * ci + i + 1) * sl],
                        );
                        for o in 0..co {
                            let dr = &dyr[(bi * co + o) * sl..(bi * co + o + 1) * sl];
                            let di = &dyi[(bi * co + o) * sl..(bi * co + o + 1) * sl];
                            let wr_ = &wr[(i * co + o) * sl..(i * co + o + 1) * sl];
                            let wi_ = &wi[(i * co + o) * sl..(i * co + o + 1) * sl];
                            for k in 0..sl {
                                or_[k] += dr[k] * wr_[k] + di[k] * wi_[k];
                                oi_[k] += di[k] * wr_[k] - dr[k] * wi_[k];
                            }
                        }
                    }
                }
                plan.forward_adjoint(&dxr, &dxi, bsz * ci, g);
            }
        })
    }
}
