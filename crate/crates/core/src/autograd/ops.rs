use std::sync::Arc;

use super::{Graph, Tensor, Var};
use crate::scalar::{matmul, Scalar};
use crate::spectral::DerivativeOperator;

const GELU_C: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// GELU, tanh approximation.
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(SQRT_2_OVER_PI);
    let a = T::from_f64_lossy(GELU_C);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(SQRT_2_OVER_PI);
    let a = T::from_f64_lossy(GELU_C);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// How a mask row gates the derivative channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskGate {
    /// `sigmoid(logits / τ)`.
    Soft,
    /// `1[sigmoid(logits / τ) ≥ 0.5]`, no gradient.
    Hard,
    /// Hard in the forward pass, soft gradient in the backward pass.
    StraightThrough,
}

/// Pointwise linear map on `[B, I, HW]` → `[B, O, HW]`.
pub(crate) fn pointwise_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], bsz: usize, i: usize, o: usize, hw: usize, out: &mut [T]) {
    for bi in 0..bsz {
        let ob = &mut out[bi * o * hw..(bi + 1) * o * hw];
        for (oc, row) in ob.chunks_mut(hw).enumerate() {
            row.iter_mut().for_each(|v| *v = b[oc]);
        }
        matmul(o, i, hw, T::one(), w, false, &x[bi * i * hw..(bi + 1) * i * hw], false, T::one(), ob);
    }
}

/// Adds the pointwise-linear gradients for upstream `dz: [B, O, HW]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pointwise_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dz: &[T],
    bsz: usize,
    i: usize,
    o: usize,
    hw: usize,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(dw) = dw {
        for bi in 0..bsz {
            matmul(o, hw, i, T::one(), &dz[bi * o * hw..], false, &x[bi * i * hw..(bi + 1) * i * hw], true, T::one(), dw);
        }
    }
    if let Some(db) = db {
        for bi in 0..bsz {
            for oc in 0..o {
                db[oc] += dz[(bi * o + oc) * hw..(bi * o + oc + 1) * hw].iter().copied().sum::<T>();
            }
        }
    }
    if let Some(dx) = dx {
        for bi in 0..bsz {
            matmul(i, o, hw, T::one(), w, true, &dz[bi * o * hw..(bi + 1) * o * hw], false, T::one(), &mut dx[bi * i * hw..(bi + 1) * i * hw]);
        }
    }
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected [B, C, H, W], got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

impl<T: Scalar> Graph<T> {
    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let v = self.value(a);
        let out = Tensor::new(v.shape.clone(), v.data.iter().map(|x| f(*x)).collect());
        self.op(out, &[a], move |ctx, sink| {
            if let Some(g) = sink.grad(0) {
                for ((gi, x), (y, go)) in g.iter_mut().zip(&ctx.inputs[0].data).zip(ctx.output.data.iter().zip(ctx.grad)) {
                    *gi += *go * df(*x, *y);
                }
            }
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor::new(va.shape.clone(), va.data.iter().zip(&vb.data).map(|(x, y)| *x + *y).collect());
        self.op(out, &[a, b], |ctx, sink| {
            for j in 0..2 {
                if let Some(g) = sink.grad(j) {
                    g.iter_mut().zip(ctx.grad).for_each(|(gi, go)| *gi += *go);
                }
            }
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor::new(va.shape.clone(), va.data.iter().zip(&vb.data).map(|(x, y)| *x - *y).collect());
        self.op(out, &[a, b], |ctx, sink| {
            if let Some(g) = sink.grad(0) {
                g.iter_mut().zip(ctx.grad).for_each(|(gi, go)| *gi += *go);
            }
            if let Some(g) = sink.grad(1) {
                g.iter_mut().zip(ctx.grad).for_each(|(gi, go)| *gi -= *go);
            }
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor::new(va.shape.clone(), va.data.iter().zip(&vb.data).map(|(x, y)| *x * *y).collect());
        self.op(out, &[a, b], |ctx, sink| {
            for j in 0..2 {
                let other = &ctx.inputs[1 - j].data;
                if let Some(g) = sink.grad(j) {
                    for ((gi, go), o) in g.iter_mut().zip(ctx.grad).zip(other) {
                        *gi += *go * *o;
                    }
                }
            }
        })
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, move |_, _| s)
    }

    /// Sum of same-shaped tensors.
    pub fn sum_of(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "sum of nothing");
        let shape = self.shape(parts[0]).to_vec();
        let mut acc = vec![T::zero(); self.value(parts[0]).len()];
        for p in parts {
            assert_eq!(self.shape(*p), shape.as_slice(), "sum_of shape mismatch");
            acc.iter_mut().zip(&self.value(*p).data).for_each(|(a, v)| *a += *v);
        }
        let n = parts.len();
        self.op(Tensor::new(shape, acc), parts, move |ctx, sink| {
            for j in 0..n {
                if let Some(g) = sink.grad(j) {
                    g.iter_mut().zip(ctx.grad).for_each(|(gi, go)| *gi += *go);
                }
            }
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, |x, _| gelu_grad(x))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data.iter().copied().sum();
        self.op(Tensor::scalar(s), &[a], |ctx, sink| {
            let go = ctx.grad[0];
            if let Some(g) = sink.grad(0) {
                g.iter_mut().for_each(|gi| *gi += go);
            }
        })
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, T::one() / T::from_f64_lossy(n as f64))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let v = self.value(a);
        let out = Tensor::new(shape, v.data.clone());
        self.op(out, &[a], |ctx, sink| {
            if let Some(g) = sink.grad(0) {
                g.iter_mut().zip(ctx.grad).for_each(|(gi, go)| *gi += *go);
            }
        })
    }

    /// Row `i` of a `[K, N]` tensor.
    pub fn select_row(&mut self, a: Var, i: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.shape.len(), 2, "select_row on {:?}", v.shape);
        let n = v.shape[1];
        let out = Tensor::new(vec![n], v.data[i * n..(i + 1) * n].to_vec());
        self.op(out, &[a], move |ctx, sink| {
            if let Some(g) = sink.grad(0) {
                g[i * n..(i + 1) * n].iter_mut().zip(ctx.grad).for_each(|(gi, go)| *gi += *go);
            }
        })
    }

    /// Hard threshold at 0.5 in the forward pass, identity gradient.
    pub fn straight_through(&mut self, a: Var) -> Var {
        let half = T::from_f64_lossy(0.5);
        self.unary(a, move |x| if x >= half { T::one() } else { T::zero() }, |_, _| T::one())
    }

    /// Concatenates 1-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let lens: Vec<usize> = parts.iter().map(|p| self.value(*p).len()).collect();
        let data: Vec<T> = parts.iter().flat_map(|p| self.value(*p).data.iter().copied()).collect();
        let n = data.len();
        self.op(Tensor::new(vec![n], data), parts, move |ctx, sink| {
            let mut off = 0;
            for (j, l) in lens.iter().enumerate() {
                if let Some(g) = sink.grad(j) {
                    g.iter_mut().zip(&ctx.grad[off..off + l]).for_each(|(gi, go)| *gi += *go);
                }
                off += l;
            }
        })
    }

    /// Concatenates `[B, C_j, H, W]` tensors along channels.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let (b, _, h, w) = dims4(self.shape(parts[0]));
        let hw = h * w;
        let chans: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pb, pc, ph, pw) = dims4(self.shape(*p));
                assert_eq!((pb, ph, pw), (b, h, w), "concat_channels shape mismatch");
                pc
            })
            .collect();
        let total: usize = chans.iter().sum();
        let mut data = Vec::with_capacity(b * total * hw);
        for bi in 0..b {
            for (p, c) in parts.iter().zip(&chans) {
                data.extend_from_slice(&self.value(*p).data[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        self.op(Tensor::new(vec![b, total, h, w], data), parts, move |ctx, sink| {
            let mut off = 0;
            for (j, c) in chans.iter().enumerate() {
                if let Some(g) = sink.grad(j) {
                    for bi in 0..b {
                        let src = &ctx.grad[(bi * total + off) * hw..(bi * total + off + c) * hw];
                        g[bi * c * hw..(bi + 1) * c * hw].iter_mut().zip(src).for_each(|(gi, go)| *gi += *go);
                    }
                }
                off += c;
            }
        })
    }

    /// Channels `lo..hi` of a `[B, C, H, W]` tensor.
    pub fn slice_channels(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let (b, c, h, w) = dims4(self.shape(a));
        assert!(lo < hi && hi <= c, "slice {lo}..{hi} of {c} channels");
        let hw = h * w;
        let n = hi - lo;
        let v = &self.value(a).data;
        let mut data = Vec::with_capacity(b * n * hw);
        for bi in 0..b {
            data.extend_from_slice(&v[(bi * c + lo) * hw..(bi * c + hi) * hw]);
        }
        self.op(Tensor::new(vec![b, n, h, w], data), &[a], move |ctx, sink| {
            if let Some(g) = sink.grad(0) {
                for bi in 0..b {
                    g[(bi * c + lo) * hw..(bi * c + hi) * hw]
                        .iter_mut()
                        .zip(&ctx.grad[bi * n * hw..(bi + 1) * n * hw])
                        .for_each(|(gi, go)| *gi += *go);
                }
            }
        })
    }

    /// `x[b, c, :, :] · m[c]` for `x: [B, N, H, W]`, `m: [N]`.
    pub fn scale_channels(&mut self, x: Var, m: Var) -> Var {
        let (b, c, h, w) = dims4(self.shape(x));
        assert_eq!(self.shape(m), &[c], "mask length vs channels");
        let hw = h * w;
        let (vx, vm) = (&self.value(x).data, &self.value(m).data);
        let mut data = vec![T::zero(); vx.len()];
        for bi in 0..b {
            for ci in 0..c {
                let r = (bi * c + ci) * hw..(bi * c + ci + 1) * hw;
                data[r.clone()].iter_mut().zip(&vx[r]).for_each(|(o, v)| *o = *v * vm[ci]);
            }
        }
        self.op(Tensor::new(vec![b, c, h, w], data), &[x, m], move |ctx, sink| {
            let (vx, vm) = (&ctx.inputs[0].data, &ctx.inputs[1].data);
            if let Some(g) = sink.grad(0) {
                for bi in 0..b {
                    for ci in 0..c {
                        let r = (bi * c + ci) * hw..(bi * c + ci + 1) * hw;
                        g[r.clone()].iter_mut().zip(&ctx.grad[r]).for_each(|(gi, go)| *gi += *go * vm[ci]);
                    }
                }
            }
            if let Some(g) = sink.grad(1) {
                for bi in 0..b {
                    for ci in 0..c {
                        let r = (bi * c + ci) * hw..(bi * c + ci + 1) * hw;
                        g[ci] += ctx.grad[r.clone()].iter().zip(&vx[r]).map(|(go, v)| *go * *v).sum::<T>();
                    }
                }
            }
        })
    }

    /// Broadcasts `[B, P]` to `[B, P, H, W]`.
    pub fn broadcast_grid(&mut self, a: Var, h: usize, w: usize) -> Var {
        let s = self.shape(a).to_vec();
        assert_eq!(s.len(), 2, "broadcast_grid on {s:?}");
        let (b, p) = (s[0], s[1]);
        let hw = h * w;
        let v = &self.value(a).data;
        let data: Vec<T> = v.iter().flat_map(|x| std::iter::repeat_n(*x, hw)).collect();
        self.op(Tensor::new(vec![b, p, h, w], data), &[a], move |ctx, sink| {
            if let Some(g) = sink.grad(0) {
                for (k, gi) in g.iter_mut().enumerate() {
                    *gi += ctx.grad[k * hw..(k + 1) * hw].iter().copied().sum::<T>();
                }
            }
        })
    }

    /// `y[b, o] = Σ_i w[o, i] x[b, i] + bias[o]` at every grid point.
    pub fn pointwise_linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (bsz, i, h, wd) = dims4(self.shape(x));
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 2, "weight must be [O, I]");
        assert_eq!(ws[1], i, "pointwise_linear: weight expects {} inputs, got {i}", ws[1]);
        let o = ws[0];
        assert_eq!(self.shape(b), &[o], "bias length");
        let hw = h * wd;
        let mut out = vec![T::zero(); bsz * o * hw];
        pointwise_forward(&self.value(x).data, &self.value(w).data, &self.value(b).data, bsz, i, o, hw, &mut out);
        self.op(Tensor::new(vec![bsz, o, h, wd], out), &[x, w, b], move |ctx, sink| {
            let (xv, wv) = (&ctx.inputs[0].data, &ctx.inputs[1].data);
            let dz = ctx.grad;
            pointwise_backward(xv, wv, dz, bsz, i, o, hw, sink.grad(0), None, None);
            pointwise_backward(xv, wv, dz, bsz, i, o, hw, None, sink.grad(1), None);
            pointwise_backward(xv, wv, dz, bsz, i, o, hw, None, None, sink.grad(2));
        })
    }

    /// Spectral derivative stack of a `[B, C, H, W]` state, `[B, 5C, H, W]`.
    pub fn derivative_stack(&mut self, u: Var, op: Arc<DerivativeOperator<T>>) -> Var {
        let (b, c, h, w) = dims4(self.shape(u));
        let frame = c * h * w;
        let s = crate::spectral::NUM_DERIVATIVE_KINDS;
        let mut out = vec![T::zero(); b * s * frame];
        {
            let v = &self.value(u).data;
            for bi in 0..b {
                op.stack_into(&v[bi * frame..(bi + 1) * frame], c, &mut out[bi * s * frame..(bi + 1) * s * frame]);
            }
        }
        self.op(Tensor::new(vec![b, s * c, h, w], out), &[u], move |ctx, sink| {
            if let Some(g) = sink.grad(0) {
                for bi in 0..b {
                    op.stack_adjoint_into(&ctx.grad[bi * s * frame..(bi + 1) * s * frame], c, &mut g[bi * frame..(bi + 1) * frame]);
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: impl Fn(&mut Graph<f64>, Var) -> Var, x0: &[f64], shape: Vec<usize>) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(shape.clone(), x0.to_vec()));
        let y = f(&mut g, x);
        let analytic = g.backward(y).get(x).unwrap().to_vec();
        let eps = 1e-6;
        let numeric = (0..x0.len())
            .map(|k| {
                let eval = |d: f64| {
                    let mut v = x0.to_vec();
                    v[k] += d;
                    let mut g = Graph::new();
                    let x = g.constant(Tensor::new(shape.clone(), v));
                    let y = f(&mut g, x);
                    g.value(y).item()
                };
                (eval(eps) - eval(-eps)) / (2.0 * eps)
            })
            .collect();
        (analytic, numeric)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    fn seq(n: usize) -> Vec<f64> {
        (0..n).map(|k| ((k * 37 % 11) as f64 - 5.0) * 0.13).collect()
    }

    #[test]
    fn gelu_matches_reference_values() {
        assert!((gelu(1.0f64) - 0.841_191_990_607_459_1).abs() < 1e-12);
        assert_eq!(gelu(0.0f64), 0.0);
        let (a, n) = numeric_grad(|g, x| { let y = g.gelu(x); g.sum_all(y) }, &seq(7), vec![7]);
        close(&a, &n, 1e-8);
    }

    #[test]
    fn pointwise_linear_gradients() {
        let (b, i, o, h, w) = (2, 3, 4, 2, 3);
        let xv = seq(b * i * h * w);
        let wv = seq(o * i);
        let bv = seq(o);
        let probe: Vec<f64> = (0..b * o * h * w).map(|k| (k as f64 * 0.7).sin()).collect();
        let loss = |g: &mut Graph<f64>, x: Var, wv: &[f64], bv: &[f64], probe: &[f64]| {
            let wt = g.constant(Tensor::new(vec![o, i], wv.to_vec()));
            let bt = g.constant(Tensor::new(vec![o], bv.to_vec()));
            let y = g.pointwise_linear(x, wt, bt);
            let p = g.constant(Tensor::new(vec![b, o, h, w], probe.to_vec()));
            let z = g.mul(y, p);
            g.sum_all(z)
        };
        let (a, n) = numeric_grad(|g, x| loss(g, x, &wv, &bv, &probe), &xv, vec![b, i, h, w]);
        close(&a, &n, 1e-8);
        // Weight and bias gradients.
        let (a, n) = numeric_grad(
            |g, wt| {
                let x = g.constant(Tensor::new(vec![b, i, h, w], xv.clone()));
                let bt = g.param(Tensor::new(vec![o], bv.clone()));
                let y = g.pointwise_linear(x, wt, bt);
                let p = g.constant(Tensor::new(vec![b, o, h, w], probe.clone()));
                let z = g.mul(y, p);
                g.sum_all(z)
            },
            &wv,
            vec![o, i],
        );
        close(&a, &n, 1e-8);
        let (a, n) = numeric_grad(
            |g, bt| {
                let x = g.constant(Tensor::new(vec![b, i, h, w], xv.clone()));
                let wt = g.constant(Tensor::new(vec![o, i], wv.clone()));
                let y = g.pointwise_linear(x, wt, bt);
                let p = g.constant(Tensor::new(vec![b, o, h, w], probe.clone()));
                let z = g.mul(y, p);
                g.sum_all(z)
            },
            &bv,
            vec![o],
        );
        close(&a, &n, 1e-8);
    }

    #[test]
    fn channel_ops_gradients() {
        let (b, c, h, w) = (2, 3, 2, 2);
        let probe: Vec<f64> = (0..200).map(|k| (k as f64 * 0.3).cos()).collect();
        let (a, n) = numeric_grad(
            |g, x| {
                let s = g.slice_channels(x, 1, 3);
                let cat = g.concat_channels(&[x, s]);
                let m = g.constant(Tensor::new(vec![5], vec![0.5, -1.0, 2.0, 0.0, 1.5]));
                let y = g.scale_channels(cat, m);
                let p = g.constant(Tensor::new(vec![b, 5, h, w], probe[..b * 5 * h * w].to_vec()));
                let z = g.mul(y, p);
                g.sum_all(z)
            },
            &seq(b * c * h * w),
            vec![b, c, h, w],
        );
        close(&a, &n, 1e-8);
        let (a, n) = numeric_grad(
            |g, m| {
                let x = g.constant(Tensor::new(vec![b, c, h, w], seq(b * c * h * w)));
                let y = g.scale_channels(x, m);
                let q = g.mul(y, y);
                g.sum_all(q)
            },
            &[0.3, -0.7, 1.1],
            vec![c],
        );
        close(&a, &n, 1e-8);
        let (a, n) = numeric_grad(
            |g, x| {
                let y = g.broadcast_grid(x, h, w);
                let q = g.mul(y, y);
                let s = g.sigmoid(q);
                g.sum_all(s)
            },
            &seq(b * 2),
            vec![b, 2],
        );
        close(&a, &n, 1e-8);
    }

    #[test]
    fn straight_through_is_hard_forward_identity_backward() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![3], vec![0.2, 0.5, 0.9]));
        let y = g.straight_through(x);
        assert_eq!(g.value(y).data(), &[0.0, 1.0, 1.0]);
        let s = g.sum_all(y);
        assert_eq!(g.backward(s).get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }
}
