use std::sync::Arc;

use super::{Graph, Tensor, Var};
use crate::scalar::Scalar;
use crate::spectral::FreqWeightedError;

impl<T: Scalar> Graph<T> {
    /// Mean squared error of each batch element against a fixed target, `[B]`.
    pub fn per_sample_mse(&mut self, pred: Var, target: &Tensor<T>) -> Var {
        let shape = self.shape(pred).to_vec();
        assert_eq!(shape.as_slice(), target.shape(), "per_sample_mse shape mismatch");
        let b = shape[0];
        let n = target.len() / b;
        let diff: Vec<T> = self.value(pred).data.iter().zip(target.data()).map(|(p, t)| *p - *t).collect();
        let inv_n = T::one() / T::from_f64_lossy(n as f64);
        let out: Vec<T> = diff.chunks(n).map(|c| c.iter().map(|d| *d * *d).sum::<T>() * inv_n).collect();
        self.op(Tensor::new(vec![b], out), &[pred], move |ctx, sink| {
            if let Some(g) = sink.grad(0) {
                let two = T::from_f64_lossy(2.0) * inv_n;
                for (bi, go) in ctx.grad.iter().enumerate() {
                    for k in bi * n..(bi + 1) * n {
                        g[k] += *go * two * diff[k];
                    }
                }
            }
        })
    }

    /// Frequency-weighted squared error of each `[C, H, W]` element, `[B]`.
    pub fn per_sample_freq(&mut self, pred: Var, target: &Tensor<T>, fwe: Arc<FreqWeightedError<T>>) -> Var {
        let shape = self.shape(pred).to_vec();
        assert_eq!(shape.as_slice(), target.shape(), "per_sample_freq shape mismatch");
        assert_eq!(shape.len(), 4, "per_sample_freq expects [B, C, H, W]");
        let (b, c) = (shape[0], shape[1]);
        let n = target.len() / b;
        let diff: Vec<T> = self.value(pred).data.iter().zip(target.data()).map(|(p, t)| *p - *t).collect();
        let out: Vec<T> = diff.chunks(n).map(|d| fwe.eval(d, c, None)).collect();
        self.op(Tensor::new(vec![b], out), &[pred], move |ctx, sink| {
            if let Some(g) = sink.grad(0) {
                for (bi, go) in ctx.grad.iter().enumerate() {
                    fwe.eval(&diff[bi * n..(bi + 1) * n], c, Some((&mut g[bi * n..(bi + 1) * n], *go)));
                }
            }
        })
    }

    /// Mean of `v[k]` over each group, `[n_groups]`. Every group must be non-empty.
    pub fn group_mean(&mut self, v: Var, groups: &[usize], n_groups: usize) -> Var {
        let vals = &self.value(v).data;
        assert_eq!(vals.len(), groups.len(), "one group per element");
        let mut counts = vec![0usize; n_groups];
        let mut sums = vec![T::zero(); n_groups];
        for (x, g) in vals.iter().zip(groups) {
            counts[*g] += 1;
            sums[*g] += *x;
        }
        assert!(counts.iter().all(|c| *c > 0), "empty group");
        let out: Vec<T> = sums.iter().zip(&counts).map(|(s, c)| *s / T::from_f64_lossy(*c as f64)).collect();
        let groups = groups.to_vec();
        self.op(Tensor::new(vec![n_groups], out), &[v], move |ctx, sink| {
            if let Some(g) = sink.grad(0) {
                for (k, grp) in groups.iter().enumerate() {
                    g[k] += ctx.grad[*grp] / T::from_f64_lossy(counts[*grp] as f64);
                }
            }
        })
    }

    /// Population variance of a 1-D tensor.
    pub fn variance(&mut self, v: Var) -> Var {
        let vals = &self.value(v).data;
        let n = T::from_f64_lossy(vals.len() as f64);
        let mean = vals.iter().copied().sum::<T>() / n;
        let var = vals.iter().map(|x| (*x - mean) * (*x - mean)).sum::<T>() / n;
        self.op(Tensor::scalar(var), &[v], move |ctx, sink| {
            let go = ctx.grad[0];
            let vals = &ctx.inputs[0].data;
            if let Some(g) = sink.grad(0) {
                let two = T::from_f64_lossy(2.0);
                for (gi, x) in g.iter_mut().zip(vals) {
                    *gi += go * two * (*x - mean) / n;
                }
            }
        })
    }

    /// `(1/K²) Σ_i Σ_j exp(−‖m_i − m_j‖²)` over the rows of `m: [K, N]`.
    pub fn mask_diversity(&mut self, m: Var) -> Var {
        let shape = self.shape(m).to_vec();
        assert_eq!(shape.len(), 2, "mask_diversity expects [K, N]");
        let (k, n) = (shape[0], shape[1]);
        let mv = &self.value(m).data;
        let dist = |i: usize, j: usize| -> T {
            (0..n).map(|c| (mv[i * n + c] - mv[j * n + c]) * (mv[i * n + c] - mv[j * n + c])).sum()
        };
        let kernel: Vec<T> = (0..k * k).map(|ij| (-dist(ij / k, ij % k)).exp()).collect();
        let inv_k2 = T::one() / T::from_f64_lossy((k * k) as f64);
        let total = kernel.iter().copied().sum::<T>() * inv_k2;
        self.op(Tensor::scalar(total), &[m], move |ctx, sink| {
            let go = ctx.grad[0];
            let mv = &ctx.inputs[0].data;
            if let Some(g) = sink.grad(0) {
                let four = T::from_f64_lossy(4.0);
                for i in 0..k {
                    for j in 0..k {
                        if i == j {
                            continue;
                        }
                        // Both (i, j) and (j, i) terms depend on m_i.
                        let coef = -four * inv_k2 * kernel[i * k + j] * go;
                        for c in 0..n {
                            g[i * n + c] += coef * (mv[i * n + c] - mv[j * n + c]);
                        }
                    }
                }
            }
        })
    }

    /// `Σ_j c_j · s_j` over one-element tensors.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut total = T::zero();
        for (v, c) in terms {
            total += *c * self.value(*v).item();
        }
        let coefs: Vec<T> = terms.iter().map(|(_, c)| *c).collect();
        let vars: Vec<Var> = terms.iter().map(|(v, _)| *v).collect();
        self.op(Tensor::scalar(total), &vars, move |ctx, sink| {
            for (j, c) in coefs.iter().enumerate() {
                if let Some(g) = sink.grad(j) {
                    g[0] += *c * ctx.grad[0];
                }
            }
        })
    }
}
