//! Two-environment linear regression with a spurious feature whose sign
//! flips between environments, used to exercise the risk-variance penalty.
//!
//! `y = x_c + ε`, `x_s = s_e·y + η` with `s_1 = 1`, `s_2 = −0.5`. Pooled ERM
//! leans on `x_s` and is much worse in the second environment; penalising
//! the variance of the per-environment risks pulls the fit toward `x_c`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor};
use crate::objectives::{lambda_inv, LossWeights};
use crate::training::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub n_per_env: usize,
    pub label_noise: f64,
    pub spurious_noise: f64,
    pub spurious_sign: [f64; 2],
    pub epochs: usize,
    pub lr: f64,
    /// Penalty schedule; `inv_max = 0` is plain ERM.
    pub weights: LossWeights,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_per_env: 1000,
            label_noise: 1.0,
            spurious_noise: 0.3,
            spurious_sign: [1.0, -0.5],
            epochs: 600,
            lr: 0.05,
            weights: LossWeights { pred: 1.0, freq: 0.0, mask: 0.0, inv_max: 10.0, warmup_end: 200, ramp_end: 400, total: 600 },
        }
    }
}

impl ToyConfig {
    pub fn erm(&self) -> Self {
        ToyConfig { weights: LossWeights { inv_max: 0.0, ..self.weights.clone() }, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyOutcome {
    /// Weights on `(x_c, x_s)` and the bias.
    pub w: [f64; 2],
    pub b: f64,
    /// Final per-environment risks.
    pub risks: [f64; 2],
}

impl ToyOutcome {
    pub fn gap(&self) -> f64 {
        (self.risks[0] - self.risks[1]).abs()
    }
}

struct ToyData {
    x: Tensor<f64>,
    y: Tensor<f64>,
    env: Vec<usize>,
}

fn sample(cfg: &ToyConfig, seed: u64) -> ToyData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n = 2 * cfg.n_per_env;
    let (mut x, mut y, mut env) = (Vec::with_capacity(2 * n), Vec::with_capacity(n), Vec::with_capacity(n));
    for e in 0..2 {
        for _ in 0..cfg.n_per_env {
            let xc: f64 = unit.sample(&mut rng);
            let yv = xc + cfg.label_noise * unit.sample(&mut rng);
            let xs = cfg.spurious_sign[e] * yv + cfg.spurious_noise * unit.sample(&mut rng);
            x.extend([xc, xs]);
            y.push(yv);
            env.push(e);
        }
    }
    ToyData { x: Tensor::new(vec![n, 2, 1, 1], x), y: Tensor::new(vec![n, 1, 1, 1], y), env }
}

/// Full-batch Adam on `mean_e R_e + λ_inv(epoch)·Var_e(R_e)`.
pub fn train_toy(cfg: &ToyConfig, seed: u64) -> ToyOutcome {
    let data = sample(cfg, seed);
    let mut params = vec![Tensor::new(vec![1, 2], vec![0.0, 0.0]), Tensor::new(vec![1], vec![0.0])];
    let mut adam = Adam::new(AdamConfig::default(), &[2, 1]);
    let mut risks = [0.0; 2];
    for epoch in 0..=cfg.epochs {
        let mut g = Graph::new();
        let w = g.param(params[0].clone());
        let b = g.param(params[1].clone());
        let x = g.constant(data.x.clone());
        let pred = g.pointwise_linear(x, w, b);
        let per = g.per_sample_mse(pred, &data.y);
        let r = g.group_mean(per, &data.env, 2);
        risks = [g.value(r).data()[0], g.value(r).data()[1]];
        if epoch == cfg.epochs {
            break;
        }
        let mean = g.mean_all(r);
        let var = g.variance(r);
        let li = lambda_inv(epoch, &cfg.weights).unwrap_or(cfg.weights.inv_max);
        let loss = g.weighted_sum(&[(mean, cfg.weights.pred), (var, li)]);
        let grads = g.backward(loss);
        let flat = vec![grads.get(w).expect("weight grad").to_vec(), grads.get(b).expect("bias grad").to_vec()];
        adam.step(&mut params, &flat, cfg.lr);
    }
    ToyOutcome { w: [params[0].data()[0], params[0].data()[1]], b: params[1].data()[0], risks }
}
