//! The mixture of masked operator experts.
//!
//! Each expert sees `[coords; window; mask ⊙ derivs]`, runs an FNO trunk
//! and hands its output to a per-expert conditioning head. Head outputs are
//! fused (summed, or mixed by a pointwise MLP) into the increment `h`, and
//! the rollout advances `û_{t+1} = û_t + h`.

mod checkpoint;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta, OptimizerState, CHECKPOINT_VERSION};

pub use crate::autograd::MaskGate;
use crate::autograd::{Graph, SpectralConvPlan, Tensor, Var};
use crate::datasets::Environment;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{DerivativeOperator, SpectralGrid, NUM_DERIVATIVE_KINDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Fno,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Number of experts K.
    pub k: usize,
    pub backbone: Backbone,
    pub layers: usize,
    pub width: usize,
    /// Retained Fourier modes per axis.
    pub modes: usize,
    /// History frames fed to the experts.
    pub window: usize,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig { k: 2, backbone: Backbone::Fno, layers: 4, width: 64, modes: 16, window: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Additive,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Hidden width of each per-expert conditioning head.
    pub head_width: usize,
    /// Hidden layers of the nonlinear fusion MLP.
    pub fusion_depth: usize,
    pub fusion_width: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { mode: FusionMode::Additive, head_width: 64, fusion_depth: 2, fusion_width: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub temperature: f64,
    /// Gate used while training.
    pub train_gate: MaskGate,
    /// Gate used by rollouts outside training.
    pub eval_gate: MaskGate,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig { temperature: 1.0, train_gate: MaskGate::Soft, eval_gate: MaskGate::Hard }
    }
}

/// Everything needed to rebuild the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub expert: ExpertConfig,
    pub fusion: FusionConfig,
    pub mask: MaskConfig,
    /// State channels C.
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Length of the conditioning vector.
    pub cond_dim: usize,
}

impl ModelConfig {
    pub fn deriv_channels(&self) -> usize {
        NUM_DERIVATIVE_KINDS * self.channels
    }

    pub fn expert_in_channels(&self) -> usize {
        2 + self.expert.window * self.channels + self.deriv_channels()
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.expert;
        if e.k == 0 {
            return Err(Error::Config("expert.k must be at least 1".into()));
        }
        if e.layers == 0 || e.width == 0 || e.window == 0 || self.channels == 0 {
            return Err(Error::Config("layers, width, window and channels must be positive".into()));
        }
        if e.modes == 0 || e.modes > self.height.min(self.width) / 2 {
            return Err(Error::Config(format!(
                "retained modes {} must lie in [1, {}] for a {}x{} grid",
                e.modes,
                self.height.min(self.width) / 2,
                self.height,
                self.width
            )));
        }
        if self.cond_dim == 0 {
            return Err(Error::Config("cond_dim must be at least 1".into()));
        }
        if self.mask.temperature <= 0.0 {
            return Err(Error::Config("mask temperature must be positive".into()));
        }
        if self.fusion.head_width == 0 || (self.fusion.mode == FusionMode::Nonlinear && self.fusion.fusion_width == 0) {
            return Err(Error::Config("fusion widths must be positive".into()));
        }
        Ok(())
    }
}

/// Z-scoring of the conditioning vector over the training environments.
/// With `unknown` set every environment maps to the all-ones vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondNorm {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub unknown: bool,
}

impl CondNorm {
    pub fn fit(names: Vec<String>, envs: &[Environment], unknown: bool) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("no conditioning parameters".into()));
        }
        if envs.is_empty() {
            return Err(Error::Invalid("cannot fit conditioning on zero environments".into()));
        }
        let n = envs.len() as f64;
        let rows: Vec<Vec<f64>> = envs.iter().map(|e| names.iter().map(|k| e.param(k).unwrap_or(0.0)).collect()).collect();
        let mean: Vec<f64> = (0..names.len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..names.len())
            .map(|j| {
                let s = (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                // Constant parameters are only centred.
                if s > 0.0 { s } else { 1.0 }
            })
            .collect();
        Ok(CondNorm { names, mean, std, unknown })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn encode(&self, env: &Environment) -> Vec<f64> {
        if self.unknown {
            return vec![1.0; self.dim()];
        }
        self.names
            .iter()
            .enumerate()
            .map(|(j, k)| (env.param(k).unwrap_or(0.0) - self.mean[j]) / self.std[j])
            .collect()
    }
}

#[derive(Debug, Clone)]
struct LayerIdx {
    spec: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct ExpertIdx {
    lift: (usize, usize),
    layers: Vec<LayerIdx>,
    proj: (usize, usize),
    head_in: (usize, usize),
    head_out: (usize, usize),
}

#[derive(Debug, Clone)]
struct Layout {
    experts: Vec<ExpertIdx>,
    fusion: Vec<(usize, usize)>,
    mask_logits: usize,
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All values, concatenated in order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().map(|v| v.to_f64_lossy())).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.count(), "flat parameter length");
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().iter_mut().zip(&flat[off..off + n]).for_each(|(d, v)| *d = T::from_f64_lossy(*v));
            off += n;
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

struct Builder<'a, T> {
    rng: &'a mut ChaCha8Rng,
    store: ParamStore<T>,
}

impl<T: Scalar> Builder<'_, T> {
    fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) -> usize {
        self.store.names.push(name);
        self.store.tensors.push(Tensor::from_f64(shape, &data));
        self.store.tensors.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| self.rng.random_range(-bound..bound)).collect();
        let b: Vec<f64> = (0..fan_out).map(|_| self.rng.random_range(-bound..bound)).collect();
        (self.push(format!("{name}.w"), vec![fan_out, fan_in], w), self.push(format!("{name}.b"), vec![fan_out], b))
    }

    fn spectral(&mut self, name: &str, ci: usize, co: usize, m: usize) -> usize {
        let scale = 1.0 / (ci * co) as f64;
        let n = 2 * ci * co * 2 * m * m;
        let data: Vec<f64> = (0..n).map(|_| scale * self.rng.random::<f64>()).collect();
        self.push(format!("{name}.spec"), vec![2, ci, co, 2 * m, m], data)
    }
}

fn build_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> (ParamStore<T>, Layout) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder { rng: &mut rng, store: ParamStore { names: vec![], tensors: vec![] } };
    let e = &cfg.expert;
    let c = cfg.channels;
    let mut experts = Vec::with_capacity(e.k);
    for i in 0..e.k {
        let lift = b.linear(&format!("expert{i}.lift"), cfg.expert_in_channels(), e.width);
        let layers = (0..e.layers)
            .map(|l| {
                let spec = b.spectral(&format!("expert{i}.layer{l}"), e.width, e.width, e.modes);
                let (w, bias) = b.linear(&format!("expert{i}.layer{l}.bypass"), e.width, e.width);
                LayerIdx { spec, w, b: bias }
            })
            .collect();
        let proj = b.linear(&format!("expert{i}.proj"), e.width, c);
        let head_in = b.linear(&format!("head{i}.in"), c + cfg.cond_dim, cfg.fusion.head_width);
        let head_out = b.linear(&format!("head{i}.out"), cfg.fusion.head_width, c);
        experts.push(ExpertIdx { lift, layers, proj, head_in, head_out });
    }
    let mut fusion = vec![];
    if cfg.fusion.mode == FusionMode::Nonlinear {
        let mut fan_in = e.k * c;
        for l in 0..cfg.fusion.fusion_depth {
            fusion.push(b.linear(&format!("fusion.l{l}"), fan_in, cfg.fusion.fusion_width));
            fan_in = cfg.fusion.fusion_width;
        }
        fusion.push(b.linear(&format!("fusion.l{}", cfg.fusion.fusion_depth), fan_in, c));
    }
    let n_mask = e.k * cfg.deriv_channels();
    let logits: Vec<f64> = (0..n_mask).map(|_| b.rng.sample(StandardNormal)).collect();
    let mask_logits = b.push("mask.logits".into(), vec![e.k, cfg.deriv_channels()], logits);
    (b.store, Layout { experts, fusion, mask_logits })
}

/// Parameters bound to a graph for one pass.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// The forecaster f = g∘φ.
pub struct MooeModel<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    layout: Layout,
    plan: Arc<SpectralConvPlan<T>>,
    deriv: Arc<DerivativeOperator<T>>,
}

impl<T: Scalar> Clone for MooeModel<T> {
    fn clone(&self) -> Self {
        MooeModel {
            config: self.config.clone(),
            params: self.params.clone(),
            layout: self.layout.clone(),
            plan: self.plan.clone(),
            deriv: self.deriv.clone(),
        }
    }
}

/// Soft mask values `sigmoid(logits / τ)`, `[K, S·C]` row-major.
pub fn soft_mask(logits: &[f64], temperature: f64) -> Vec<f64> {
    logits.iter().map(|l| 1.0 / (1.0 + (-l / temperature).exp())).collect()
}

impl<T: Scalar> MooeModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, layout) = build_params(&config, seed);
        Self::assemble(config, params, layout)
    }

    fn assemble(config: ModelConfig, params: ParamStore<T>, layout: Layout) -> Result<Self> {
        let plan = Arc::new(SpectralConvPlan::new(config.height, config.width, config.expert.modes)?);
        // Derivatives are taken in grid-index units (unit spacing).
        let grid = SpectralGrid::new(config.height, config.width, config.width as f64, config.height as f64)?;
        let deriv = Arc::new(DerivativeOperator::new(grid));
        Ok(MooeModel { config, params, layout, plan, deriv })
    }

    /// Rebuilds a model with the given named parameters.
    pub fn from_params(config: ModelConfig, named: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<Self> {
        config.validate()?;
        let (mut params, layout) = build_params::<T>(&config, 0);
        if named.len() != params.names.len() {
            return Err(Error::Shape(format!("{} parameter tensors, model expects {}", named.len(), params.names.len())));
        }
        for (name, shape, data) in named {
            let idx = params.index_of(&name).ok_or_else(|| Error::Shape(format!("unexpected parameter `{name}`")))?;
            if params.tensors[idx].shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has shape {shape:?}, model expects {:?}",
                    params.tensors[idx].shape()
                )));
            }
            params.tensors[idx] = Tensor::from_f64(shape, &data);
        }
        Self::assemble(config, params, layout)
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn mask_logits(&self) -> &Tensor<T> {
        &self.params.tensors[self.layout.mask_logits]
    }

    pub fn soft_masks(&self) -> Vec<Vec<f64>> {
        let n = self.config.deriv_channels();
        soft_mask(&self.mask_logits().to_f64(), self.config.mask.temperature).chunks(n).map(|c| c.to_vec()).collect()
    }

    /// Masks thresholded at 0.5.
    pub fn hard_masks(&self) -> Vec<Vec<bool>> {
        self.soft_masks().into_iter().map(|r| r.into_iter().map(|v| v >= 0.5).collect()).collect()
    }

    /// Binds the parameters as differentiable leaves (`trainable`) or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        Bound { vars }
    }

    /// Normalised coordinates `x/W`, `y/H` as `[B, 2, H, W]`.
    pub fn coords(&self, batch: usize) -> Tensor<T> {
        let (h, w) = (self.config.height, self.config.width);
        let mut data = Vec::with_capacity(batch * 2 * h * w);
        for _ in 0..batch {
            for y in 0..h {
                for x in 0..w {
                    data.push(T::from_f64_lossy(x as f64 / w as f64));
                }
                let _ = y;
            }
            for y in 0..h {
                for _ in 0..w {
                    data.push(T::from_f64_lossy(y as f64 / h as f64));
                }
            }
        }
        Tensor::new(vec![batch, 2, h, w], data)
    }

    pub fn derivative_operator(&self) -> Arc<DerivativeOperator<T>> {
        self.deriv.clone()
    }

    /// `[K, S·C]` gate values for the given mode.
    pub fn masks(&self, g: &mut Graph<T>, p: &Bound, gate: MaskGate) -> Var {
        let logits = p.vars[self.layout.mask_logits];
        match gate {
            MaskGate::Soft | MaskGate::StraightThrough => {
                let scaled = g.scale(logits, T::from_f64_lossy(1.0 / self.config.mask.temperature));
                let soft = g.sigmoid(scaled);
                if gate == MaskGate::Soft {
                    soft
                } else {
                    g.straight_through(soft)
                }
            }
            MaskGate::Hard => {
                let soft = soft_mask(&self.mask_logits().to_f64(), self.config.mask.temperature);
                let hard: Vec<f64> = soft.iter().map(|v| if *v >= 0.5 { 1.0 } else { 0.0 }).collect();
                g.constant(Tensor::from_f64(self.mask_logits().shape().to_vec(), &hard))
            }
        }
    }

    /// Expert `i` on `[coords; window; mask_row ⊙ derivs]`, returning `[B, C, H, W]`.
    pub fn expert_forward(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        i: usize,
        coords: Var,
        window: Var,
        derivs: Var,
        mask_row: Var,
    ) -> Result<Var> {
        let want = self.config.deriv_channels();
        if g.shape(derivs).get(1) != Some(&want) || g.shape(mask_row) != [want] {
            return Err(Error::Shape(format!(
                "derivative stack {:?} / mask {:?} do not match {want} derivative channels",
                g.shape(derivs),
                g.shape(mask_row)
            )));
        }
        let want_window = self.config.expert.window * self.config.channels;
        if g.shape(window).get(1) != Some(&want_window) {
            return Err(Error::Shape(format!("window has {:?} channels, expected {want_window}", g.shape(window).get(1))));
        }
        let e = &self.layout.experts[i];
        let v = &p.vars;
        let masked = g.scale_channels(derivs, mask_row);
        let input = g.concat_channels(&[coords, window, masked]);
        let mut x = g.pointwise_linear(input, v[e.lift.0], v[e.lift.1]);
        for l in &e.layers {
            x = g.fno_layer(x, v[l.spec], v[l.w], v[l.b], self.plan.clone());
        }
        Ok(g.pointwise_linear(x, v[e.proj.0], v[e.proj.1]))
    }

    /// Conditioning head of expert `i`: `MLP_i(σ_i, cond)`.
    pub fn head(&self, g: &mut Graph<T>, p: &Bound, i: usize, sigma: Var, cond_grid: Var) -> Var {
        let e = &self.layout.experts[i];
        let v = &p.vars;
        let x = g.concat_channels(&[sigma, cond_grid]);
        let hdn = g.pointwise_linear(x, v[e.head_in.0], v[e.head_in.1]);
        let hdn = g.gelu(hdn);
        g.pointwise_linear(hdn, v[e.head_out.0], v[e.head_out.1])
    }

    /// Combines head outputs into the increment.
    pub fn fuse(&self, g: &mut Graph<T>, p: &Bound, heads: &[Var]) -> Var {
        match self.config.fusion.mode {
            FusionMode::Additive => {
                if heads.len() == 1 {
                    heads[0]
                } else {
                    g.sum_of(heads)
                }
            }
            FusionMode::Nonlinear => {
                let mut x = g.concat_channels(heads);
                let last = self.layout.fusion.len() - 1;
                for (l, (w, b)) in self.layout.fusion.iter().enumerate() {
                    x = g.pointwise_linear(x, p.vars[*w], p.vars[*b]);
                    if l < last {
                        x = g.gelu(x);
                    }
                }
                x
            }
        }
    }

    /// Increment `h` for one step. `window: [B, W·C, H, W]` ends with `last`.
    pub fn increment(&self, g: &mut Graph<T>, p: &Bound, window: Var, last: Var, cond: Var, gate: MaskGate) -> Result<Var> {
        let shape = g.shape(last).to_vec();
        let (b, h, w) = (shape[0], shape[2], shape[3]);
        if shape[1] != self.config.channels || h != self.config.height || w != self.config.width {
            return Err(Error::Shape(format!(
                "state {shape:?} vs model [{}, {}, {}]",
                self.config.channels, self.config.height, self.config.width
            )));
        }
        if g.shape(cond) != [b, self.config.cond_dim] {
            return Err(Error::Shape(format!("conditioning {:?}, expected [{b}, {}]", g.shape(cond), self.config.cond_dim)));
        }
        let coords = g.constant(self.coords(b));
        let derivs = g.derivative_stack(last, self.deriv.clone());
        let masks = self.masks(g, p, gate);
        let cond_grid = g.broadcast_grid(cond, h, w);
        let mut heads = Vec::with_capacity(self.config.expert.k);
        for i in 0..self.config.expert.k {
            let row = g.select_row(masks, i);
            let sigma = self.expert_forward(g, p, i, coords, window, derivs, row)?;
            heads.push(self.head(g, p, i, sigma, cond_grid));
        }
        Ok(self.fuse(g, p, &heads))
    }

    /// Differentiable autoregressive rollout. `history: [B, W·C, H, W]`
    /// (oldest frame first), `cond: [B, P]`. Returns one `[B, C, H, W]`
    /// node per predicted step.
    pub fn rollout(&self, g: &mut Graph<T>, p: &Bound, history: Var, cond: Var, steps: usize, gate: MaskGate) -> Result<Vec<Var>> {
        if steps == 0 {
            return Err(Error::Invalid("rollout needs at least one step".into()));
        }
        let c = self.config.channels;
        let wc = self.config.expert.window * c;
        let hs = g.shape(history).to_vec();
        if hs.len() != 4 || hs[1] != wc {
            return Err(Error::Shape(format!("history {hs:?} must be [B, {wc}, H, W]")));
        }
        let mut window = history;
        let mut last = g.slice_channels(window, wc - c, wc);
        let mut out = Vec::with_capacity(steps);
        for step in 0..steps {
            let inc = self.increment(g, p, window, last, cond, gate)?;
            let next = g.add(last, inc);
            if !g.value(next).data().iter().all(|v| v.is_finite()) {
                return Err(Error::RolloutBlowUp { step });
            }
            out.push(next);
            if step + 1 < steps {
                window = if self.config.expert.window == 1 {
                    next
                } else {
                    let keep = g.slice_channels(window, c, wc);
                    g.concat_channels(&[keep, next])
                };
                last = next;
            }
        }
        Ok(out)
    }

    /// Inference rollout on a fresh graph per step; no parameter is touched.
    pub fn predict(&self, history: &Tensor<T>, cond: &Tensor<T>, steps: usize) -> Result<Vec<Tensor<T>>> {
        let c = self.config.channels;
        let wc = self.config.expert.window * c;
        let shape = history.shape().to_vec();
        if shape.len() != 4 || shape[1] != wc {
            return Err(Error::Shape(format!("history {shape:?} must be [B, {wc}, H, W]")));
        }
        let (b, h, w) = (shape[0], shape[2], shape[3]);
        let frame = c * h * w;
        let mut window = history.clone();
        let mut out = Vec::with_capacity(steps);
        for step in 0..steps {
            let mut g = Graph::new();
            let p = self.bind(&mut g, false);
            let wv = g.constant(window.clone());
            let last = g.slice_channels(wv, wc - c, wc);
            let cv = g.constant(cond.clone());
            let inc = self.increment(&mut g, &p, wv, last, cv, self.config.mask.eval_gate)?;
            let next = g.add(last, inc);
            let next = g.value(next).clone();
            if !next.data().iter().all(|v| v.is_finite()) {
                return Err(Error::RolloutBlowUp { step });
            }
            let mut shifted = Vec::with_capacity(window.len());
            for bi in 0..b {
                let row = &window.data()[bi * wc * h * w..(bi + 1) * wc * h * w];
                shifted.extend_from_slice(&row[frame..]);
                shifted.extend_from_slice(&next.data()[bi * frame..(bi + 1) * frame]);
            }
            window = Tensor::new(shape.clone(), shifted);
            out.push(next);
        }
        Ok(out)
    }

    /// Named parameters in `f64`, for checkpoints.
    pub fn named_params(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.params
            .names
            .iter()
            .zip(&self.params.tensors)
            .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.to_f64()))
            .collect()
    }

    /// Converts to another element type.
    pub fn cast<U: Scalar>(&self) -> Result<MooeModel<U>> {
        MooeModel::from_params(self.config.clone(), self.named_params())
    }

    /// Index of a named parameter, e.g. `head0.out.b`.
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.index_of(name)
    }
}
