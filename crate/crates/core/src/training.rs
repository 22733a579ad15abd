//! Training loop: stratified batches, full autoregressive unroll, Adam.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor};
use crate::datasets::{mix_seed, Dataset, NormStats};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, CondNorm, ExpertConfig, FusionConfig, MaskConfig, MaskGate, ModelConfig, MooeModel, OptimizerState};
use crate::objectives::{graph_objective, lambda_inv, LossBreakdown, LossWeights, ObjectiveBatch, PartitionMode};
use crate::scalar::Scalar;
use crate::spectral::FreqWeightedError;

pub const HISTORY_FILE: &str = "history.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.h5";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Architecture choices; grid size and channels come from the data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub expert: ExpertConfig,
    pub fusion: FusionConfig,
    pub mask: MaskConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
    pub precision: Precision,
    /// Informational; only the CPU path exists.
    pub device: String,
    pub model: ModelSection,
    pub partition: PartitionMode,
    /// Consecutive rollout steps sharing one risk key in step-wise mode.
    pub step_bucket: usize,
    pub weights: LossWeights,
    /// Feed the all-ones conditioning vector instead of the parameters.
    pub unknown_params: bool,
    /// Truncates the unroll; `None` rolls out the whole trajectory.
    pub rollout_steps: Option<usize>,
    /// Save a checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
    pub train_data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 32,
            lr: 1e-3,
            lr_schedule: LrSchedule::Constant,
            adam: AdamConfig::default(),
            seed: 0,
            precision: Precision::F32,
            device: "cpu".into(),
            model: ModelSection::default(),
            partition: PartitionMode::ByEnv,
            step_bucket: 1,
            weights: LossWeights::default(),
            unknown_params: false,
            rollout_steps: None,
            checkpoint_every: 0,
            train_data: None,
            val_data: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.rollout_steps == Some(0) {
            return Err(Error::Config("rollout_steps must be at least 1".into()));
        }
        self.weights.validate()?;
        if self.epochs > self.weights.total {
            return Err(Error::Config(format!(
                "{} epochs exceed the loss schedule length {}",
                self.epochs, self.weights.total
            )));
        }
        Ok(())
    }

    /// Model configuration for `data`.
    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        let l = &data.manifest.layout;
        ModelConfig {
            expert: self.model.expert.clone(),
            fusion: self.model.fusion.clone(),
            mask: self.model.mask.clone(),
            channels: l.channels,
            height: l.height,
            width: l.width,
            cond_dim: data.manifest.spec().conditioning_names().len(),
        }
    }
}

/// One forecasting example: a history window and the frames after it.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub env_index: usize,
    pub env_id: u32,
    /// `[W·C, H, W]`, oldest frame first.
    pub history: Vec<T>,
    /// One `[C, H, W]` frame per forecast step.
    pub targets: Vec<Vec<T>>,
    pub cond: Vec<T>,
}

/// Normalises `data` with `norm` and cuts one sample per trajectory.
pub fn build_samples<T: Scalar>(
    data: &Dataset,
    norm: &NormStats,
    cond: &CondNorm,
    window: usize,
    steps: Option<usize>,
) -> Result<Vec<Vec<Sample<T>>>> {
    let l = &data.manifest.layout;
    if l.n_t <= window {
        return Err(Error::Config(format!("window {window} leaves no frame to forecast in {} saved frames", l.n_t)));
    }
    let steps = steps.unwrap_or(l.n_t - window).min(l.n_t - window);
    let normed = data.normalized(norm)?;
    let mut out = Vec::with_capacity(normed.n_envs());
    for (ei, env) in normed.manifest.environments.iter().enumerate() {
        let c: Vec<T> = cond.encode(env).into_iter().map(T::from_f64_lossy).collect();
        let mut per_env = Vec::with_capacity(normed.n_traj(ei));
        for j in 0..normed.n_traj(ei) {
            let traj = normed.trajectory(ei, j);
            let frame = |t: usize| traj.index_axis(ndarray::Axis(0), t).iter().map(|v| T::from_f64_lossy(*v as f64)).collect::<Vec<T>>();
            let history = (0..window).flat_map(frame).collect();
            let targets = (window..window + steps).map(frame).collect();
            per_env.push(Sample { env_index: ei, env_id: env.env_id, history, targets, cond: c.clone() });
        }
        out.push(per_env);
    }
    Ok(out)
}

/// Round-robin interleaving of per-environment shuffles, chunked into batches.
/// Returns `(env, trajectory)` indices.
pub fn stratified_batches(counts: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<(usize, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64));
    let orders: Vec<Vec<usize>> = counts
        .iter()
        .map(|n| {
            let mut v: Vec<usize> = (0..*n).collect();
            v.shuffle(&mut rng);
            v
        })
        .collect();
    let longest = counts.iter().copied().max().unwrap_or(0);
    let mut flat = Vec::with_capacity(counts.iter().sum());
    for r in 0..longest {
        for (e, order) in orders.iter().enumerate() {
            if let Some(j) = order.get(r) {
                flat.push((e, *j));
            }
        }
    }
    flat.chunks(batch_size.max(1)).map(<[_]>::to_vec).collect()
}

/// Per-parameter Adam moments.
pub struct Adam {
    pub cfg: AdamConfig,
    pub state: OptimizerState,
}

impl Adam {
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|n| vec![0.0; *n]).collect();
        Adam { cfg, state: OptimizerState { t: 0, m: zeros(), v: zeros() } }
    }

    pub fn step<T: Scalar>(&mut self, params: &mut [Tensor<T>], grads: &[Vec<f64>], lr: f64) {
        let s = &mut self.state;
        s.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(s.t as i32);
        let c2 = 1.0 - b2.powi(s.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut s.m).zip(&mut s.v) {
            for (((pi, gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let upd = lr * (*mi / c1) / ((*vi / c2).sqrt() + self.cfg.eps);
                *pi = T::from_f64_lossy(pi.to_f64_lossy() - upd);
            }
        }
    }
}

/// Mutable training state.
pub struct Trainer<T: Scalar> {
    pub cfg: TrainConfig,
    pub model: MooeModel<T>,
    pub adam: Adam,
    pub norm: NormStats,
    pub cond: CondNorm,
    pub system: String,
    /// Epochs completed.
    pub epoch: usize,
    pub step: usize,
    samples: Vec<Vec<Sample<T>>>,
    fwe: Arc<FreqWeightedError<T>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: TrainConfig, data: &Dataset) -> Result<Self> {
        cfg.validate()?;
        let mc = cfg.model_config(data);
        let model = MooeModel::new(mc, cfg.seed)?;
        let cond = CondNorm::fit(data.manifest.spec().conditioning_names(), &data.manifest.environments, cfg.unknown_params)?;
        let norm = data.manifest.norm.clone();
        let sizes: Vec<usize> = model.params.tensors.iter().map(Tensor::len).collect();
        let adam = Adam::new(cfg.adam.clone(), &sizes);
        Self::assemble(cfg, data, model, adam, norm, cond, 0, 0)
    }

    /// Continues from a checkpoint that carries optimiser state.
    pub fn resume(cfg: TrainConfig, data: &Dataset, ck: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ck.meta.model != cfg.model_config(data) {
            return Err(Error::Config("checkpoint model does not match the training configuration".into()));
        }
        let model = ck.model::<T>()?;
        let mut adam = Adam::new(cfg.adam.clone(), &[]);
        adam.state = ck
            .optimizer
            .clone()
            .ok_or_else(|| Error::Invalid("checkpoint has no optimiser state to resume from".into()))?;
        Self::assemble(cfg, data, model, adam, ck.meta.norm.clone(), ck.meta.cond.clone(), ck.meta.epoch, ck.meta.step)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: TrainConfig,
        data: &Dataset,
        model: MooeModel<T>,
        adam: Adam,
        norm: NormStats,
        cond: CondNorm,
        epoch: usize,
        step: usize,
    ) -> Result<Self> {
        let samples = build_samples(data, &norm, &cond, cfg.model.expert.window, cfg.rollout_steps)?;
        if samples.iter().all(Vec::is_empty) {
            return Err(Error::Invalid("training set has no trajectories".into()));
        }
        let fwe = Arc::new(FreqWeightedError::new(model.config.height, model.config.width)?);
        let system = data.manifest.system.as_str().to_string();
        Ok(Trainer { cfg, model, adam, norm, cond, system, epoch, step, samples, fwe })
    }

    fn lr(&self) -> f64 {
        match self.cfg.lr_schedule {
            LrSchedule::Constant => self.cfg.lr,
            LrSchedule::Cosine => {
                let frac = self.epoch as f64 / self.cfg.epochs.max(1) as f64;
                0.5 * self.cfg.lr * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    fn batch_tensors(&self, idx: &[(usize, usize)]) -> (Tensor<T>, Tensor<T>, Vec<Tensor<T>>, Vec<u32>) {
        let mc = &self.model.config;
        let (c, h, w) = (mc.channels, mc.height, mc.width);
        let b = idx.len();
        let picks: Vec<&Sample<T>> = idx.iter().map(|(e, j)| &self.samples[*e][*j]).collect();
        let history = Tensor::new(
            vec![b, mc.expert.window * c, h, w],
            picks.iter().flat_map(|s| s.history.iter().copied()).collect(),
        );
        let cond = Tensor::new(vec![b, mc.cond_dim], picks.iter().flat_map(|s| s.cond.iter().copied()).collect());
        let steps = picks[0].targets.len();
        let targets = (0..steps)
            .map(|t| Tensor::new(vec![b, c, h, w], picks.iter().flat_map(|s| s.targets[t].iter().copied()).collect()))
            .collect();
        (history, cond, targets, picks.iter().map(|s| s.env_id).collect())
    }

    /// Loss and gradients for one batch at the current epoch.
    pub fn batch_loss(&self, idx: &[(usize, usize)]) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
        let (history, cond, targets, env_ids) = self.batch_tensors(idx);
        let li = lambda_inv(self.epoch, &self.cfg.weights)?;
        let mut g = Graph::new();
        let p = self.model.bind(&mut g, true);
        let hv = g.constant(history);
        let cv = g.constant(cond);
        let preds = self.model.rollout(&mut g, &p, hv, cv, targets.len(), self.model.config.mask.train_gate)?;
        let soft = self.model.masks(&mut g, &p, MaskGate::Soft);
        let batch = ObjectiveBatch {
            targets: &targets,
            env_ids: &env_ids,
            partition: self.cfg.partition,
            step_bucket: self.cfg.step_bucket,
            fwe: self.fwe.clone(),
        };
        let (loss, mut bd) = graph_objective(&mut g, &preds, soft, &batch, &self.cfg.weights, li)?;
        bd.epoch = self.epoch;
        bd.step = self.step;
        let mut grads = g.backward(loss);
        let flat = p
            .vars()
            .iter()
            .zip(&self.model.params.tensors)
            .map(|(v, t)| grads.take(*v).map_or_else(|| vec![0.0; t.len()], |g| g.iter().map(|x| x.to_f64_lossy()).collect()))
            .collect();
        Ok((bd, flat))
    }

    pub fn batches(&self) -> Vec<Vec<(usize, usize)>> {
        let counts: Vec<usize> = self.samples.iter().map(Vec::len).collect();
        stratified_batches(&counts, self.cfg.batch_size, self.cfg.seed, self.epoch)
    }

    /// One epoch; returns one record per optimiser step.
    pub fn run_epoch(&mut self, last_good: Option<&Path>) -> Result<Vec<LossBreakdown>> {
        let lr = self.lr();
        let mut records = vec![];
        for idx in self.batches() {
            let non_finite = || Error::NonFiniteLoss { epoch: self.epoch, step: self.step, last_good: last_good.map(Path::to_path_buf) };
            let (bd, grads) = match self.batch_loss(&idx) {
                Err(Error::RolloutBlowUp { .. }) => return Err(non_finite()),
                r => r?,
            };
            if !bd.total.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(non_finite());
            }
            self.adam.step(&mut self.model.params.tensors, &grads, lr);
            self.step += 1;
            records.push(bd);
        }
        self.epoch += 1;
        Ok(records)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(
            &self.model,
            &self.system,
            self.norm.clone(),
            self.cond.clone(),
            serde_json::to_value(&self.cfg).expect("config serialises"),
            self.epoch,
            self.step,
            Some(self.adam.state.clone()),
        )
    }

    /// Runs the remaining epochs. With `out_dir`, appends to the history
    /// file and writes periodic and final checkpoints there.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<TrainOutcome> {
        let mut history = vec![];
        let mut last_good: Option<PathBuf> = None;
        let mut log = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(HISTORY_FILE);
                let f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
                Some((path, f))
            }
            None => None,
        };
        while self.epoch < self.cfg.epochs {
            let records = self.run_epoch(last_good.as_deref())?;
            if let Some((path, f)) = log.as_mut() {
                for r in &records {
                    writeln!(f, "{}", r.to_json_line()).map_err(|e| Error::io(path.as_path(), e))?;
                }
            }
            if let Some(last) = records.last() {
                log::info!("epoch {} step {} loss {:.4e} pred {:.4e}", last.epoch, last.step, last.total, last.pred);
            }
            history.extend(records);
            if let (Some(dir), true) = (out_dir, self.cfg.checkpoint_every > 0 && self.epoch % self.cfg.checkpoint_every == 0) {
                let path = dir.join(format!("epoch{:04}.h5", self.epoch));
                self.checkpoint().save(&path)?;
                last_good = Some(path);
            }
        }
        let checkpoint = self.checkpoint();
        let path = match out_dir {
            Some(dir) => {
                let p = dir.join(FINAL_CHECKPOINT);
                checkpoint.save(&p)?;
                Some(p)
            }
            None => None,
        };
        Ok(TrainOutcome { checkpoint, checkpoint_path: path, history })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub checkpoint_path: Option<PathBuf>,
    pub history: Vec<LossBreakdown>,
}

fn run_with<T: Scalar>(cfg: &TrainConfig, data: &Dataset, out_dir: Option<&Path>, resume: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let mut trainer = match resume {
        Some(ck) => Trainer::<T>::resume(cfg.clone(), data, ck)?,
        None => Trainer::<T>::new(cfg.clone(), data)?,
    };
    trainer.run(out_dir)
}

/// Trains at the configured precision.
pub fn train(cfg: &TrainConfig, data: &Dataset, out_dir: Option<&Path>, resume: Option<&Checkpoint>) -> Result<TrainOutcome> {
    match cfg.precision {
        Precision::F32 => run_with::<f32>(cfg, data, out_dir, resume),
        Precision::F64 => run_with::<f64>(cfg, data, out_dir, resume),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_every_env_each_epoch() {
        let counts = [5, 3, 4];
        for epoch in 0..4 {
            let b = stratified_batches(&counts, 3, 11, epoch);
            let mut seen: Vec<(usize, usize)> = b.iter().flatten().copied().collect();
            assert_eq!(seen.len(), 12);
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 12);
            assert!(b[0].iter().map(|x| x.0).collect::<std::collections::BTreeSet<_>>().len() == 3);
        }
        assert_eq!(stratified_batches(&counts, 3, 11, 2), stratified_batches(&counts, 3, 11, 2));
        assert_ne!(stratified_batches(&counts, 3, 11, 2), stratified_batches(&counts, 3, 11, 3));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::<f64>::new(vec![2], vec![1.0, -1.0])];
        let mut a = Adam::new(AdamConfig::default(), &[2]);
        a.step(&mut p, &[vec![0.5, -3.0]], 0.1);
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn config_toml_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.epochs = 10;
        cfg.weights = cfg.weights.rescaled(10);
        cfg.partition = PartitionMode::ByEnvAndStep;
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(TrainConfig::from_toml("epochs = 3\nbogus = 1").is_err());
        let partial = TrainConfig::from_toml("epochs = 3\n[model.expert]\nk = 3\n").unwrap();
        assert_eq!(partial.model.expert.k, 3);
        assert_eq!(partial.model.expert.width, 64);
    }

    #[test]
    fn schedule_shorter_than_epochs_is_rejected() {
        let cfg = TrainConfig { epochs: 600, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
