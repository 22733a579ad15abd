//! Training objectives: prediction risk, cross-environment risk variance,
//! frequency-weighted risk and mask diversity, plus the `λ_inv` schedule.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::ArrayView4;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::FreqWeightedError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pred: f64,
    pub freq: f64,
    pub mask: f64,
    pub inv_max: f64,
    pub warmup_end: usize,
    pub ramp_end: usize,
    pub total: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { pred: 1.0, freq: 0.1, mask: 0.001, inv_max: 0.001, warmup_end: 175, ramp_end: 325, total: 500 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.pred, self.freq, self.mask, self.inv_max];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {all:?}")));
        }
        if !(self.warmup_end < self.ramp_end && self.ramp_end <= self.total) {
            return Err(Error::Config(format!(
                "schedule needs warmup_end < ramp_end <= total, got {} / {} / {}",
                self.warmup_end, self.ramp_end, self.total
            )));
        }
        Ok(())
    }

    /// The same schedule shape stretched to `epochs`.
    pub fn rescaled(&self, epochs: usize) -> Self {
        let f = |e: usize| ((e as f64) * epochs as f64 / self.total as f64).round() as usize;
        let warmup_end = f(self.warmup_end).min(epochs.saturating_sub(1));
        let ramp_end = f(self.ramp_end).max(warmup_end + 1).min(epochs.max(warmup_end + 1));
        LossWeights { warmup_end, ramp_end, total: epochs.max(ramp_end), ..self.clone() }
    }
}

/// Invariance weight at `epoch`: zero through warm-up, then a linear ramp to `inv_max`.
pub fn lambda_inv(epoch: usize, w: &LossWeights) -> Result<f64> {
    if epoch >= w.total {
        return Err(Error::EpochOutOfRange { epoch, total: w.total });
    }
    Ok(if epoch < w.warmup_end {
        0.0
    } else if epoch < w.ramp_end {
        (epoch - w.warmup_end) as f64 / (w.ramp_end - w.warmup_end) as f64 * w.inv_max
    } else {
        w.inv_max
    })
}

/// How batch elements are grouped into environments for the variance term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    ByEnv,
    ByEnvAndStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EnvKey {
    pub env_id: u32,
    /// Rollout step (or step bucket) for step-wise partitions.
    pub step: Option<usize>,
}

/// Group index of every `(step, element)` pair, step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub keys: Vec<EnvKey>,
    pub groups: Vec<usize>,
}

/// Keys for a batch with the given env ids unrolled for `steps` steps.
/// `bucket` groups consecutive steps in step-wise mode (1 = one key per step).
pub fn partition_keys(env_ids: &[u32], steps: usize, mode: PartitionMode, bucket: usize) -> Partition {
    let bucket = bucket.max(1);
    let key = |e: u32, t: usize| EnvKey { env_id: e, step: (mode == PartitionMode::ByEnvAndStep).then_some(t / bucket) };
    let mut index = BTreeMap::new();
    for t in 0..steps {
        for e in env_ids {
            index.entry(key(*e, t)).or_insert(0usize);
        }
    }
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    let groups = (0..steps).flat_map(|t| env_ids.iter().map(|e| index[&key(*e, t)]).collect::<Vec<_>>()).collect();
    Partition { keys: index.into_keys().collect(), groups }
}

/// Per-environment risks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RiskTable(pub BTreeMap<EnvKey, f64>);

impl RiskTable {
    /// Mean of `values` within each group of `partition`.
    pub fn from_samples(partition: &Partition, values: &[f64]) -> Result<Self> {
        if values.len() != partition.groups.len() {
            return Err(Error::Shape(format!("{} risks for {} partition slots", values.len(), partition.groups.len())));
        }
        let mut acc = vec![(0.0, 0usize); partition.keys.len()];
        for (v, g) in values.iter().zip(&partition.groups) {
            acc[*g].0 += v;
            acc[*g].1 += 1;
        }
        Ok(RiskTable(partition.keys.iter().zip(acc).map(|(k, (s, n))| (*k, s / n as f64)).collect()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_shapes(a: &ArrayView4<f64>, b: &ArrayView4<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("prediction {:?} vs truth {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mean squared error over `[steps, C, H, W]`.
pub fn prediction_risk(pred: ArrayView4<f64>, truth: ArrayView4<f64>) -> Result<f64> {
    check_shapes(&pred, &truth)?;
    let n = pred.len().max(1) as f64;
    Ok(pred.iter().zip(truth.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
}

/// Frequency-weighted error averaged over forecast steps.
pub fn frequency_risk(pred: ArrayView4<f64>, truth: ArrayView4<f64>) -> Result<f64> {
    check_shapes(&pred, &truth)?;
    let (steps, c, h, w) = pred.dim();
    if steps == 0 {
        return Ok(0.0);
    }
    let fwe = FreqWeightedError::<f64>::new(h, w)?;
    let mut total = 0.0;
    for t in 0..steps {
        let diff: Vec<f64> = pred
            .index_axis(ndarray::Axis(0), t)
            .iter()
            .zip(truth.index_axis(ndarray::Axis(0), t).iter())
            .map(|(p, q)| p - q)
            .collect();
        total += fwe.eval(&diff, c, None);
    }
    Ok(total / steps as f64)
}

/// Population variance of the keyed risks.
pub fn risk_variance(risks: &RiskTable) -> Result<f64> {
    if risks.is_empty() {
        return Err(Error::EmptyRiskTable);
    }
    let n = risks.len() as f64;
    let mean = risks.0.values().sum::<f64>() / n;
    Ok(risks.0.values().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n)
}

/// `(1/K²) Σ_i Σ_j exp(−‖m_i − m_j‖²)` over mask rows.
pub fn mask_diversity_loss(masks: &[Vec<f64>]) -> f64 {
    let k = masks.len();
    if k == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in masks {
        for b in masks {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            total += (-d).exp();
        }
    }
    total / (k * k) as f64
}

/// The four unweighted terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub pred: f64,
    pub inv: f64,
    pub freq: f64,
    pub mask: f64,
}

/// One history record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub step: usize,
    pub pred: f64,
    pub inv: f64,
    pub freq: f64,
    pub mask: f64,
    pub lambda_inv: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("breakdown serialises")
    }

    /// `λ_pred·pred + λ_inv·inv + λ_freq·freq + λ_mask·mask` from the stored fields.
    pub fn recompute(&self, w: &LossWeights) -> f64 {
        w.pred * self.pred + self.lambda_inv * self.inv + w.freq * self.freq + w.mask * self.mask
    }
}

pub fn total_loss(c: LossComponents, epoch: usize, w: &LossWeights) -> Result<LossBreakdown> {
    let li = lambda_inv(epoch, w)?;
    let mut b = LossBreakdown {
        epoch,
        step: 0,
        pred: c.pred,
        inv: c.inv,
        freq: c.freq,
        mask: c.mask,
        lambda_inv: li,
        total: 0.0,
    };
    b.total = b.recompute(w);
    Ok(b)
}

/// Inputs of [`graph_objective`] besides the graph itself.
pub struct ObjectiveBatch<'a, T: Scalar> {
    /// One `[B, C, H, W]` target per predicted step.
    pub targets: &'a [Tensor<T>],
    /// Environment id of each batch element.
    pub env_ids: &'a [u32],
    pub partition: PartitionMode,
    pub step_bucket: usize,
    pub fwe: Arc<FreqWeightedError<T>>,
}

/// Builds the total objective on the graph. `preds` are the rollout nodes,
/// `soft_masks` the `[K, S·C]` soft mask node. Returns the loss node and
/// its breakdown (epoch/step fields zero).
pub fn graph_objective<T: Scalar>(
    g: &mut Graph<T>,
    preds: &[Var],
    soft_masks: Var,
    batch: &ObjectiveBatch<'_, T>,
    weights: &LossWeights,
    lambda_inv: f64,
) -> Result<(Var, LossBreakdown)> {
    if preds.len() != batch.targets.len() || preds.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), batch.targets.len())));
    }
    for (p, t) in preds.iter().zip(batch.targets) {
        if g.shape(*p) != t.shape() || t.shape()[0] != batch.env_ids.len() {
            return Err(Error::Shape(format!("prediction {:?} vs target {:?}", g.shape(*p), t.shape())));
        }
    }
    let steps = preds.len();
    let mse: Vec<Var> = preds.iter().zip(batch.targets).map(|(p, t)| g.per_sample_mse(*p, t)).collect();
    let mse = g.concat(&mse);
    let by_env = partition_keys(batch.env_ids, steps, PartitionMode::ByEnv, 1);
    let env_risk = g.group_mean(mse, &by_env.groups, by_env.keys.len());
    let pred = g.mean_all(env_risk);

    let keyed = if batch.partition == PartitionMode::ByEnv {
        env_risk
    } else {
        let p = partition_keys(batch.env_ids, steps, batch.partition, batch.step_bucket);
        g.group_mean(mse, &p.groups, p.keys.len())
    };
    let inv = g.variance(keyed);

    let mut terms = vec![(pred, T::from_f64_lossy(weights.pred)), (inv, T::from_f64_lossy(lambda_inv))];
    let freq = if weights.freq > 0.0 {
        let fr: Vec<Var> = preds.iter().zip(batch.targets).map(|(p, t)| g.per_sample_freq(*p, t, batch.fwe.clone())).collect();
        let fr = g.concat(&fr);
        let env_freq = g.group_mean(fr, &by_env.groups, by_env.keys.len());
        let freq = g.mean_all(env_freq);
        terms.push((freq, T::from_f64_lossy(weights.freq)));
        Some(freq)
    } else {
        None
    };
    let mask = g.mask_diversity(soft_masks);
    terms.push((mask, T::from_f64_lossy(weights.mask)));
    let total = g.weighted_sum(&terms);
    let val = |g: &Graph<T>, v: Var| g.value(v).item().to_f64_lossy();
    let breakdown = LossBreakdown {
        epoch: 0,
        step: 0,
        pred: val(g, pred),
        inv: val(g, inv),
        freq: freq.map_or(0.0, |f| val(g, f)),
        mask: val(g, mask),
        lambda_inv,
        total: val(g, total),
    };
    Ok((total, breakdown))
}
