//! Zero-shot metrics: nMSE, banded fRMSE, per-environment reports and the
//! ID/OOD least-squares fit.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Tensor;
use crate::datasets::{Dataset, NormStats};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, CondNorm, MooeModel};
use crate::scalar::Scalar;
use crate::spectral::{default_bands, radial_band_rmse, total_band, DERIVATIVE_ORDERING_VERSION};

/// `‖pred − truth‖² / ‖truth‖²` over the whole block.
pub fn nmse(pred: ArrayView4<f64>, truth: ArrayView4<f64>) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", pred.dim(), truth.dim())));
    }
    let den: f64 = truth.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let num: f64 = pred.iter().zip(truth.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frmse {
    pub total: f64,
    /// `None` when the grid is too coarse to hold the band.
    pub low: Option<f64>,
    pub mid: Option<f64>,
    pub high: Option<f64>,
}

pub fn frmse(pred: ArrayView4<f64>, truth: ArrayView4<f64>) -> Result<Frmse> {
    let (_, _, h, w) = pred.dim();
    let bands = default_bands(h, w);
    let mut list = vec![total_band(h, w)];
    list.extend(bands.iter().flatten());
    let vals = radial_band_rmse(pred, truth, &list)?;
    let mut it = vals[1..].iter();
    let mut next = |b: &Option<_>| b.as_ref().map(|_| *it.next().expect("band value"));
    Ok(Frmse { total: vals[0], low: next(&bands[0]), mid: next(&bands[1]), high: next(&bands[2]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvRecord {
    pub env_id: u32,
    pub split: String,
    pub nmse: f64,
    pub frmse: Frmse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Aggregate {
    pub fn of(vals: &[f64]) -> Self {
        if vals.is_empty() {
            return Aggregate { mean: f64::NAN, std: f64::NAN };
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        Aggregate { mean, std }
    }
}

pub const METRICS: [&str; 5] = ["nmse", "frmse_total", "frmse_low", "frmse_mid", "frmse_high"];

impl EnvRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "nmse" => Some(self.nmse),
            "frmse_total" => Some(self.frmse.total),
            "frmse_low" => self.frmse.low,
            "frmse_mid" => self.frmse.mid,
            "frmse_high" => self.frmse.high,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub system: String,
    pub records: Vec<EnvRecord>,
    /// split → metric → aggregate.
    pub aggregates: BTreeMap<String, BTreeMap<String, Aggregate>>,
}

impl MetricsReport {
    pub fn new(system: &str, records: Vec<EnvRecord>) -> Self {
        let mut r = MetricsReport { system: system.to_string(), records, aggregates: BTreeMap::new() };
        r.aggregates = r.compute_aggregates();
        r
    }

    pub fn compute_aggregates(&self) -> BTreeMap<String, BTreeMap<String, Aggregate>> {
        let mut splits: BTreeMap<String, Vec<&EnvRecord>> = BTreeMap::new();
        for rec in &self.records {
            splits.entry(rec.split.clone()).or_default().push(rec);
        }
        splits
            .into_iter()
            .map(|(split, recs)| {
                let per_metric = METRICS
                    .iter()
                    .filter_map(|m| {
                        let vals: Vec<f64> = recs.iter().filter_map(|r| r.metric(m)).collect();
                        (!vals.is_empty()).then(|| (m.to_string(), Aggregate::of(&vals)))
                    })
                    .collect();
                (split, per_metric)
            })
            .collect()
    }

    pub fn merge(mut self, other: MetricsReport) -> Self {
        self.records.extend(other.records);
        MetricsReport::new(&self.system.clone(), self.records)
    }

    pub fn aggregate(&self, split: &str, metric: &str) -> Option<Aggregate> {
        self.aggregates.get(split).and_then(|m| m.get(metric)).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Per-environment table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,env_id,");
        out.push_str(&METRICS.join(","));
        out.push('\n');
        for r in &self.records {
            let vals: Vec<String> = METRICS.iter().map(|m| r.metric(m).map_or(String::new(), |v| format!("{v:.6e}"))).collect();
            out.push_str(&format!("{},{},{}\n", r.split, r.env_id, vals.join(",")));
        }
        out
    }

    /// Split aggregates as `split,metric,mean,std`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("split,metric,mean,std\n");
        for (split, metrics) in &self.aggregates {
            for (m, a) in metrics {
                out.push_str(&format!("{split},{m},{:.6e},{:.6e}\n", a.mean, a.std));
            }
        }
        out
    }
}

/// Anything that maps a normalised history window to future frames.
pub trait Forecaster {
    /// `history: [B, W·C, H, W]`, `cond: [B, P]`; returns `steps` frames `[B, C, H, W]`.
    fn forecast(&self, history: &Tensor<f64>, cond: &Tensor<f64>, steps: usize) -> Result<Vec<Tensor<f64>>>;
    fn window(&self) -> usize;
}

impl Forecaster for MooeModel<f64> {
    fn forecast(&self, history: &Tensor<f64>, cond: &Tensor<f64>, steps: usize) -> Result<Vec<Tensor<f64>>> {
        self.predict(history, cond, steps)
    }

    fn window(&self) -> usize {
        self.config.expert.window
    }
}

fn rescale(a: &mut ndarray::ArrayViewMutD<f64>, norm: &NormStats, inverse: bool) {
    let axis = Axis(a.ndim() - 3);
    for mut lane in a.lanes_mut(axis) {
        for (c, v) in lane.iter_mut().enumerate() {
            *v = if inverse { *v * norm.std[c] + norm.mean[c] } else { (*v - norm.mean[c]) / norm.std[c] };
        }
    }
}

/// Frozen-model rollout of every trajectory, scored in physical units.
pub fn report_with(f: &dyn Forecaster, norm: &NormStats, cond: &CondNorm, data: &Dataset) -> Result<MetricsReport> {
    let l = &data.manifest.layout;
    let window = f.window();
    if l.n_t <= window {
        return Err(Error::Config(format!("window {window} leaves nothing to forecast in {} frames", l.n_t)));
    }
    if norm.channels() != l.channels {
        return Err(Error::Shape(format!("normalisation has {} channels, data has {}", norm.channels(), l.channels)));
    }
    let steps = l.n_t - window;
    let (c, h, w) = (l.channels, l.height, l.width);
    let split = data.manifest.split.dir_name().to_string();
    let mut records = Vec::with_capacity(data.n_envs());
    for (ei, env) in data.manifest.environments.iter().enumerate() {
        let raw = &data.data[ei];
        let n = raw.shape()[0];
        let mut hist = raw.slice(s![.., 0..window, .., .., ..]).mapv(|v| v as f64);
        rescale(&mut hist.view_mut().into_dyn(), norm, false);
        let history = Tensor::new(vec![n, window * c, h, w], hist.iter().copied().collect());
        let cv = cond.encode(env);
        let condt = Tensor::new(vec![n, cv.len()], cv.iter().copied().cycle().take(n * cv.len()).collect());
        let frames = f.forecast(&history, &condt, steps)?;
        let mut pred = Array4::<f64>::zeros((n * steps, c, h, w));
        for (t, fr) in frames.iter().enumerate() {
            for j in 0..n {
                let src = &fr.data()[j * c * h * w..(j + 1) * c * h * w];
                pred.index_axis_mut(Axis(0), j * steps + t).iter_mut().zip(src).for_each(|(d, s)| *d = *s);
            }
        }
        rescale(&mut pred.view_mut().into_dyn(), norm, true);
        let (mut nm, mut tot, mut bands) = (0.0, 0.0, [0.0f64; 3]);
        let mut band_present = [false; 3];
        for j in 0..n {
            let p = pred.slice(s![j * steps..(j + 1) * steps, .., .., ..]);
            let truth = raw.slice(s![j, window.., .., .., ..]).mapv(|v| v as f64);
            nm += nmse(p, truth.view())?;
            let fr = frmse(p, truth.view())?;
            tot += fr.total;
            for (k, v) in [fr.low, fr.mid, fr.high].iter().enumerate() {
                if let Some(v) = v {
                    bands[k] += v;
                    band_present[k] = true;
                }
            }
        }
        let nf = n as f64;
        let band = |k: usize| band_present[k].then(|| bands[k] / nf);
        records.push(EnvRecord {
            env_id: env.env_id,
            split: split.clone(),
            nmse: nm / nf,
            frmse: Frmse { total: tot / nf, low: band(0), mid: band(1), high: band(2) },
        });
    }
    Ok(MetricsReport::new(data.manifest.system.as_str(), records))
}

/// Report for a checkpoint; the model is rebuilt and never updated.
pub fn report(ck: &Checkpoint, data: &Dataset) -> Result<MetricsReport> {
    if ck.meta.ordering_version != DERIVATIVE_ORDERING_VERSION {
        return Err(Error::OrderingVersion { found: ck.meta.ordering_version, expected: DERIVATIVE_ORDERING_VERSION });
    }
    if ck.meta.system != data.manifest.system.as_str() {
        return Err(Error::Invalid(format!("checkpoint is for `{}`, data is `{}`", ck.meta.system, data.manifest.system.as_str())));
    }
    let model = ck.model::<f64>()?;
    report_with(&model, &ck.meta.norm, &ck.meta.cond, data)
}

/// SHA-256 over parameter names, shapes and values.
pub fn weight_hash<T: Scalar>(model: &MooeModel<T>) -> String {
    let mut h = Sha256::new();
    for (name, shape, vals) in model.named_params() {
        h.update(name.as_bytes());
        for d in shape {
            h.update((d as u64).to_le_bytes());
        }
        for v in vals {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub run_tag: String,
    pub id_error: f64,
    pub ood_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdOodFit {
    pub points: Vec<FitPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of OOD error on ID error.
pub fn id_ood_fit(points: &[FitPoint]) -> Result<IdOodFit> {
    if points.len() < 2 {
        return Err(Error::Degenerate(format!("{} points, need at least 2", points.len())));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.id_error).sum::<f64>() / n;
    let my = points.iter().map(|p| p.ood_error).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.id_error - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.id_error - mx) * (p.ood_error - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.ood_error - my).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0).powi(2) * n {
        return Err(Error::Degenerate("all ID errors are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(IdOodFit { points: points.to_vec(), slope, intercept, r2 })
}
