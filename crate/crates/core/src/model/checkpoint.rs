//! Single-file HDF5 checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CondNorm, ModelConfig, MooeModel};
use crate::datasets::NormStats;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::DERIVATIVE_ORDERING_VERSION;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything except the tensors, stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub ordering_version: u32,
    pub system: String,
    pub model: ModelConfig,
    /// State normalisation the model was trained under.
    pub norm: NormStats,
    pub cond: CondNorm,
    /// Training configuration, kept opaque here.
    #[serde(default)]
    pub train: serde_json::Value,
    /// Epochs completed.
    pub epoch: usize,
    /// Optimiser steps taken.
    pub step: usize,
    pub param_names: Vec<String>,
}

/// Adam moments, one vector per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// `(name, shape, values)` in model order.
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(
        model: &MooeModel<T>,
        system: &str,
        norm: NormStats,
        cond: CondNorm,
        train: serde_json::Value,
        epoch: usize,
        step: usize,
        optimizer: Option<OptimizerState>,
    ) -> Self {
        let params = model.named_params();
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            ordering_version: DERIVATIVE_ORDERING_VERSION,
            system: system.to_string(),
            model: model.config.clone(),
            norm,
            cond,
            train,
            epoch,
            step,
            param_names: params.iter().map(|p| p.0.clone()).collect(),
        };
        Checkpoint { meta, params, optimizer }
    }

    pub fn model<T: Scalar>(&self) -> Result<MooeModel<T>> {
        MooeModel::from_params(self.meta.model.clone(), self.params.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = hdf5::File::create(path)?;
        let meta = serde_json::to_vec(&self.meta)?;
        file.new_dataset::<u8>().shape([meta.len()]).create("meta")?.write_raw(&meta)?;
        let params = file.create_group("params")?;
        for (name, shape, data) in &self.params {
            params.new_dataset::<f64>().shape(shape.as_slice()).create(name.as_str())?.write_raw(data)?;
        }
        if let Some(opt) = &self.optimizer {
            let adam = file.create_group("adam")?;
            adam.new_dataset::<u64>().shape([1]).create("t")?.write_raw(&[opt.t])?;
            for (group, moments) in [("m", &opt.m), ("v", &opt.v)] {
                let g = adam.create_group(group)?;
                for ((name, _, _), vals) in self.params.iter().zip(moments) {
                    g.new_dataset::<f64>().shape([vals.len()]).create(name.as_str())?.write_raw(vals)?;
                }
            }
        }
        file.flush()?;
        Ok(())
    }

    /// Loads a checkpoint, refusing a different derivative ordering.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        let file = hdf5::File::open(path)?;
        let raw = file.dataset("meta")?.read_raw::<u8>()?;
        let value: serde_json::Value = serde_json::from_slice(&raw)?;
        let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::Version { found, supported: CHECKPOINT_VERSION });
        }
        let ordering = value.get("ordering_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if ordering != DERIVATIVE_ORDERING_VERSION {
            return Err(Error::OrderingVersion { found: ordering, expected: DERIVATIVE_ORDERING_VERSION });
        }
        let meta: CheckpointMeta = serde_json::from_value(value)?;
        let mut params = Vec::with_capacity(meta.param_names.len());
        for name in &meta.param_names {
            let ds = file.dataset(&format!("params/{name}"))?;
            params.push((name.clone(), ds.shape(), ds.read_raw::<f64>()?));
        }
        let optimizer = if file.link_exists("adam") {
            let t = file.dataset("adam/t")?.read_raw::<u64>()?[0];
            let read = |g: &str| -> Result<Vec<Vec<f64>>> {
                meta.param_names.iter().map(|n| Ok(file.dataset(&format!("adam/{g}/{n}"))?.read_raw::<f64>()?)).collect()
            };
            Some(OptimizerState { t, m: read("m")?, v: read("v")? })
        } else {
            None
        };
        Ok(Checkpoint { meta, params, optimizer })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_config;
    use crate::model::FusionMode;

    fn sample() -> Checkpoint {
        let model = MooeModel::<f64>::new(tiny_config(2, FusionMode::Nonlinear), 7).unwrap();
        let cond = CondNorm { names: vec!["a".into(), "b".into(), "c".into()], mean: vec![0.0; 3], std: vec![1.0; 3], unknown: false };
        let n = model.params.tensors.len();
        let opt = OptimizerState {
            t: 5,
            m: model.params.tensors.iter().map(|t| vec![0.5; t.len()]).collect(),
            v: (0..n).map(|i| vec![i as f64; model.params.tensors[i].len()]).collect(),
        };
        Checkpoint::from_model(&model, "dr", NormStats::identity(2), cond, serde_json::json!({"lr": 1e-3}), 3, 12, Some(opt))
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        let p = dir.path().join("ck.h5");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        let m: MooeModel<f64> = back.model().unwrap();
        assert_eq!(m.named_params(), ck.params);
    }

    #[test]
    fn ordering_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut ck = sample();
        ck.meta.ordering_version = DERIVATIVE_ORDERING_VERSION + 1;
        let p = dir.path().join("ck.h5");
        ck.save(&p).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::OrderingVersion { .. })));
    }
}
