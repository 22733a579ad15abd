//! Python bindings: data generation, models, training, evaluation and the
//! loss helpers. Arrays cross the boundary as flat lists plus a shape.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use imooe::autograd::Tensor;
use imooe::datasets::{self, GenerateConfig, Split, SystemId};
use imooe::evaluation;
use imooe::model::{Checkpoint, ModelConfig, MooeModel};
use imooe::objectives::{self, EnvKey, LossWeights, RiskTable};
use imooe::training::{self, TrainConfig};
use imooe::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Hdf5(_) | Error::SolverBlowUp { .. } | Error::RolloutBlowUp { .. } | Error::NonFiniteLoss { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_split(name: &str) -> PyResult<Split> {
    Split::ALL
        .into_iter()
        .find(|s| s.dir_name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown split `{name}` (train, id or ood)")))
}

fn array4(data: Vec<f64>, shape: Vec<usize>) -> PyResult<ndarray::Array4<f64>> {
    let s: [usize; 4] = shape.try_into().map_err(|_| PyValueError::new_err("expected a 4-D shape [steps, C, H, W]"))?;
    ndarray::Array4::from_shape_vec(s, data).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Simulates one split into `out_dir`; returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (system, split, n_envs, n_traj, resolution, seed, out_dir))]
fn generate(system: &str, split: &str, n_envs: usize, n_traj: usize, resolution: usize, seed: u64, out_dir: PathBuf) -> PyResult<String> {
    let system: SystemId = system.parse().map_err(py_err)?;
    let cfg = GenerateConfig { system, split: parse_split(split)?, n_envs, n_traj, resolution, seed };
    let m = datasets::generate(&cfg, out_dir).map_err(py_err)?;
    serde_json::to_string(&m).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A dataset split read from disk.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: datasets::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn read(dir: PathBuf) -> PyResult<Self> {
        Ok(PyDataset { inner: datasets::read_dataset(dir).map_err(py_err)? })
    }

    fn n_envs(&self) -> usize {
        self.inner.n_envs()
    }

    fn n_traj(&self, env: usize) -> PyResult<usize> {
        if env >= self.inner.n_envs() {
            return Err(PyValueError::new_err("environment index out of range"));
        }
        Ok(self.inner.n_traj(env))
    }

    fn manifest_json(&self) -> String {
        serde_json::to_string(&self.inner.manifest).expect("manifest serialises")
    }

    /// `(flat values, [N_t, C, H, W])` of one trajectory.
    fn trajectory(&self, env: usize, traj: usize) -> PyResult<(Vec<f32>, Vec<usize>)> {
        if env >= self.inner.n_envs() || traj >= self.inner.n_traj(env) {
            return Err(PyValueError::new_err("trajectory index out of range"));
        }
        let t = self.inner.trajectory(env, traj);
        Ok((t.iter().copied().collect(), t.shape().to_vec()))
    }
}

/// The forecaster in double precision.
#[pyclass(name = "Model")]
struct PyModel {
    inner: MooeModel<f64>,
}

#[pymethods]
impl PyModel {
    /// Builds a freshly initialised model from a JSON model configuration.
    #[new]
    fn new(config_json: &str, seed: u64) -> PyResult<Self> {
        let cfg: ModelConfig = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyModel { inner: MooeModel::new(cfg, seed).map_err(py_err)? })
    }

    #[staticmethod]
    fn from_checkpoint(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(path).map_err(py_err)?;
        Ok(PyModel { inner: ck.model().map_err(py_err)? })
    }

    fn config_json(&self) -> String {
        serde_json::to_string(&self.inner.config).expect("config serialises")
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn soft_masks(&self) -> Vec<Vec<f64>> {
        self.inner.soft_masks()
    }

    fn hard_masks(&self) -> Vec<Vec<bool>> {
        self.inner.hard_masks()
    }

    fn weight_hash(&self) -> String {
        evaluation::weight_hash(&self.inner)
    }

    /// Rolls out `steps` frames from a normalised history `[B, W·C, H, W]`
    /// and conditioning `[B, P]`; returns one flat `[B, C, H, W]` list per step.
    fn predict(&self, history: Vec<f64>, shape: Vec<usize>, cond: Vec<f64>, steps: usize) -> PyResult<Vec<Vec<f64>>> {
        if shape.len() != 4 || shape.iter().product::<usize>() != history.len() {
            return Err(PyValueError::new_err("history length does not match its shape"));
        }
        let b = shape[0];
        if b == 0 || cond.len() % b != 0 {
            return Err(PyValueError::new_err("conditioning length must be a multiple of the batch size"));
        }
        let p = cond.len() / b;
        let out = self
            .inner
            .predict(&Tensor::new(shape, history), &Tensor::new(vec![b, p], cond), steps)
            .map_err(py_err)?;
        Ok(out.into_iter().map(Tensor::into_data).collect())
    }
}

/// Trains from a TOML configuration; returns the history as JSON lines.
#[pyfunction]
#[pyo3(signature = (config_toml, data_dir, out_dir=None))]
fn train(config_toml: &str, data_dir: PathBuf, out_dir: Option<PathBuf>) -> PyResult<Vec<String>> {
    let cfg = TrainConfig::from_toml(config_toml).map_err(py_err)?;
    let data = datasets::read_dataset(data_dir).map_err(py_err)?;
    let out = training::train(&cfg, &data, out_dir.as_deref(), None).map_err(py_err)?;
    Ok(out.history.iter().map(|h| h.to_json_line()).collect())
}

/// Evaluates a checkpoint on a dataset split; returns the report as JSON.
#[pyfunction]
fn evaluate(checkpoint: PathBuf, data_dir: PathBuf) -> PyResult<String> {
    let ck = Checkpoint::load(checkpoint).map_err(py_err)?;
    let data = datasets::read_dataset(data_dir).map_err(py_err)?;
    Ok(evaluation::report(&ck, &data).map_err(py_err)?.to_json())
}

#[pyfunction]
fn nmse(pred: Vec<f64>, truth: Vec<f64>, shape: Vec<usize>) -> PyResult<f64> {
    let p = array4(pred, shape.clone())?;
    let t = array4(truth, shape)?;
    evaluation::nmse(p.view(), t.view()).map_err(py_err)
}

/// `(total, low, mid, high)`; absent bands are `None`.
#[pyfunction]
fn frmse(pred: Vec<f64>, truth: Vec<f64>, shape: Vec<usize>) -> PyResult<(f64, Option<f64>, Option<f64>, Option<f64>)> {
    let p = array4(pred, shape.clone())?;
    let t = array4(truth, shape)?;
    let f = evaluation::frmse(p.view(), t.view()).map_err(py_err)?;
    Ok((f.total, f.low, f.mid, f.high))
}

#[pyfunction]
fn mask_diversity_loss(masks: Vec<Vec<f64>>) -> f64 {
    objectives::mask_diversity_loss(&masks)
}

#[pyfunction]
fn risk_variance(risks: Vec<f64>) -> PyResult<f64> {
    let table = RiskTable(risks.iter().enumerate().map(|(i, r)| (EnvKey { env_id: i as u32, step: None }, *r)).collect());
    objectives::risk_variance(&table).map_err(py_err)
}

/// Invariance weight at `epoch` under the default schedule.
#[pyfunction]
fn lambda_inv(epoch: usize) -> PyResult<f64> {
    objectives::lambda_inv(epoch, &LossWeights::default()).map_err(py_err)
}

#[pymodule]
fn imooe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(frmse, m)?)?;
    m.add_function(wrap_pyfunction!(mask_diversity_loss, m)?)?;
    m.add_function(wrap_pyfunction!(risk_variance, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_inv, m)?)?;
    Ok(())
}
