use std::path::Path;

use imooe::autograd::Tensor;
use imooe::datasets::{generate, read_dataset, Dataset, GenerateConfig, Split, SystemId};
use imooe::evaluation::{report_with, Forecaster};
use imooe::model::{Checkpoint, MooeModel};
use imooe::training::{train, Precision, TrainConfig, FINAL_CHECKPOINT};
use imooe::Error;

fn tiny_data(dir: &Path, split: Split) -> Dataset {
    let cfg = GenerateConfig { system: SystemId::Dr, split, n_envs: 2, n_traj: 2, resolution: 16, seed: 3 };
    generate(&cfg, dir).unwrap();
    read_dataset(dir).unwrap()
}

fn tiny_config(epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig { epochs, batch_size: 2, precision: Precision::F64, checkpoint_every: 1, ..Default::default() };
    cfg.model.expert.width = 8;
    cfg.model.expert.modes = 4;
    cfg.model.expert.layers = 2;
    cfg.model.expert.window = 4;
    cfg.model.fusion.head_width = 8;
    cfg.weights = cfg.weights.rescaled(4);
    cfg
}

#[test]
fn zero_epochs_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(&dir.path().join("train"), Split::TrainId);
    let cfg = tiny_config(0);
    let out = train(&cfg, &data, Some(&dir.path().join("run")), None).unwrap();
    assert!(out.history.is_empty());
    let path = out.checkpoint_path.unwrap();
    assert!(path.ends_with(FINAL_CHECKPOINT));
    let fresh = MooeModel::<f64>::new(cfg.model_config(&data), cfg.seed).unwrap();
    let loaded = Checkpoint::load(&path).unwrap().model::<f64>().unwrap();
    assert_eq!(loaded.params.flatten(), fresh.params.flatten());
}

#[test]
fn resume_continues_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(&dir.path().join("train"), Split::TrainId);
    let cfg = tiny_config(2);
    let full = train(&cfg, &data, Some(&dir.path().join("full")), None).unwrap();
    let mid = Checkpoint::load(dir.path().join("full").join("epoch0001.h5")).unwrap();
    assert_eq!(mid.meta.epoch, 1);
    let resumed = train(&cfg, &data, Some(&dir.path().join("resumed")), Some(&mid)).unwrap();
    let a = full.checkpoint.model::<f64>().unwrap().params.flatten();
    let b = resumed.checkpoint.model::<f64>().unwrap().params.flatten();
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-12, "parameters differ by {worst}");
    let last_full = full.history.last().unwrap();
    let last_resumed = resumed.history.last().unwrap();
    assert_eq!(last_full.step, last_resumed.step);
    assert!((last_full.total - last_resumed.total).abs() <= 1e-12 * last_full.total.abs());
}

#[test]
fn non_finite_parameters_stop_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(&dir.path().join("train"), Split::TrainId);
    let cfg = tiny_config(2);
    train(&cfg, &data, Some(&dir.path().join("run")), None).unwrap();
    let mut ck = Checkpoint::load(dir.path().join("run").join("epoch0001.h5")).unwrap();
    ck.params[0].2[0] = f64::NAN;
    match train(&cfg, &data, None, Some(&ck)) {
        Err(Error::NonFiniteLoss { epoch, .. }) => assert_eq!(epoch, 1),
        other => panic!("expected a non-finite loss error, got {:?}", other.map(|o| o.history.len())),
    }
}

/// Returns the true continuation read straight from the dataset.
struct Oracle<'a> {
    data: &'a Dataset,
    env: std::cell::Cell<usize>,
    window: usize,
    norm: &'a imooe::datasets::NormStats,
}

impl Forecaster for Oracle<'_> {
    fn forecast(&self, history: &Tensor<f64>, _cond: &Tensor<f64>, steps: usize) -> imooe::Result<Vec<Tensor<f64>>> {
        let env = self.env.get();
        self.env.set(env + 1);
        let raw = &self.data.data[env];
        let (n, c) = (history.shape()[0], self.data.manifest.layout.channels);
        let frame = history.shape()[2] * history.shape()[3];
        Ok((0..steps)
            .map(|t| {
                let mut out = Vec::with_capacity(n * c * frame);
                for j in 0..n {
                    for ch in 0..c {
                        let (m, s) = (self.norm.mean[ch], self.norm.std[ch]);
                        out.extend(raw.slice(ndarray::s![j, self.window + t, ch, .., ..]).iter().map(|v| (*v as f64 - m) / s));
                    }
                }
                Tensor::new(vec![n, c, history.shape()[2], history.shape()[3]], out)
            })
            .collect())
    }

    fn window(&self) -> usize {
        self.window
    }
}

#[test]
fn perfect_forecaster_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(&dir.path().join("ood"), Split::TestOod);
    let cfg = tiny_config(0);
    let out = train(&cfg, &data, None, None).unwrap();
    let norm = &out.checkpoint.meta.norm;
    let oracle = Oracle { data: &data, env: 0.into(), window: 4, norm };
    let r = report_with(&oracle, norm, &out.checkpoint.meta.cond, &data).unwrap();
    assert_eq!(r.records.len(), data.n_envs());
    for rec in &r.records {
        assert!(rec.nmse < 1e-20, "{rec:?}");
        assert!(rec.frmse.total < 1e-9, "{rec:?}");
    }
}
