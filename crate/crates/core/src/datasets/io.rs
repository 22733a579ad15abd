//! On-disk dataset container.
//!
//! ```text
//! DIR/manifest.json   UTF-8 JSON, see [`DatasetManifest`]
//! DIR/data.h5         group env_{id:04d}, dataset `u` f32 [n_traj, N_t, C, H, W]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array4, Array5, ArrayView4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::solvers::simulate;
use super::{sample_environments, Environment, Split, SystemId, SystemSpec, Trajectory};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.h5";

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        NormStats { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() || self.mean.is_empty() {
            return Err(Error::Shape(format!(
                "normalisation stats have {} means and {} stds",
                self.mean.len(),
                self.std.len()
            )));
        }
        for (c, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            if !m.is_finite() || !s.is_finite() || *s <= 0.0 {
                return Err(Error::Invalid(format!("channel {c} has mean {m} and std {s}; std must be > 0")));
            }
        }
        Ok(())
    }

    /// Normalises a `[.., C, H, W]` array in place (channel axis at `ndim-3`).
    pub fn normalize_in_place<D: ndarray::Dimension + ndarray::RemoveAxis>(&self, a: &mut ndarray::Array<f32, D>) {
        self.apply(a, |v, m, s| ((v as f64 - m) / s) as f32);
    }

    pub fn denormalize_in_place<D: ndarray::Dimension + ndarray::RemoveAxis>(&self, a: &mut ndarray::Array<f32, D>) {
        self.apply(a, |v, m, s| (v as f64 * s + m) as f32);
    }

    fn apply<D: ndarray::Dimension + ndarray::RemoveAxis>(&self, a: &mut ndarray::Array<f32, D>, f: impl Fn(f32, f64, f64) -> f32) {
        let ax = Axis(a.ndim() - 3);
        for (c, mut lane) in a.axis_iter_mut(ax).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            lane.mapv_inplace(|v| f(v, m, s));
        }
    }
}

/// Running per-channel moments, merged with Chan's update.
#[derive(Debug, Clone)]
struct Moments {
    n: Vec<f64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(channels: usize) -> Self {
        Moments { n: vec![0.0; channels], mean: vec![0.0; channels], m2: vec![0.0; channels] }
    }

    /// Adds a `[n_traj, N_t, C, H, W]` block.
    fn add(&mut self, u: &Array5<f32>) {
        for (c, lane) in u.axis_iter(Axis(2)).enumerate() {
            let nb = lane.len() as f64;
            if nb == 0.0 {
                continue;
            }
            let mb = lane.iter().map(|v| *v as f64).sum::<f64>() / nb;
            let m2b = lane.iter().map(|v| (*v as f64 - mb).powi(2)).sum::<f64>();
            let na = self.n[c];
            let n = na + nb;
            let delta = mb - self.mean[c];
            self.mean[c] += delta * nb / n;
            self.m2[c] += m2b + delta * delta * na * nb / n;
            self.n[c] = n;
        }
    }

    fn finish(&self) -> NormStats {
        NormStats {
            mean: self.mean.clone(),
            std: self.m2.iter().zip(&self.n).map(|(m2, n)| (m2 / n).sqrt()).collect(),
        }
    }
}

/// Array layout descriptor stored in the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayLayout {
    pub order: String,
    pub axes: Vec<String>,
    pub n_traj: usize,
    pub n_t: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ArrayLayout {
    pub fn new(n_traj: usize, n_t: usize, channels: usize, height: usize, width: usize) -> Self {
        ArrayLayout {
            order: "C".into(),
            axes: ["traj", "t", "c", "y", "x"].iter().map(|s| s.to_string()).collect(),
            n_traj,
            n_t,
            channels,
            height,
            width,
        }
    }

    pub fn shape(&self) -> [usize; 5] {
        [self.n_traj, self.n_t, self.channels, self.height, self.width]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub system: SystemId,
    pub split: Split,
    pub environments: Vec<Environment>,
    /// Statistics of this split's arrays. Training consumes the stats of
    /// the train split; evaluation uses the ones stored in the checkpoint.
    pub norm: NormStats,
    pub channel_names: Vec<String>,
    pub dtype: String,
    pub layout: ArrayLayout,
    pub dt_saved: f64,
    pub dx: f64,
    pub dy: f64,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Version { found: self.schema_version, supported: SCHEMA_VERSION });
        }
        if self.dtype != "float32" {
            return Err(Error::Invalid(format!("unsupported dtype `{}`", self.dtype)));
        }
        if self.norm.channels() != self.layout.channels {
            return Err(Error::Shape(format!(
                "manifest has {} channels but stats for {}",
                self.layout.channels,
                self.norm.channels()
            )));
        }
        self.norm.validate()
    }

    pub fn spec(&self) -> SystemSpec {
        SystemSpec::new(self.system)
    }
}

/// A dataset loaded into memory: one `[n_traj, N_t, C, H, W]` block per environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub data: Vec<Array5<f32>>,
}

impl Dataset {
    pub fn n_envs(&self) -> usize {
        self.data.len()
    }

    pub fn n_traj(&self, env: usize) -> usize {
        self.data[env].len_of(Axis(0))
    }

    pub fn trajectory(&self, env: usize, traj: usize) -> ArrayView4<'_, f32> {
        self.data[env].index_axis(Axis(0), traj)
    }

    /// Copy normalised with `stats`.
    pub fn normalized(&self, stats: &NormStats) -> Result<Dataset> {
        if stats.channels() != self.manifest.layout.channels {
            return Err(Error::Shape(format!(
                "stats for {} channels, data has {}",
                stats.channels(),
                self.manifest.layout.channels
            )));
        }
        let mut out = self.clone();
        for block in &mut out.data {
            stats.normalize_in_place(block);
        }
        Ok(out)
    }

    /// Keeps the first `n_envs` environments and `n_traj` trajectories of each.
    pub fn subset(&self, n_envs: Option<usize>, n_traj: Option<usize>) -> Dataset {
        let ne = n_envs.unwrap_or(self.n_envs()).min(self.n_envs());
        let mut out = self.clone();
        out.data.truncate(ne);
        out.manifest.environments.truncate(ne);
        if let Some(nt) = n_traj {
            for b in &mut out.data {
                let keep = nt.min(b.len_of(Axis(0)));
                *b = b.slice(s![..keep, .., .., .., ..]).to_owned();
            }
            out.manifest.layout.n_traj = out.data.iter().map(|b| b.len_of(Axis(0))).min().unwrap_or(0);
        }
        out
    }
}

fn group_name(env_id: u32) -> String {
    format!("env_{env_id:04}")
}

/// Streams environments into a dataset directory, accumulating statistics.
pub struct DatasetWriter {
    dir: PathBuf,
    file: hdf5::File,
    manifest: DatasetManifest,
    moments: Moments,
}

impl DatasetWriter {
    /// Creates `dir` and an empty `data.h5`. `layout.n_traj` is the expected
    /// trajectory count per environment.
    pub fn create(dir: impl AsRef<Path>, mut manifest: DatasetManifest) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let file = hdf5::File::create(dir.join(DATA_FILE))?;
        manifest.environments.clear();
        let channels = manifest.layout.channels;
        Ok(DatasetWriter { dir, file, manifest, moments: Moments::new(channels) })
    }

    pub fn write_env(&mut self, env: &Environment, u: &Array5<f32>) -> Result<()> {
        let expected = self.manifest.layout.shape();
        if u.shape() != expected {
            return Err(Error::Shape(format!("env {} block {:?}, manifest expects {:?}", env.env_id, u.shape(), expected)));
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid(format!("env {} contains non-finite values", env.env_id)));
        }
        let group = self.file.create_group(&group_name(env.env_id))?;
        let ds = group.new_dataset::<f32>().shape(u.shape()).create("u")?;
        let data = u.as_standard_layout();
        ds.write_raw(data.as_slice().expect("standard layout"))?;
        self.moments.add(u);
        self.manifest.environments.push(env.clone());
        Ok(())
    }

    /// Writes the manifest with the accumulated statistics.
    pub fn finish(mut self) -> Result<DatasetManifest> {
        self.manifest.norm = self.moments.finish();
        self.manifest.validate()?;
        self.file.flush()?;
        write_manifest(&self.dir, &self.manifest)?;
        Ok(self.manifest)
    }
}

fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes `data` (one block per manifest environment) under `dir`.
pub fn write_dataset(manifest: &DatasetManifest, data: &[Array5<f32>], dir: impl AsRef<Path>) -> Result<()> {
    manifest.validate()?;
    if data.len() != manifest.environments.len() {
        return Err(Error::Shape(format!(
            "{} arrays for {} environments",
            data.len(),
            manifest.environments.len()
        )));
    }
    let dir = dir.as_ref();
    let mut w = DatasetWriter::create(dir, manifest.clone())?;
    for (env, u) in manifest.environments.iter().zip(data) {
        w.write_env(env, u)?;
    }
    w.file.flush()?;
    write_manifest(dir, manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(Error::Version { found, supported: SCHEMA_VERSION });
    }
    let manifest: DatasetManifest = serde_json::from_value(value)?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let file = hdf5::File::open(dir.join(DATA_FILE))?;
    let expected = manifest.layout.shape();
    let mut data = Vec::with_capacity(manifest.environments.len());
    for env in &manifest.environments {
        let ds = file.dataset(&format!("{}/u", group_name(env.env_id)))?;
        let shape = ds.shape();
        if shape != expected {
            return Err(Error::Shape(format!("env {} stored as {:?}, manifest says {:?}", env.env_id, shape, expected)));
        }
        let raw = ds.read_raw::<f32>()?;
        data.push(Array5::from_shape_vec(expected, raw).map_err(|e| Error::Shape(e.to_string()))?);
    }
    Ok(Dataset { manifest, data })
}

/// Parameters of one `generate` call.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub system: SystemId,
    pub split: Split,
    pub n_envs: usize,
    pub n_traj: usize,
    pub resolution: usize,
    pub seed: u64,
}

/// Samples environments, simulates every trajectory and streams the result
/// into `dir`. Trajectories of one environment are simulated in parallel.
pub fn generate(cfg: &GenerateConfig, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    if cfg.n_traj == 0 {
        return Err(Error::Invalid("n_traj must be at least 1".into()));
    }
    let spec = SystemSpec::new(cfg.system);
    let envs = sample_environments(&spec, cfg.split, cfg.n_envs, cfg.seed)?;
    let res = cfg.resolution;
    let (lx, ly) = spec.extent;
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        system: cfg.system,
        split: cfg.split,
        environments: vec![],
        norm: NormStats::identity(spec.channels()),
        channel_names: spec.channel_names.iter().map(|s| s.to_string()).collect(),
        dtype: "float32".into(),
        layout: ArrayLayout::new(cfg.n_traj, spec.n_t, spec.channels(), res, res),
        dt_saved: spec.dt_saved(),
        dx: lx / res as f64,
        dy: ly / res as f64,
        seed: cfg.seed,
    };
    let mut writer = DatasetWriter::create(dir, manifest)?;
    for env in &envs {
        let trajs: Vec<Trajectory> =
            (0..cfg.n_traj as u64).into_par_iter().map(|j| simulate(env, j, res)).collect::<Result<_>>()?;
        let block = stack_trajectories(&trajs)?;
        writer.write_env(env, &block)?;
        log::info!("{} {} env {} ({}) done", cfg.system, cfg.split, env.env_id, env.describe());
    }
    writer.finish()
}

/// Stacks `[N_t, C, H, W]` trajectories into `[n, N_t, C, H, W]`.
pub fn stack_trajectories(trajs: &[Trajectory]) -> Result<Array5<f32>> {
    let views: Vec<ArrayView4<f32>> = trajs.iter().map(|t| t.u.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Single-trajectory helper used by tests and the Python bindings.
pub fn trajectory_block(u: Array4<f32>) -> Array5<f32> {
    u.insert_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> Dataset {
        let cfg = GenerateConfig { system: SystemId::Dr, split: Split::TrainId, n_envs: 1, n_traj: 1, resolution: 16, seed: 4 };
        generate(&cfg, dir).unwrap();
        read_dataset(dir).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tiny(tmp.path());
        let other = tmp.path().join("copy");
        write_dataset(&a.manifest, &a.data, &other).unwrap();
        let b = read_dataset(&other).unwrap();
        assert_eq!(a.manifest, b.manifest);
        let bits = |d: &Dataset| d.data[0].iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn zero_std_rejected_at_write() {
        let tmp = tempfile::tempdir().unwrap();
        let mut a = tiny(tmp.path());
        a.manifest.norm.std[1] = 0.0;
        assert!(matches!(write_dataset(&a.manifest, &a.data, tmp.path().join("bad")), Err(Error::Invalid(_))));
    }

    #[test]
    fn n_t_mismatch_is_shape_error() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tiny(tmp.path());
        let mut m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        m["layout"]["n_t"] = serde_json::json!(a.manifest.layout.n_t + 1);
        fs::write(tmp.path().join(MANIFEST_FILE), m.to_string()).unwrap();
        assert!(matches!(read_dataset(tmp.path()), Err(Error::Shape(_))));
    }

    #[test]
    fn version_mismatch_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        tiny(tmp.path());
        let p = tmp.path().join(MANIFEST_FILE);
        let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        m["schema_version"] = serde_json::json!(99);
        fs::write(&p, m.to_string()).unwrap();
        assert!(matches!(read_dataset(tmp.path()), Err(Error::Version { found: 99, .. })));
    }

    #[test]
    fn moments_match_direct_computation() {
        let a = Array5::from_shape_fn((2, 3, 2, 4, 4), |(i, t, c, y, x)| (i * 7 + t * 3 + c * 11 + y + x * 2) as f32 * 0.1);
        let b = a.mapv(|v| v * 2.0 - 1.0);
        let mut m = Moments::new(2);
        m.add(&a);
        m.add(&b);
        let stats = m.finish();
        for c in 0..2 {
            let all: Vec<f64> = a
                .index_axis(Axis(2), c)
                .iter()
                .chain(b.index_axis(Axis(2), c).iter())
                .map(|v| *v as f64)
                .collect();
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
            assert!((stats.mean[c] - mean).abs() < 1e-12);
            assert!((stats.std[c] - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_then_denormalize() {
        let stats = NormStats { mean: vec![1.0, -2.0], std: vec![2.0, 0.5] };
        let a = Array4::from_shape_fn((3, 2, 4, 4), |(t, c, y, x)| (t + c + y * x) as f32);
        let mut b = a.clone();
        stats.normalize_in_place(&mut b);
        assert!((b[[0, 1, 0, 0]] - ((1.0 + 2.0) / 0.5) as f32).abs() < 1e-6);
        stats.denormalize_in_place(&mut b);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-5));
    }
}
