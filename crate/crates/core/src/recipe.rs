//! Declarative experiments: generate data, train every arm under every
//! seed, evaluate, and compare arms.
//!
//! Stage outputs live under directories named by a hash of their inputs, so
//! rerunning a recipe skips finished stages.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{generate, read_dataset, GenerateConfig, Split, SystemId};
use crate::error::{Error, Result};
use crate::evaluation::{report, MetricsReport};
use crate::model::Checkpoint;
use crate::training::{train, TrainConfig, FINAL_CHECKPOINT};

const DONE: &str = "DONE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Config(format!("unknown scale `{other}` (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub resolution: usize,
    pub train_envs: usize,
    pub test_envs: usize,
    pub n_traj: usize,
    #[serde(default)]
    pub test_traj: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// Per-scale data sizes and training overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSpec {
    pub data: DataSpec,
    #[serde(default = "empty_table")]
    pub train: toml::Value,
}

fn empty_table() -> toml::Value {
    toml::Value::Table(Default::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub name: String,
    /// Merged over the scale's training table.
    #[serde(default = "empty_table")]
    pub train: toml::Value,
    /// Overrides the number of training environments.
    #[serde(default)]
    pub train_envs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Mean,
    Median,
}

/// "statistic of `metric` on `split`: arm_a ≤ arm_b in at least `min_wins` seeds".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub arm_a: String,
    pub arm_b: String,
    #[serde(default = "default_metric")]
    pub metric: String,
    #[serde(default = "default_split")]
    pub split: String,
    #[serde(default = "default_statistic")]
    pub statistic: Statistic,
    pub min_wins: usize,
}

fn default_metric() -> String {
    "nmse".into()
}

fn default_split() -> String {
    "ood".into()
}

fn default_statistic() -> Statistic {
    Statistic::Median
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecipe {
    pub name: String,
    pub system: SystemId,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Base training table shared by all arms.
    #[serde(default = "empty_table")]
    pub train: toml::Value,
    #[serde(default)]
    pub scale: BTreeMap<String, ScaleSpec>,
    #[serde(default)]
    pub arms: Vec<Arm>,
    #[serde(default)]
    pub comparison: Option<Comparison>,
    #[serde(default = "default_eval_splits")]
    pub eval_splits: Vec<String>,
}

fn default_eval_splits() -> Vec<String> {
    vec!["id".into(), "ood".into()]
}

fn merge(base: &mut toml::Value, over: &toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn hash_of(v: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(v).expect("hashable value serialises");
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn split_from_name(name: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|s| s.dir_name() == name)
        .ok_or_else(|| Error::Config(format!("unknown split `{name}`")))
}

impl ExperimentRecipe {
    pub fn from_toml(text: &str) -> Result<Self> {
        let r: ExperimentRecipe = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("arm names must be unique".into()));
        }
        if !self.arms.is_empty() && self.seeds.is_empty() {
            return Err(Error::Config("a recipe with arms needs at least one seed".into()));
        }
        if let Some(c) = &self.comparison {
            for a in [&c.arm_a, &c.arm_b] {
                if !self.arms.iter().any(|x| &x.name == a) {
                    return Err(Error::Config(format!("comparison names unknown arm `{a}`")));
                }
            }
            if !self.eval_splits.contains(&c.split) {
                return Err(Error::Config(format!("comparison split `{}` is not evaluated", c.split)));
            }
        }
        for s in &self.eval_splits {
            split_from_name(s)?;
        }
        Ok(())
    }

    /// Training configuration of `arm` at `scale` for `seed`.
    pub fn train_config(&self, scale: &ScaleSpec, arm: &Arm, seed: u64) -> Result<TrainConfig> {
        let mut v = self.train.clone();
        merge(&mut v, &scale.train);
        merge(&mut v, &arm.train);
        let mut cfg: TrainConfig = v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(format!("arm `{}`: {e}", arm.name)))?;
        cfg.seed = seed;
        let has_schedule = v_get(&v, &["weights", "total"]).is_some();
        if !has_schedule {
            cfg.weights = cfg.weights.rescaled(cfg.epochs.max(1));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn v_get<'a>(v: &'a toml::Value, path: &[&str]) -> Option<&'a toml::Value> {
    path.iter().try_fold(v, |cur, k| cur.get(k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub arm: String,
    pub seed: u64,
    pub dir: PathBuf,
    /// Evaluation report per split.
    pub reports: BTreeMap<String, MetricsReport>,
    pub train_seconds: f64,
    /// Wall time of the evaluation rollouts per trajectory.
    pub inference_seconds_per_traj: f64,
    pub param_count: usize,
}

impl RunResult {
    pub fn statistic(&self, split: &str, metric: &str, stat: Statistic) -> Option<f64> {
        let r = self.reports.get(split)?;
        let mut vals: Vec<f64> = r.records.iter().filter_map(|x| x.metric(metric)).collect();
        if vals.is_empty() {
            return None;
        }
        Some(match stat {
            Statistic::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
            Statistic::Median => {
                vals.sort_by(f64::total_cmp);
                let n = vals.len();
                if n % 2 == 1 {
                    vals[n / 2]
                } else {
                    0.5 * (vals[n / 2 - 1] + vals[n / 2])
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub rule: Comparison,
    /// Per seed: (a, b, a ≤ b).
    pub per_seed: Vec<(u64, f64, f64, bool)>,
    pub wins: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeSummary {
    pub name: String,
    pub scale: Scale,
    pub runs: Vec<RunResult>,
    pub verdict: Option<Verdict>,
}

impl RecipeSummary {
    pub fn table_csv(&self) -> String {
        let mut out = String::from("arm,seed,split,mean_nmse,median_nmse,mean_frmse_total,train_s,infer_s_per_traj,params\n");
        for r in &self.runs {
            for split in r.reports.keys() {
                let st = |m, s| r.statistic(split, m, s).map_or(String::new(), |v| format!("{v:.6e}"));
                out.push_str(&format!(
                    "{},{},{},{},{},{},{:.2},{:.4},{}\n",
                    r.arm,
                    r.seed,
                    split,
                    st("nmse", Statistic::Mean),
                    st("nmse", Statistic::Median),
                    st("frmse_total", Statistic::Mean),
                    r.train_seconds,
                    r.inference_seconds_per_traj,
                    r.param_count
                ));
            }
        }
        out
    }
}

fn stage_done(dir: &Path) -> bool {
    dir.join(DONE).exists()
}

fn mark_done(dir: &Path) -> Result<()> {
    let p = dir.join(DONE);
    fs::write(&p, b"").map_err(|e| Error::io(&p, e))
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage { stage: name.to_string(), source: Box::new(e) })
}

/// Generates (or reuses) the train and evaluation datasets.
fn ensure_data(system: SystemId, spec: &DataSpec, train_envs: usize, split: Split, root: &Path) -> Result<PathBuf> {
    let (n_envs, n_traj) = match split {
        Split::TrainId => (train_envs, spec.n_traj),
        _ => (spec.test_envs, spec.test_traj.unwrap_or(spec.n_traj)),
    };
    let cfg = GenerateConfig { system, split, n_envs, n_traj, resolution: spec.resolution, seed: spec.seed };
    let key = hash_of(&(system, split, n_envs, n_traj, spec.resolution, spec.seed));
    let dir = root.join("data").join(format!("{}-{}-{key}", system.as_str(), split.dir_name()));
    if !stage_done(&dir) {
        stage(&format!("generate {}", split.dir_name()), || {
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            generate(&cfg, &dir)?;
            mark_done(&dir)
        })?;
    }
    Ok(dir)
}

/// Runs every stage of `recipe` under `workdir` and writes `summary.json`
/// and `summary.csv`.
pub fn run_recipe(recipe: &ExperimentRecipe, scale: Scale, workdir: &Path) -> Result<RecipeSummary> {
    recipe.validate()?;
    fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
    let mut runs = vec![];
    if !recipe.arms.is_empty() {
        let key = match scale {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        };
        let spec = recipe
            .scale
            .get(key)
            .ok_or_else(|| Error::Config(format!("recipe `{}` has no `{key}` scale", recipe.name)))?;
        for arm in &recipe.arms {
            let train_envs = arm.train_envs.unwrap_or(spec.data.train_envs);
            let train_dir = ensure_data(recipe.system, &spec.data, train_envs, Split::TrainId, workdir)?;
            let train_data = read_dataset(&train_dir)?;
            for &seed in &recipe.seeds {
                let cfg = recipe.train_config(spec, arm, seed)?;
                let run_dir = workdir.join("runs").join(&arm.name).join(format!("seed{seed}-{}", hash_of(&(&cfg, &train_dir))));
                let ck_path = run_dir.join(FINAL_CHECKPOINT);
                let timing_path = run_dir.join("train_seconds");
                if !stage_done(&run_dir) {
                    stage(&format!("train {}/seed{seed}", arm.name), || {
                        if run_dir.exists() {
                            fs::remove_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
                        }
                        let t0 = Instant::now();
                        train(&cfg, &train_data, Some(&run_dir), None)?;
                        let secs = t0.elapsed().as_secs_f64().to_string();
                        fs::write(&timing_path, secs).map_err(|e| Error::io(&timing_path, e))?;
                        mark_done(&run_dir)
                    })?;
                }
                let ck = Checkpoint::load(&ck_path)?;
                let mut reports = BTreeMap::new();
                let (mut infer, mut n_traj) = (0.0, 0usize);
                for split_name in &recipe.eval_splits {
                    let split = split_from_name(split_name)?;
                    let data_dir = if split == Split::TrainId {
                        train_dir.clone()
                    } else {
                        ensure_data(recipe.system, &spec.data, train_envs, split, workdir)?
                    };
                    let data = read_dataset(&data_dir)?;
                    let report_path = run_dir.join(format!("report_{split_name}.json"));
                    let t0 = Instant::now();
                    let r = stage(&format!("eval {}/seed{seed}/{split_name}", arm.name), || {
                        let r = report(&ck, &data)?;
                        r.save(&report_path)?;
                        Ok(r)
                    })?;
                    infer += t0.elapsed().as_secs_f64();
                    n_traj += data.data.iter().map(|d| d.shape()[0]).sum::<usize>();
                    reports.insert(split_name.clone(), r);
                }
                let train_seconds = fs::read_to_string(&timing_path).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(f64::NAN);
                runs.push(RunResult {
                    arm: arm.name.clone(),
                    seed,
                    dir: run_dir,
                    reports,
                    train_seconds,
                    inference_seconds_per_traj: infer / n_traj.max(1) as f64,
                    param_count: ck.params.iter().map(|p| p.2.len()).sum(),
                });
            }
        }
    }
    let verdict = recipe.comparison.as_ref().map(|rule| compare(rule, &recipe.seeds, &runs)).transpose()?;
    let summary = RecipeSummary { name: recipe.name.clone(), scale, runs, verdict };
    let path = workdir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    let path = workdir.join("summary.csv");
    fs::write(&path, summary.table_csv()).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

pub fn compare(rule: &Comparison, seeds: &[u64], runs: &[RunResult]) -> Result<Verdict> {
    let find = |arm: &str, seed: u64| -> Result<f64> {
        runs.iter()
            .find(|r| r.arm == arm && r.seed == seed)
            .and_then(|r| r.statistic(&rule.split, &rule.metric, rule.statistic))
            .ok_or_else(|| Error::Invalid(format!("no `{}` result for arm `{arm}` seed {seed}", rule.metric)))
    };
    let mut per_seed = vec![];
    for &s in seeds {
        let a = find(&rule.arm_a, s)?;
        let b = find(&rule.arm_b, s)?;
        per_seed.push((s, a, b, a <= b));
    }
    let wins = per_seed.iter().filter(|x| x.3).count();
    Ok(Verdict { rule: rule.clone(), per_seed, wins, passed: wins >= rule.min_wins })
}
