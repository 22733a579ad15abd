//! Multi-environment trajectory datasets: environment sampling, initial
//! conditions, numerical solvers and the on-disk container.

mod grf;
mod initial;
pub mod io;
pub mod solvers;
mod system;

use std::collections::BTreeMap;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grf::gaussian_random_field;
pub use initial::{initial_condition, setup_trajectory, TrajectorySetup};
pub use io::{generate, read_dataset, read_manifest, write_dataset, ArrayLayout, Dataset, DatasetManifest, DatasetWriter, GenerateConfig, NormStats};
pub use solvers::{simulate, simulate_with, SolveOptions, TimeGrid};
pub use system::{Interval, ParamRange, ParamRole, ParamSpec, Split, SystemId, SystemSpec};

/// Default grid side.
pub const DEFAULT_RESOLUTION: usize = 64;

/// splitmix64 finaliser, used to derive independent seeds.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One sampled PDE context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub env_id: u32,
    pub system: SystemId,
    /// PDE coefficients by name.
    pub p: BTreeMap<String, f64>,
    /// Forcing-term parameters by name.
    pub f: BTreeMap<String, f64>,
    pub split: Split,
    pub seed: u64,
}

impl Environment {
    pub fn spec(&self) -> SystemSpec {
        SystemSpec::new(self.system)
    }

    /// Looks up a parameter in `p` then `f`.
    pub fn param(&self, name: &str) -> Option<f64> {
        self.p.get(name).or_else(|| self.f.get(name)).copied()
    }

    pub(crate) fn require(&self, name: &str) -> Result<f64> {
        self.param(name)
            .ok_or_else(|| Error::Invalid(format!("environment {} lacks parameter `{name}`", self.env_id)))
    }

    /// Parameter values in conditioning order (coefficients, then forcing).
    pub fn conditioning_values(&self) -> Vec<f64> {
        self.spec().conditioning_names().iter().map(|n| self.param(n).unwrap_or(0.0)).collect()
    }

    pub fn describe(&self) -> String {
        self.p
            .iter()
            .chain(self.f.iter())
            .map(|(k, v)| format!("{k}={v:.6e}"))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// RNG stream owned by trajectory `traj_seed` of this environment.
    pub fn trajectory_rng(&self, traj_seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(self.seed, traj_seed))
    }
}

fn draw(range: &ParamRange, rng: &mut ChaCha8Rng) -> f64 {
    if let Some(v) = range.fixed_value() {
        return v;
    }
    let total: f64 = range.0.iter().map(Interval::len).sum();
    let mut pick = rng.random::<f64>() * total;
    let mut chosen = range.0[range.0.len() - 1];
    for i in &range.0 {
        if pick < i.len() {
            chosen = *i;
            break;
        }
        pick -= i.len();
    }
    if chosen.hi_open {
        rng.random_range(chosen.lo..chosen.hi)
    } else {
        rng.random_range(chosen.lo..=chosen.hi)
    }
}

/// Draws `n_envs` environments for `split`, each parameter uniformly and
/// independently from the split's range. Deterministic in `seed`.
pub fn sample_environments(system: &SystemSpec, split: Split, n_envs: usize, seed: u64) -> Result<Vec<Environment>> {
    if n_envs == 0 {
        return Err(Error::Invalid("n_envs must be at least 1".into()));
    }
    system.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, split.seed_tag()));
    let mut envs = Vec::with_capacity(n_envs);
    for env_id in 0..n_envs {
        let mut p = BTreeMap::new();
        let mut f = BTreeMap::new();
        for spec in &system.params {
            let range = spec.range(split);
            if range.is_empty() {
                return Err(Error::EmptyRange { split: split.to_string(), param: spec.name.clone() });
            }
            let v = draw(range, &mut rng);
            match spec.role {
                ParamRole::Coefficient => p.insert(spec.name.clone(), v),
                ParamRole::Forcing => f.insert(spec.name.clone(), v),
            };
        }
        envs.push(Environment { env_id: env_id as u32, system: system.id, p, f, split, seed: rng.random() });
    }
    Ok(envs)
}

/// A simulated trajectory, `[N_t, C, H, W]` in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub u: Array4<f32>,
    pub dt_saved: f64,
    pub dx: f64,
    pub dy: f64,
    pub env_id: u32,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dr_train_draws_lie_in_id_ranges() {
        let spec = SystemSpec::new(SystemId::Dr);
        let envs = sample_environments(&spec, Split::TrainId, 16, 3).unwrap();
        assert_eq!(envs.len(), 16);
        for e in &envs {
            assert!((1e-3..2e-3).contains(&e.p["D_u"]));
            assert!((5e-3..1e-2).contains(&e.p["D_v"]));
            assert!((5e-3..1e-2).contains(&e.p["k"]));
        }
    }

    #[test]
    fn ns_ood_uses_union_and_fixed_forcing() {
        let spec = SystemSpec::new(SystemId::Ns);
        let envs = sample_environments(&spec, Split::TestOod, 64, 11).unwrap();
        let (mut low, mut high) = (0, 0);
        for e in &envs {
            let nu = e.p["nu"];
            assert!((5e-6..=8e-6).contains(&nu) || (1.2e-3..=2e-3).contains(&nu), "{nu}");
            if nu < 1e-5 {
                low += 1
            } else {
                high += 1
            }
            assert_eq!(e.f["w"], 2.0);
        }
        // Interval choice is proportional to length, so the upper one dominates.
        assert!(high > low);
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = SystemSpec::new(SystemId::Hc);
        let a = sample_environments(&spec, Split::TestOod, 5, 42).unwrap();
        let b = sample_environments(&spec, Split::TestOod, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_environments(&spec, Split::TestId, 5, 42).unwrap();
        assert_ne!(a[0].seed, c[0].seed);
    }

    #[test]
    fn zero_envs_rejected() {
        let spec = SystemSpec::new(SystemId::Bg);
        assert!(sample_environments(&spec, Split::TrainId, 0, 1).is_err());
    }

    #[test]
    fn conditioning_order() {
        let spec = SystemSpec::new(SystemId::Ns);
        assert_eq!(spec.conditioning_names(), vec!["nu", "w"]);
        let e = &sample_environments(&spec, Split::TrainId, 1, 0).unwrap()[0];
        assert_eq!(e.conditioning_values()[1], 2.0);
    }
}
