//! Initial conditions (and per-trajectory coefficient fields) for each system.

use ndarray::{Array2, Array3};
use rand::Rng;

use super::grf::gaussian_random_field;
use super::{Environment, SystemId};
use crate::error::{Error, Result};

/// Side of the DR initial squares, in domain units.
pub const DR_SQUARE_SIDE: f64 = 0.2;
pub const DR_SQUARES: usize = 6;
/// Spectrum exponent and length scale of the NS initial vorticity.
pub const NS_GRF_ALPHA: f64 = 2.5;
pub const NS_GRF_TAU: f64 = 7.0;
pub const BG_MODES: usize = 4;
/// HC conductivity `a(x) = HC_A_SCALE · exp(HC_A_SIGMA · g(x))`.
pub const HC_A_SCALE: f64 = 0.01;
pub const HC_A_SIGMA: f64 = 0.5;
pub const HC_GRF_ALPHA: f64 = 2.0;
pub const HC_GRF_TAU: f64 = 3.0;

/// Everything random about one trajectory: the initial state and, for HC,
/// the conductivity field.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySetup {
    pub u0: Array3<f64>,
    pub coefficient: Option<Array2<f64>>,
}

/// Radial dam-break depth profile with a tanh rim of width `2·dx`.
pub fn dam_break_depth(r: f64, radius: f64, dx: f64) -> f64 {
    1.0 + 0.5 * (1.0 - ((r - radius) / (2.0 * dx)).tanh())
}

/// Draws the initial state (and HC conductivity) of trajectory `traj_seed`.
pub fn setup_trajectory(env: &Environment, traj_seed: u64, res: usize) -> Result<TrajectorySetup> {
    if res < 4 {
        return Err(Error::Invalid(format!("resolution {res} too small")));
    }
    let spec = env.spec();
    let (lx, ly) = spec.extent;
    let (dx, dy) = (lx / res as f64, ly / res as f64);
    let mut rng = env.trajectory_rng(traj_seed);
    let n = res;
    let setup = match env.system {
        SystemId::Dr => {
            let mut u0 = Array3::zeros((2, n, n));
            let cells_x = ((DR_SQUARE_SIDE / dx).round() as usize).max(1);
            let cells_y = ((DR_SQUARE_SIDE / dy).round() as usize).max(1);
            for _ in 0..DR_SQUARES {
                let vals = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
                let y0 = rng.random_range(0..n);
                let x0 = rng.random_range(0..n);
                for j in 0..cells_y {
                    for i in 0..cells_x {
                        for (c, v) in vals.iter().enumerate() {
                            u0[[c, (y0 + j) % n, (x0 + i) % n]] = *v;
                        }
                    }
                }
            }
            TrajectorySetup { u0, coefficient: None }
        }
        SystemId::Ns => {
            let g = gaussian_random_field(&mut rng, n, n, lx, ly, NS_GRF_ALPHA, NS_GRF_TAU);
            TrajectorySetup { u0: g.insert_axis(ndarray::Axis(0)), coefficient: None }
        }
        SystemId::Bg => {
            let mut u0 = Array3::zeros((2, n, n));
            for c in 0..2 {
                for _ in 0..BG_MODES {
                    let a: f64 = rng.random_range(-0.5..=0.5);
                    let kx = rng.random_range(1..=3) as f64;
                    let ky = rng.random_range(1..=3) as f64;
                    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    for y in 0..n {
                        for x in 0..n {
                            let arg = 2.0 * std::f64::consts::PI * (kx * x as f64 * dx / lx + ky * y as f64 * dy / ly);
                            u0[[c, y, x]] += a * (arg + phase).sin();
                        }
                    }
                }
            }
            TrajectorySetup { u0, coefficient: None }
        }
        SystemId::Sw => {
            let radius = env.require("radius")?;
            let (cx, cy) = (lx / 2.0, ly / 2.0);
            let u0 = Array3::from_shape_fn((1, n, n), |(_, y, x)| {
                let px = (x as f64 + 0.5) * dx - cx;
                let py = (y as f64 + 0.5) * dy - cy;
                dam_break_depth((px * px + py * py).sqrt(), radius, dx)
            });
            TrajectorySetup { u0, coefficient: None }
        }
        SystemId::Hc => {
            let g = gaussian_random_field(&mut rng, n, n, lx, ly, HC_GRF_ALPHA, HC_GRF_TAU);
            TrajectorySetup {
                u0: Array3::zeros((1, n, n)),
                coefficient: Some(g.mapv(|v| HC_A_SCALE * (HC_A_SIGMA * v).exp())),
            }
        }
    };
    Ok(setup)
}

/// Initial state `[C, H, W]` of trajectory `traj_seed` in `env`.
pub fn initial_condition(env: &Environment, traj_seed: u64, res: usize) -> Result<Array3<f64>> {
    Ok(setup_trajectory(env, traj_seed, res)?.u0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{sample_environments, Split, SystemSpec};

    fn env(id: SystemId) -> Environment {
        sample_environments(&SystemSpec::new(id), Split::TrainId, 1, 9).unwrap().remove(0)
    }

    #[test]
    fn dr_is_zero_outside_squares() {
        let e = env(SystemId::Dr);
        let u0 = initial_condition(&e, 0, 64).unwrap();
        // At most six 6x6 squares are non-zero.
        let nonzero = u0.index_axis(ndarray::Axis(0), 0).iter().filter(|v| **v != 0.0).count();
        assert!(nonzero <= DR_SQUARES * 36);
        assert!(nonzero > 0);
        assert!(u0.iter().all(|v| v.abs() <= 1.0));
        // Every non-zero cell belongs to a fully populated square footprint:
        // the zero set covers the rest of the domain.
        let zeros = u0.index_axis(ndarray::Axis(0), 1).iter().filter(|v| **v == 0.0).count();
        assert!(zeros >= 64 * 64 - DR_SQUARES * 36);
    }

    #[test]
    fn sw_dam_break_profile() {
        let mut e = env(SystemId::Sw);
        e.p.insert("radius".into(), 0.3);
        let n = 64;
        let u0 = initial_condition(&e, 0, n).unwrap();
        let dx = 5.0 / n as f64;
        let r_center = (0.5f64 * dx * dx).sqrt();
        assert!((u0[[0, n / 2, n / 2]] - dam_break_depth(r_center, 0.3, dx)).abs() <= 1e-6);
        assert!((u0[[0, 0, 0]] - 1.0).abs() <= 1e-6);
        // The closed form reaches 2 at r = 0 up to the rim tail.
        assert!((dam_break_depth(0.0, 0.3, dx) - 2.0).abs() < 0.05);
        assert!(u0[[0, n / 2, n / 2]] > 1.9);
    }

    #[test]
    fn deterministic_per_trajectory_seed() {
        for id in SystemId::ALL {
            let e = env(id);
            let a = setup_trajectory(&e, 3, 16).unwrap();
            let b = setup_trajectory(&e, 3, 16).unwrap();
            assert_eq!(a, b, "{id}");
        }
        let e = env(SystemId::Ns);
        assert_ne!(initial_condition(&e, 0, 16).unwrap(), initial_condition(&e, 1, 16).unwrap());
    }

    #[test]
    fn hc_conductivity_is_positive() {
        let s = setup_trajectory(&env(SystemId::Hc), 0, 32).unwrap();
        assert!(s.u0.iter().all(|v| *v == 0.0));
        assert!(s.coefficient.unwrap().iter().all(|a| *a > 0.0));
    }
}
