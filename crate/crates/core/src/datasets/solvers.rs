//! Numerical solvers for the five systems, all on periodic grids.
//!
//! | system | space                                   | time                   |
//! |--------|-----------------------------------------|------------------------|
//! | DR     | 5-point central Laplacian               | RK4                    |
//! | NS     | pseudo-spectral, 2/3 dealiasing         | Heun + Crank–Nicolson  |
//! | BG     | pseudo-spectral, 2/3 dealiasing         | RK4                    |
//! | SW     | finite volume, Rusanov flux             | SSP-RK2                |
//! | HC     | conservative central differences        | RK4                    |
//!
//! Substeps are chosen per saved interval from a stability bound evaluated
//! on the state at the start of the interval, so the substep count is a
//! deterministic function of the trajectory.

use ndarray::{Array2, Array3, Array4};
use rustfft::num_complex::Complex;

use super::initial::{setup_trajectory, TrajectorySetup};
use super::{Environment, SystemId, Trajectory};
use crate::error::{Error, Result};
use crate::spectral::{signed_wavenumber, Fft2};

/// Gravity used by the shallow-water solver.
pub const SW_GRAVITY: f64 = 1.0;
/// CFL number for the shallow-water solver.
pub const SW_CFL: f64 = 0.4;
/// Advective CFL number for the NS and BG spectral solvers.
pub const SPECTRAL_CFL: f64 = 0.25;
/// Largest substep any explicit scheme may take, for accuracy.
const MAX_SUBSTEP: f64 = 0.1;

/// Saved-time layout of an integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_end: f64,
    /// Number of saved frames including the initial one.
    pub n_t: usize,
}

impl TimeGrid {
    pub fn dt_saved(&self) -> f64 {
        self.t_end / (self.n_t - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Divides every substep by this factor.
    pub refinement: u32,
    /// Overrides the stability-derived substep count per saved interval.
    pub fixed_substeps: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { refinement: 1, fixed_substeps: None }
    }
}

trait Stepper {
    /// Number of state components (may exceed the saved channels).
    fn components(&self) -> usize;
    fn stable_dt(&self, state: &[f64]) -> f64;
    fn step(&mut self, t: f64, dt: f64, state: &mut [f64]);
    /// Saved channels of the state.
    fn observe(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }
}

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(len: usize) -> Self {
        Rk4 { k1: vec![0.0; len], k2: vec![0.0; len], k3: vec![0.0; len], k4: vec![0.0; len], tmp: vec![0.0; len] }
    }

    fn step(&mut self, t: f64, dt: f64, y: &mut [f64], mut f: impl FnMut(f64, &[f64], &mut [f64])) {
        f(t, y, &mut self.k1);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + 0.5 * dt * self.k1[i];
        }
        f(t + 0.5 * dt, &self.tmp, &mut self.k2);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + 0.5 * dt * self.k2[i];
        }
        f(t + 0.5 * dt, &self.tmp, &mut self.k3);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + dt * self.k3[i];
        }
        f(t + dt, &self.tmp, &mut self.k4);
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn periodic_laplacian(u: &[f64], n: usize, inv_dx2: f64, inv_dy2: f64, out: &mut [f64]) {
    for y in 0..n {
        let ym = (y + n - 1) % n;
        let yp = (y + 1) % n;
        for x in 0..n {
            let xm = (x + n - 1) % n;
            let xp = (x + 1) % n;
            let c = u[y * n + x];
            out[y * n + x] =
                (u[y * n + xm] - 2.0 * c + u[y * n + xp]) * inv_dx2 + (u[ym * n + x] - 2.0 * c + u[yp * n + x]) * inv_dy2;
        }
    }
}

// ---------------------------------------------------------------- DR

struct DiffusionReaction {
    n: usize,
    du: f64,
    dv: f64,
    k: f64,
    inv_dx2: f64,
    inv_dy2: f64,
    rk: Rk4,
    lap: Vec<f64>,
}

impl DiffusionReaction {
    fn rhs(&mut self, y: &[f64], out: &mut [f64]) {
        let nn = self.n * self.n;
        let (u, v) = y.split_at(nn);
        let (du_out, dv_out) = out.split_at_mut(nn);
        periodic_laplacian(u, self.n, self.inv_dx2, self.inv_dy2, &mut self.lap);
        for i in 0..nn {
            du_out[i] = self.du * self.lap[i] + (u[i] - u[i] * u[i] * u[i] - self.k - v[i]);
        }
        periodic_laplacian(v, self.n, self.inv_dx2, self.inv_dy2, &mut self.lap);
        for i in 0..nn {
            dv_out[i] = self.dv * self.lap[i] + (u[i] - v[i]);
        }
    }
}

impl Stepper for DiffusionReaction {
    fn components(&self) -> usize {
        2
    }

    fn stable_dt(&self, _state: &[f64]) -> f64 {
        let stiff = 4.0 * self.du.max(self.dv) * (self.inv_dx2 + self.inv_dy2) + 4.0;
        (0.5 * 2.78 / stiff).min(MAX_SUBSTEP)
    }

    fn step(&mut self, t: f64, dt: f64, state: &mut [f64]) {
        let mut rk = std::mem::replace(&mut self.rk, Rk4::new(0));
        rk.step(t, dt, state, |_, y, out| self.rhs(y, out));
        self.rk = rk;
    }
}

// ---------------------------------------------------------------- spectral helpers

struct SpectralPeriodic {
    n: usize,
    fft: Fft2<f64>,
    kx: Vec<f64>,
    ky: Vec<f64>,
    /// 2/3-rule mask.
    dealias: Vec<f64>,
}

impl SpectralPeriodic {
    fn new(n: usize, lx: f64, ly: f64) -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut kx = Vec::with_capacity(n * n);
        let mut ky = Vec::with_capacity(n * n);
        let mut dealias = Vec::with_capacity(n * n);
        let cut = n as f64 / 3.0;
        for y in 0..n {
            let iy = signed_wavenumber(y, n);
            for x in 0..n {
                let ix = signed_wavenumber(x, n);
                kx.push(two_pi * ix as f64 / lx);
                ky.push(two_pi * iy as f64 / ly);
                let keep = (ix.abs() as f64) < cut && (iy.abs() as f64) < cut;
                dealias.push(if keep { 1.0 } else { 0.0 });
            }
        }
        SpectralPeriodic { n, fft: Fft2::new(n, n), kx, ky, dealias }
    }

    fn forward(&self, u: &[f64]) -> Vec<Complex<f64>> {
        self.fft.forward_real(u)
    }

    /// Real part of the inverse transform of `spec · mult` (normalised).
    fn inverse_with(&self, spec: &[Complex<f64>], mult: impl Fn(usize) -> Complex<f64>) -> Vec<f64> {
        let norm = 1.0 / (self.n * self.n) as f64;
        let mut buf: Vec<Complex<f64>> = spec.iter().enumerate().map(|(i, s)| s * mult(i)).collect();
        self.fft.inverse(&mut buf);
        buf.into_iter().map(|z| z.re * norm).collect()
    }
}

// ---------------------------------------------------------------- BG

struct Burgers {
    sp: SpectralPeriodic,
    nu: f64,
    dx: f64,
    rk: Rk4,
}

impl Burgers {
    fn rhs(&self, y: &[f64], out: &mut [f64]) {
        let sp = &self.sp;
        let nn = sp.n * sp.n;
        let i = Complex::new(0.0, 1.0);
        let uh = sp.forward(&y[..nn]);
        let vh = sp.forward(&y[nn..]);
        let filt = |s: &[Complex<f64>]| -> Vec<Complex<f64>> { s.iter().zip(&sp.dealias).map(|(z, m)| z * m).collect() };
        let (uf, vf) = (filt(&uh), filt(&vh));
        let one = |_| Complex::new(1.0, 0.0);
        let u = sp.inverse_with(&uf, one);
        let v = sp.inverse_with(&vf, one);
        let ux = sp.inverse_with(&uf, |k| i * sp.kx[k]);
        let uy = sp.inverse_with(&uf, |k| i * sp.ky[k]);
        let vx = sp.inverse_with(&vf, |k| i * sp.kx[k]);
        let vy = sp.inverse_with(&vf, |k| i * sp.ky[k]);
        let adv_u: Vec<f64> = (0..nn).map(|k| u[k] * ux[k] + v[k] * uy[k]).collect();
        let adv_v: Vec<f64> = (0..nn).map(|k| u[k] * vx[k] + v[k] * vy[k]).collect();
        let au = sp.forward(&adv_u);
        let av = sp.forward(&adv_v);
        let k2 = |k: usize| sp.kx[k] * sp.kx[k] + sp.ky[k] * sp.ky[k];
        let rhs_u: Vec<Complex<f64>> =
            (0..nn).map(|k| -au[k] * sp.dealias[k] - uh[k] * (self.nu * k2(k))).collect();
        let rhs_v: Vec<Complex<f64>> =
            (0..nn).map(|k| -av[k] * sp.dealias[k] - vh[k] * (self.nu * k2(k))).collect();
        out[..nn].copy_from_slice(&sp.inverse_with(&rhs_u, one));
        out[nn..].copy_from_slice(&sp.inverse_with(&rhs_v, one));
    }
}

impl Stepper for Burgers {
    fn components(&self) -> usize {
        2
    }

    fn stable_dt(&self, state: &[f64]) -> f64 {
        let umax = state.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let kmax = self.sp.kx.iter().fold(0.0f64, |m, k| m.max(k.abs()));
        let diff = if self.nu > 0.0 { 2.0 / (2.0 * self.nu * kmax * kmax) } else { f64::INFINITY };
        (SPECTRAL_CFL * self.dx / umax).min(diff).min(MAX_SUBSTEP)
    }

    fn step(&mut self, t: f64, dt: f64, state: &mut [f64]) {
        let mut rk = std::mem::replace(&mut self.rk, Rk4::new(0));
        rk.step(t, dt, state, |_, y, out| self.rhs(y, out));
        self.rk = rk;
    }
}

// ---------------------------------------------------------------- NS

struct NavierStokes {
    sp: SpectralPeriodic,
    nu: f64,
    dx: f64,
    forcing_hat: Vec<Complex<f64>>,
}

/// Forcing `0.1 (sin(wπ(x+y)) + cos(wπ(x+y)))` on grid points `x_i = i·dx`.
pub fn ns_forcing(n: usize, l: f64, w: f64) -> Array2<f64> {
    let dx = l / n as f64;
    Array2::from_shape_fn((n, n), |(y, x)| {
        let s = w * std::f64::consts::PI * (x as f64 * dx + y as f64 * dx);
        0.1 * (s.sin() + s.cos())
    })
}

impl NavierStokes {
    fn k2(&self, k: usize) -> f64 {
        self.sp.kx[k] * self.sp.kx[k] + self.sp.ky[k] * self.sp.ky[k]
    }

    /// Streamfunction velocity `(∂yψ, −∂xψ)` with `−Δψ = ω`, from `ω̂`.
    fn velocity(&self, wh: &[Complex<f64>]) -> (Vec<f64>, Vec<f64>) {
        let i = Complex::new(0.0, 1.0);
        let psi: Vec<Complex<f64>> =
            wh.iter().enumerate().map(|(k, z)| if k == 0 { Complex::new(0.0, 0.0) } else { z / self.k2(k) }).collect();
        let u = self.sp.inverse_with(&psi, |k| i * self.sp.ky[k]);
        let v = self.sp.inverse_with(&psi, |k| -i * self.sp.kx[k]);
        (u, v)
    }

    /// Explicit tendency `−u·∇ω + f` in spectral space.
    fn tendency(&self, wh: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let sp = &self.sp;
        let i = Complex::new(0.0, 1.0);
        let wf: Vec<Complex<f64>> = wh.iter().zip(&sp.dealias).map(|(z, m)| z * m).collect();
        let (u, v) = self.velocity(&wf);
        let wx = sp.inverse_with(&wf, |k| i * sp.kx[k]);
        let wy = sp.inverse_with(&wf, |k| i * sp.ky[k]);
        let adv: Vec<f64> = (0..u.len()).map(|k| u[k] * wx[k] + v[k] * wy[k]).collect();
        let ah = sp.forward(&adv);
        ah.iter().zip(&sp.dealias).zip(&self.forcing_hat).map(|((a, m), f)| -a * m + f).collect()
    }
}

impl Stepper for NavierStokes {
    fn components(&self) -> usize {
        1
    }

    fn stable_dt(&self, state: &[f64]) -> f64 {
        let wh = self.sp.forward(state);
        let (u, v) = self.velocity(&wh);
        let umax = u.iter().chain(&v).fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
        (SPECTRAL_CFL * self.dx / umax).min(MAX_SUBSTEP)
    }

    fn step(&mut self, _t: f64, dt: f64, state: &mut [f64]) {
        let nn = state.len();
        let wh = self.sp.forward(state);
        let n1 = self.tendency(&wh);
        let lhs = |k: usize| 1.0 + 0.5 * dt * self.nu * self.k2(k);
        let rhs = |k: usize| 1.0 - 0.5 * dt * self.nu * self.k2(k);
        let w_star: Vec<Complex<f64>> = (0..nn).map(|k| (wh[k] * rhs(k) + n1[k] * dt) / lhs(k)).collect();
        let n2 = self.tendency(&w_star);
        let w_new: Vec<Complex<f64>> =
            (0..nn).map(|k| (wh[k] * rhs(k) + (n1[k] + n2[k]) * (0.5 * dt)) / lhs(k)).collect();
        let out = self.sp.inverse_with(&w_new, |_| Complex::new(1.0, 0.0));
        state.copy_from_slice(&out);
    }
}

/// Velocity `(u, v)` recovered from a periodic vorticity field on `[0, l]²`.
pub fn ns_velocity(omega: &Array2<f64>, l: f64) -> (Array2<f64>, Array2<f64>) {
    let n = omega.nrows();
    let ns = NavierStokes { sp: SpectralPeriodic::new(n, l, l), nu: 0.0, dx: l / n as f64, forcing_hat: vec![] };
    let data: Vec<f64> = omega.iter().copied().collect();
    let (u, v) = ns.velocity(&ns.sp.forward(&data));
    (Array2::from_shape_vec((n, n), u).expect("shape"), Array2::from_shape_vec((n, n), v).expect("shape"))
}

/// Spectral divergence `∂x u + ∂y v` of a periodic velocity field on `[0, l]²`.
pub fn spectral_divergence(u: &Array2<f64>, v: &Array2<f64>, l: f64) -> Array2<f64> {
    let n = u.nrows();
    let sp = SpectralPeriodic::new(n, l, l);
    let i = Complex::new(0.0, 1.0);
    let uh = sp.forward(&u.iter().copied().collect::<Vec<_>>());
    let vh = sp.forward(&v.iter().copied().collect::<Vec<_>>());
    let dh: Vec<Complex<f64>> = (0..n * n).map(|k| i * sp.kx[k] * uh[k] + i * sp.ky[k] * vh[k]).collect();
    Array2::from_shape_vec((n, n), sp.inverse_with(&dh, |_| Complex::new(1.0, 0.0))).expect("shape")
}

// ---------------------------------------------------------------- SW

struct ShallowWater {
    n: usize,
    dx: f64,
    dy: f64,
    k1: Vec<f64>,
    stage: Vec<f64>,
}

#[inline]
fn sw_flux(h: f64, hu: f64, hv: f64, along_x: bool) -> [f64; 3] {
    let g = SW_GRAVITY;
    let (un, q_n, q_t) = if along_x { (hu / h, hu, hv) } else { (hv / h, hv, hu) };
    let normal = q_n * un + 0.5 * g * h * h;
    let tangential = q_t * un;
    if along_x {
        [q_n, normal, tangential]
    } else {
        [q_n, tangential, normal]
    }
}

impl ShallowWater {
    fn rhs(&self, q: &[f64], out: &mut [f64]) {
        let n = self.n;
        let nn = n * n;
        out.iter_mut().for_each(|o| *o = 0.0);
        let cell = |i: usize| [q[i], q[nn + i], q[2 * nn + i]];
        let speed = |s: [f64; 3], along_x: bool| {
            let vel = if along_x { s[1] / s[0] } else { s[2] / s[0] };
            vel.abs() + (SW_GRAVITY * s[0]).sqrt()
        };
        for y in 0..n {
            for x in 0..n {
                let i = y * n + x;
                for (along_x, j, d) in [(true, y * n + (x + 1) % n, self.dx), (false, ((y + 1) % n) * n + x, self.dy)] {
                    let l = cell(i);
                    let r = cell(j);
                    let fl = sw_flux(l[0], l[1], l[2], along_x);
                    let fr = sw_flux(r[0], r[1], r[2], along_x);
                    let s = speed(l, along_x).max(speed(r, along_x));
                    for c in 0..3 {
                        let f = 0.5 * (fl[c] + fr[c]) - 0.5 * s * (r[c] - l[c]);
                        out[c * nn + i] -= f / d;
                        out[c * nn + j] += f / d;
                    }
                }
            }
        }
    }
}

impl Stepper for ShallowWater {
    fn components(&self) -> usize {
        3
    }

    fn stable_dt(&self, q: &[f64]) -> f64 {
        let nn = self.n * self.n;
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        for i in 0..nn {
            let h = q[i];
            let c = (SW_GRAVITY * h.max(0.0)).sqrt();
            sx = sx.max((q[nn + i] / h).abs() + c);
            sy = sy.max((q[2 * nn + i] / h).abs() + c);
        }
        (SW_CFL / (sx / self.dx + sy / self.dy)).min(MAX_SUBSTEP)
    }

    fn step(&mut self, _t: f64, dt: f64, q: &mut [f64]) {
        let mut k1 = std::mem::take(&mut self.k1);
        let mut stage = std::mem::take(&mut self.stage);
        self.rhs(q, &mut k1);
        for i in 0..q.len() {
            stage[i] = q[i] + dt * k1[i];
        }
        self.rhs(&stage, &mut k1);
        for i in 0..q.len() {
            q[i] = 0.5 * q[i] + 0.5 * (stage[i] + dt * k1[i]);
        }
        self.k1 = k1;
        self.stage = stage;
    }

    fn observe(&self, q: &[f64]) -> Vec<f64> {
        q[..self.n * self.n].to_vec()
    }
}

// ---------------------------------------------------------------- HC

struct HeatConduction {
    n: usize,
    /// Conductivity on x faces (`i+1/2`) and y faces (`j+1/2`).
    ax: Vec<f64>,
    ay: Vec<f64>,
    a_max: f64,
    inv_dx2: f64,
    inv_dy2: f64,
    source: Vec<f64>,
    m3: f64,
    rk: Rk4,
}

impl HeatConduction {
    fn rhs(&self, t: f64, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        let s_t = (self.m3 * std::f64::consts::PI * t).sin();
        for y in 0..n {
            let ym = (y + n - 1) % n;
            let yp = (y + 1) % n;
            for x in 0..n {
                let xm = (x + n - 1) % n;
                let xp = (x + 1) % n;
                let i = y * n + x;
                let c = u[i];
                let fx = self.ax[i] * (u[y * n + xp] - c) - self.ax[y * n + xm] * (c - u[y * n + xm]);
                let fy = self.ay[i] * (u[yp * n + x] - c) - self.ay[ym * n + x] * (c - u[ym * n + x]);
                out[i] = fx * self.inv_dx2 + fy * self.inv_dy2 + self.source[i] * s_t;
            }
        }
    }
}

impl Stepper for HeatConduction {
    fn components(&self) -> usize {
        1
    }

    fn stable_dt(&self, _state: &[f64]) -> f64 {
        (0.5 * 2.78 / (4.0 * self.a_max * (self.inv_dx2 + self.inv_dy2))).min(MAX_SUBSTEP)
    }

    fn step(&mut self, t: f64, dt: f64, state: &mut [f64]) {
        let mut rk = std::mem::replace(&mut self.rk, Rk4::new(0));
        rk.step(t, dt, state, |tt, y, out| self.rhs(tt, y, out));
        self.rk = rk;
    }
}

// ---------------------------------------------------------------- driver

fn build_stepper(env: &Environment, setup: &TrajectorySetup, res: usize) -> Result<(Box<dyn Stepper>, Vec<f64>)> {
    let spec = env.spec();
    let (lx, ly) = spec.extent;
    let (dx, dy) = (lx / res as f64, ly / res as f64);
    let nn = res * res;
    let (c0, h0, w0) = setup.u0.dim();
    if h0 != res || w0 != res || c0 != spec.channels() {
        return Err(Error::Shape(format!(
            "initial state {:?} does not match {} channels at {res}x{res}",
            setup.u0.dim(),
            spec.channels()
        )));
    }
    let u0: Vec<f64> = setup.u0.iter().copied().collect();
    Ok(match env.system {
        SystemId::Dr => (
            Box::new(DiffusionReaction {
                n: res,
                du: env.require("D_u")?,
                dv: env.require("D_v")?,
                k: env.require("k")?,
                inv_dx2: 1.0 / (dx * dx),
                inv_dy2: 1.0 / (dy * dy),
                rk: Rk4::new(2 * nn),
                lap: vec![0.0; nn],
            }),
            u0,
        ),
        SystemId::Bg => (
            Box::new(Burgers { sp: SpectralPeriodic::new(res, lx, ly), nu: env.require("nu")?, dx: dx.min(dy), rk: Rk4::new(2 * nn) }),
            u0,
        ),
        SystemId::Ns => {
            let sp = SpectralPeriodic::new(res, lx, ly);
            let forcing: Vec<f64> = ns_forcing(res, lx, env.require("w")?).iter().copied().collect();
            let forcing_hat = sp.forward(&forcing);
            (Box::new(NavierStokes { sp, nu: env.require("nu")?, dx: dx.min(dy), forcing_hat }), u0)
        }
        SystemId::Sw => {
            let mut q = vec![0.0; 3 * nn];
            q[..nn].copy_from_slice(&u0);
            (Box::new(ShallowWater { n: res, dx, dy, k1: vec![0.0; 3 * nn], stage: vec![0.0; 3 * nn] }), q)
        }
        SystemId::Hc => {
            let a = setup
                .coefficient
                .as_ref()
                .ok_or_else(|| Error::Invalid("heat conduction needs a conductivity field".into()))?;
            let n = res;
            let mut ax = vec![0.0; nn];
            let mut ay = vec![0.0; nn];
            for y in 0..n {
                for x in 0..n {
                    ax[y * n + x] = 0.5 * (a[[y, x]] + a[[y, (x + 1) % n]]);
                    ay[y * n + x] = 0.5 * (a[[y, x]] + a[[(y + 1) % n, x]]);
                }
            }
            let amp = env.require("A")?;
            let (m1, m2) = (env.require("m1")?, env.require("m2")?);
            let pi = std::f64::consts::PI;
            let source: Vec<f64> = (0..nn)
                .map(|i| {
                    let (y, x) = (i / n, i % n);
                    amp * (m1 * pi * x as f64 * dx).sin() * (m2 * pi * y as f64 * dy).sin()
                })
                .collect();
            (
                Box::new(HeatConduction {
                    n,
                    ax,
                    ay,
                    a_max: a.iter().fold(0.0f64, |m, v| m.max(*v)),
                    inv_dx2: 1.0 / (dx * dx),
                    inv_dy2: 1.0 / (dy * dy),
                    source,
                    m3: env.require("m3")?,
                    rk: Rk4::new(nn),
                }),
                u0,
            )
        }
    })
}

/// Integrates from an explicit setup, returning the saved frames
/// `[n_t, C, H, W]` (frame 0 is the initial state).
pub fn integrate(
    env: &Environment,
    setup: &TrajectorySetup,
    res: usize,
    time: TimeGrid,
    opts: SolveOptions,
) -> Result<Array4<f64>> {
    if time.n_t < 2 {
        return Err(Error::Invalid("need at least two saved frames".into()));
    }
    if opts.refinement == 0 {
        return Err(Error::Invalid("refinement must be >= 1".into()));
    }
    let (mut stepper, mut state) = build_stepper(env, setup, res)?;
    debug_assert_eq!(state.len(), stepper.components() * res * res);
    let channels = setup.u0.dim().0;
    let mut out = Array4::zeros((time.n_t, channels, res, res));
    let write = |out: &mut Array4<f64>, k: usize, obs: Vec<f64>| {
        let frame = Array3::from_shape_vec((channels, res, res), obs).expect("observation shape");
        out.index_axis_mut(ndarray::Axis(0), k).assign(&frame);
    };
    write(&mut out, 0, stepper.observe(&state));
    let dt_saved = time.dt_saved();
    let mut substep = 0usize;
    for k in 1..time.n_t {
        let base = match opts.fixed_substeps {
            Some(s) => s.max(1),
            None => (dt_saved / stepper.stable_dt(&state)).ceil().max(1.0) as usize,
        };
        let n_sub = base * opts.refinement as usize;
        let dt = dt_saved / n_sub as f64;
        let t0 = (k - 1) as f64 * dt_saved;
        for s in 0..n_sub {
            stepper.step(t0 + s as f64 * dt, dt, &mut state);
            substep += 1;
            if !state.iter().all(|v| v.is_finite()) {
                return Err(Error::SolverBlowUp { env_id: env.env_id, params: env.describe(), substep });
            }
        }
        write(&mut out, k, stepper.observe(&state));
    }
    Ok(out)
}

/// Simulates trajectory `traj_seed` of `env` over the system's native time grid.
pub fn simulate(env: &Environment, traj_seed: u64, res: usize) -> Result<Trajectory> {
    simulate_with(env, traj_seed, res, SolveOptions::default())
}

pub fn simulate_with(env: &Environment, traj_seed: u64, res: usize, opts: SolveOptions) -> Result<Trajectory> {
    let spec = env.spec();
    let setup = setup_trajectory(env, traj_seed, res)?;
    let frames = integrate(env, &setup, res, TimeGrid { t_end: spec.t_end, n_t: spec.n_t }, opts)?;
    let (lx, ly) = spec.extent;
    Ok(Trajectory {
        u: frames.mapv(|v| v as f32),
        dt_saved: spec.dt_saved(),
        dx: lx / res as f64,
        dy: ly / res as f64,
        env_id: env.env_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{sample_environments, Split, SystemSpec};

    fn env(id: SystemId, split: Split) -> Environment {
        sample_environments(&SystemSpec::new(id), split, 1, 21).unwrap().remove(0)
    }

    #[test]
    fn every_system_produces_finite_frames() {
        for id in SystemId::ALL {
            let e = env(id, Split::TrainId);
            let t = simulate(&e, 0, 16).unwrap();
            let spec = SystemSpec::new(id);
            assert_eq!(t.u.dim(), (spec.n_t, spec.channels(), 16, 16), "{id}");
            assert!(t.u.iter().all(|v| v.is_finite()), "{id}");
        }
    }

    #[test]
    fn burgers_zero_state_is_fixed_point() {
        let e = env(SystemId::Bg, Split::TrainId);
        let setup = TrajectorySetup { u0: Array3::zeros((2, 16, 16)), coefficient: None };
        let out = integrate(&e, &setup, 16, TimeGrid { t_end: 1.0, n_t: 21 }, SolveOptions::default()).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let e = env(SystemId::Dr, Split::TrainId);
        let setup = TrajectorySetup { u0: Array3::zeros((1, 16, 16)), coefficient: None };
        assert!(matches!(
            integrate(&e, &setup, 16, TimeGrid { t_end: 1.0, n_t: 3 }, SolveOptions::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn blow_up_is_reported_with_context() {
        let e = env(SystemId::Dr, Split::TrainId);
        let setup = setup_trajectory(&e, 0, 16).unwrap();
        // One huge substep per frame violates the RK4 stability bound.
        let opts = SolveOptions { refinement: 1, fixed_substeps: Some(1) };
        match integrate(&e, &setup, 16, TimeGrid { t_end: 2000.0, n_t: 21 }, opts) {
            Err(Error::SolverBlowUp { env_id, params, .. }) => {
                assert_eq!(env_id, e.env_id);
                assert!(params.contains("D_u"));
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }
}
