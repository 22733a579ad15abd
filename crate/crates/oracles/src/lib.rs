//! Brute-force reference implementations.
//!
//! Everything here is written from first principles (double-loop DFTs,
//! explicit shell binning, central differences) and deliberately shares no
//! code with the `imooe` crate. The test suites use these to pin expected
//! values for the spectral metrics, the gradient engine and the solvers.
//!
//! All oracles run in `f64`.

use num_complex::Complex64;
use std::f64::consts::PI;
use std::fmt;

/// Largest grid side accepted by [`naive_dft2`]; the transform is O(N⁴).
pub const NAIVE_DFT_MAX_SIDE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    TooLarge { h: usize, w: usize },
    Shape(String),
    NonFinite { probe: usize },
    EmptyBand { lo: usize, hi: usize },
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::TooLarge { h, w } => {
                write!(f, "naive DFT limited to {NAIVE_DFT_MAX_SIDE}x{NAIVE_DFT_MAX_SIDE}, got {h}x{w}")
            }
            OracleError::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            OracleError::NonFinite { probe } => write!(f, "non-finite loss at probe {probe}"),
            OracleError::EmptyBand { lo, hi } => write!(f, "empty band [{lo}, {hi}]"),
        }
    }
}

impl std::error::Error for OracleError {}

/// A frozen reference value with the tolerance it is checked at.
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub name: &'static str,
    pub reference: Vec<f64>,
    pub tolerance: f64,
}

impl OracleCase {
    pub fn new(name: &'static str, reference: Vec<f64>, tolerance: f64) -> Self {
        OracleCase { name, reference, tolerance }
    }

    /// Worst relative error of `actual` against the reference. Entries whose
    /// reference is exactly zero are compared absolutely.
    pub fn worst_rel_error(&self, actual: &[f64]) -> Result<f64, OracleError> {
        if actual.len() != self.reference.len() {
            return Err(OracleError::Shape(format!(
                "{}: expected {} values, got {}",
                self.name,
                self.reference.len(),
                actual.len()
            )));
        }
        Ok(self
            .reference
            .iter()
            .zip(actual)
            .map(|(r, a)| {
                if *r == 0.0 {
                    a.abs()
                } else {
                    (a - r).abs() / r.abs()
                }
            })
            .fold(0.0, f64::max))
    }

    pub fn passes(&self, actual: &[f64]) -> bool {
        self.worst_rel_error(actual).map(|e| e <= self.tolerance).unwrap_or(false)
    }
}

/// Signed integer wavenumber of FFT bin `idx` on an axis of length `n`
/// (numpy `fftfreq(n) * n` convention: the Nyquist bin maps to `-n/2`).
pub fn signed_wavenumber(idx: usize, n: usize) -> i64 {
    if idx < n.div_ceil(2) {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// Direct double-loop 2D DFT of a real `[h, w]` field (row-major, rows are y),
/// normalised by `1/(h·w)`. Output bin `(ky, kx)` is at `ky * w + kx`.
pub fn naive_dft2(field: &[f64], h: usize, w: usize) -> Result<Vec<Complex64>, OracleError> {
    if h > NAIVE_DFT_MAX_SIDE || w > NAIVE_DFT_MAX_SIDE {
        return Err(OracleError::TooLarge { h, w });
    }
    if field.len() != h * w {
        return Err(OracleError::Shape(format!("{} values for {h}x{w}", field.len())));
    }
    let norm = 1.0 / (h * w) as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for ky in 0..h {
        for kx in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0 * PI * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                    acc += field[y * w + x] * Complex64::new(phase.cos(), phase.sin());
                }
            }
            out[ky * w + kx] = acc * norm;
        }
    }
    Ok(out)
}

fn check_pair(u: &[f64], v: &[f64], expected: usize) -> Result<(), OracleError> {
    if u.len() != expected || v.len() != expected {
        return Err(OracleError::Shape(format!(
            "expected {expected} values, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(())
}

/// `Σ_c Σ_ξ |ξ|² |F(u_c)(ξ) − F(v_c)(ξ)|²` over the full spectrum with integer
/// wavenumbers, for `[c, h, w]` fields.
pub fn naive_freq_weighted_sq_error(
    u: &[f64],
    v: &[f64],
    c: usize,
    h: usize,
    w: usize,
) -> Result<f64, OracleError> {
    check_pair(u, v, c * h * w)?;
    let mut total = 0.0;
    for ch in 0..c {
        let diff: Vec<f64> = (0..h * w).map(|i| u[ch * h * w + i] - v[ch * h * w + i]).collect();
        let spec = naive_dft2(&diff, h, w)?;
        for ky in 0..h {
            for kx in 0..w {
                let a = signed_wavenumber(ky, h) as f64;
                let b = signed_wavenumber(kx, w) as f64;
                total += (a * a + b * b) * spec[ky * w + kx].norm_sqr();
            }
        }
    }
    Ok(total)
}

/// Per-shell spectral energy of `u − v` for one `[h, w]` frame: entry `s`
/// holds `Σ |ΔF(ξ)|²` over bins with `round(|ξ|) == s`, for `s ≤ min(h,w)/2`.
pub fn naive_shell_energy(u: &[f64], v: &[f64], h: usize, w: usize) -> Result<Vec<f64>, OracleError> {
    check_pair(u, v, h * w)?;
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let spec = naive_dft2(&diff, h, w)?;
    let max_shell = h.min(w) / 2;
    let mut shells = vec![0.0; max_shell + 1];
    for ky in 0..h {
        for kx in 0..w {
            let a = signed_wavenumber(ky, h) as f64;
            let b = signed_wavenumber(kx, w) as f64;
            let shell = (a * a + b * b).sqrt().round() as usize;
            if shell <= max_shell {
                shells[shell] += spec[ky * w + kx].norm_sqr();
            }
        }
    }
    Ok(shells)
}

/// Banded fRMSE for `[steps, c, h, w]` sequences:
/// `sqrt(Σ_{ξ∈band} |ΔF|²) / (hi − lo + 1)` per frame and channel, averaged.
pub fn naive_radial_band_rmse(
    u_seq: &[f64],
    v_seq: &[f64],
    dims: [usize; 4],
    bands: &[(usize, usize)],
) -> Result<Vec<f64>, OracleError> {
    let [steps, c, h, w] = dims;
    check_pair(u_seq, v_seq, steps * c * h * w)?;
    for &(lo, hi) in bands {
        if hi < lo {
            return Err(OracleError::EmptyBand { lo, hi });
        }
    }
    let mut out = vec![0.0; bands.len()];
    let frame = h * w;
    for t in 0..steps {
        for ch in 0..c {
            let off = (t * c + ch) * frame;
            let shells = naive_shell_energy(&u_seq[off..off + frame], &v_seq[off..off + frame], h, w)?;
            for (bi, &(lo, hi)) in bands.iter().enumerate() {
                let energy: f64 = shells
                    .iter()
                    .enumerate()
                    .filter(|(s, _)| *s >= lo && *s <= hi)
                    .map(|(_, e)| e)
                    .sum();
                out[bi] += energy.sqrt() / (hi - lo + 1) as f64;
            }
        }
    }
    let n = (steps * c) as f64;
    Ok(out.into_iter().map(|x| x / n).collect())
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Probe (parameter index or direction index) with the worst error.
    pub worst_probe: usize,
    pub probes: usize,
}

/// Relative error with a floor on the denominator so that probes whose true
/// derivative is essentially zero are judged on an absolute scale.
pub fn rel_error(numeric: f64, analytic: f64, floor: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(floor)
}

/// Central-difference check of `analytic` (∂loss/∂params) on the parameter
/// indices in `probes`. Step is `eps · max(1, |θ_j|)`.
pub fn fd_gradient_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    probes: &[usize],
    eps: f64,
) -> Result<GradCheckReport, OracleError>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(OracleError::Shape(format!(
            "{} params vs {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (scale * 1e-6).max(f64::MIN_POSITIVE);
    let mut theta = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_probe: 0, probes: probes.len() };
    for (n, &j) in probes.iter().enumerate() {
        if j >= theta.len() {
            return Err(OracleError::Shape(format!("probe index {j} out of range")));
        }
        let h = eps * theta[j].abs().max(1.0);
        let orig = theta[j];
        theta[j] = orig + h;
        let up = loss(&theta);
        theta[j] = orig - h;
        let down = loss(&theta);
        theta[j] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(OracleError::NonFinite { probe: n });
        }
        let numeric = (up - down) / (2.0 * h);
        let err = rel_error(numeric, analytic[j], floor);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_probe = n;
        }
    }
    Ok(report)
}

/// Central-difference check of directional derivatives `⟨∇loss, d⟩` along
/// each direction in `directions`, stepping `eps / ‖d‖` in parameter space.
pub fn fd_directional_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    directions: &[Vec<f64>],
    eps: f64,
) -> Result<GradCheckReport, OracleError>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_probe: 0, probes: directions.len() };
    let mut theta = vec![0.0; params.len()];
    for (n, d) in directions.iter().enumerate() {
        if d.len() != params.len() || analytic.len() != params.len() {
            return Err(OracleError::Shape("direction length mismatch".into()));
        }
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let h = eps / norm;
        for (t, (p, di)) in theta.iter_mut().zip(params.iter().zip(d)) {
            *t = p + h * di;
        }
        let up = loss(&theta);
        for (t, (p, di)) in theta.iter_mut().zip(params.iter().zip(d)) {
            *t = p - h * di;
        }
        let down = loss(&theta);
        if !up.is_finite() || !down.is_finite() {
            return Err(OracleError::NonFinite { probe: n });
        }
        let numeric = (up - down) / (2.0 * h);
        let exact: f64 = analytic.iter().zip(d).map(|(g, di)| g * di).sum();
        let err = rel_error(numeric, exact, f64::MIN_POSITIVE);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_probe = n;
        }
    }
    Ok(report)
}

/// Amplitude at time `t` of Fourier mode `k` of the periodic heat equation
/// `∂t u = a Δu` on a domain of side `length`: `a0 · exp(−a (2πk/L)² t)`.
pub fn heat_mode_amplitude(a0: f64, diffusivity: f64, k: f64, length: f64, t: f64) -> f64 {
    let xi = 2.0 * PI * k / length;
    a0 * (-diffusivity * xi * xi * t).exp()
}

/// Result of a temporal self-convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceStudy {
    pub err_coarse: f64,
    pub err_fine: f64,
    pub observed_order: f64,
}

/// Runs `solve` at substep refinement factors 1, 2 and 4 and measures the
/// errors of the first two against the 4×-refined reference. `solve(r)`
/// must integrate with the base substep divided by `r` and return the final
/// state flattened.
pub fn fine_reference_solve<F, E>(mut solve: F) -> Result<ConvergenceStudy, E>
where
    F: FnMut(u32) -> Result<Vec<f64>, E>,
{
    let coarse = solve(1)?;
    let fine = solve(2)?;
    let reference = solve(4)?;
    let l2 = |a: &[f64]| -> f64 {
        a.iter().zip(&reference).map(|(x, r)| (x - r) * (x - r)).sum::<f64>().sqrt()
    };
    let err_coarse = l2(&coarse);
    let err_fine = l2(&fine);
    Ok(ConvergenceStudy { err_coarse, err_fine, observed_order: (err_coarse / err_fine).log2() })
}

/// Observed order a scheme of order `p` shows in [`fine_reference_solve`]
/// when the reference itself carries error: `log2((1 − 4^-p)/(2^-p − 4^-p))`.
pub fn expected_observed_order(p: f64) -> f64 {
    let a = 1.0 - 4f64.powf(-p);
    let b = 2f64.powf(-p) - 4f64.powf(-p);
    (a / b).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dft_of_constant_is_dc_only() {
        let spec = naive_dft2(&[3.5; 16], 4, 4).unwrap();
        assert!((spec[0].re - 3.5).abs() < 1e-14);
        for s in &spec[1..] {
            assert!(s.norm() < 1e-14);
        }
    }

    #[test]
    fn dft_of_pure_tone_has_two_half_bins() {
        let (h, w) = (8, 8);
        let f: Vec<f64> = (0..h * w).map(|i| (2.0 * PI * (i % w) as f64 / w as f64).sin()).collect();
        let spec = naive_dft2(&f, h, w).unwrap();
        assert!((spec[1].norm() - 0.5).abs() < 1e-12);
        assert!((spec[w - 1].norm() - 0.5).abs() < 1e-12);
        let rest: f64 = spec.iter().enumerate().filter(|(i, _)| *i != 1 && *i != w - 1).map(|(_, s)| s.norm()).sum();
        assert!(rest < 1e-12);
    }

    #[test]
    fn size_guard() {
        assert!(matches!(naive_dft2(&vec![0.0; 17 * 17], 17, 17), Err(OracleError::TooLarge { .. })));
    }

    #[test]
    fn quadratic_gradient_check_is_exact() {
        let a = [1.0, -2.0, 0.5, 3.0];
        let loss = |p: &[f64]| p.iter().zip(&a).map(|(x, ai)| ai * x * x).sum::<f64>();
        let params = [0.3, -1.2, 2.0, 0.7];
        let grad: Vec<f64> = params.iter().zip(&a).map(|(x, ai)| 2.0 * ai * x).collect();
        let r = fd_gradient_check(loss, &params, &grad, &[0, 1, 2, 3], 1e-4).unwrap();
        assert!(r.max_rel_error <= 1e-9, "{r:?}");
        let dirs = vec![vec![1.0, 1.0, 1.0, 1.0], vec![0.0, 2.0, -1.0, 0.5]];
        let r = fd_directional_check(loss, &params, &grad, &dirs, 1e-4).unwrap();
        assert!(r.max_rel_error <= 1e-9, "{r:?}");
    }

    #[test]
    fn expected_order_for_rk4_reference_study() {
        assert!((expected_observed_order(4.0) - 17f64.log2()).abs() < 1e-12);
        assert!((expected_observed_order(2.0) - 5f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn shell_energy_sums_to_parseval_on_small_grid() {
        // On 8x8 every bin with round(|ξ|) ≤ 4 is inside; corners (|ξ|≈5.66) are not.
        let u: Vec<f64> = (0..64).map(|i| ((i * 7 % 13) as f64) * 0.1).collect();
        let v = vec![0.0; 64];
        let shells = naive_shell_energy(&u, &v, 8, 8).unwrap();
        let spec = naive_dft2(&u, 8, 8).unwrap();
        let mut inside = 0.0;
        for ky in 0..8 {
            for kx in 0..8 {
                let a = signed_wavenumber(ky, 8) as f64;
                let b = signed_wavenumber(kx, 8) as f64;
                if (a * a + b * b).sqrt().round() <= 4.0 {
                    inside += spec[ky * 8 + kx].norm_sqr();
                }
            }
        }
        assert!((shells.iter().sum::<f64>() - inside).abs() < 1e-12);
    }
}
