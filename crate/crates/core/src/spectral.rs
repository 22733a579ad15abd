//! FFT utilities on periodic grids: spectral derivatives, the derivative
//! stack fed to the operator experts, the ‖ξ‖²-weighted spectral error and
//! radially binned fRMSE.
//!
//! Fields are laid out `[C, H, W]` in row-major order; the H axis is `y` and
//! the W axis is `x`. Forward transforms are normalised by `1/(H·W)`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array3, ArrayView3, ArrayView4};
use num_traits::Zero;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Version of the derivative-stack channel layout. Checkpoints and masks
/// record it; loading refuses a mismatch.
pub const DERIVATIVE_ORDERING_VERSION: u32 = 1;

/// Number of derivative kinds per state channel.
pub const NUM_DERIVATIVE_KINDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// Derivative kinds in stack order. The stack is kind-major: channel
/// `kind_index * C + state_channel`, e.g. for C = 2
/// `[u_x, v_x, u_y, v_y, u_xx, v_xx, u_yy, v_yy, u_xy, v_xy]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivativeKind {
    Dx,
    Dy,
    Dxx,
    Dyy,
    Dxy,
}

impl DerivativeKind {
    pub const ALL: [DerivativeKind; NUM_DERIVATIVE_KINDS] =
        [DerivativeKind::Dx, DerivativeKind::Dy, DerivativeKind::Dxx, DerivativeKind::Dyy, DerivativeKind::Dxy];

    /// Derivative orders along (x, y).
    pub fn orders(self) -> (u32, u32) {
        match self {
            DerivativeKind::Dx => (1, 0),
            DerivativeKind::Dy => (0, 1),
            DerivativeKind::Dxx => (2, 0),
            DerivativeKind::Dyy => (0, 2),
            DerivativeKind::Dxy => (1, 1),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DerivativeKind::Dx => "x",
            DerivativeKind::Dy => "y",
            DerivativeKind::Dxx => "xx",
            DerivativeKind::Dyy => "yy",
            DerivativeKind::Dxy => "xy",
        }
    }
}

/// Channel index of `kind` applied to `state_channel` in a stack over `channels` states.
pub fn derivative_channel(kind: DerivativeKind, state_channel: usize, channels: usize) -> usize {
    let k = DerivativeKind::ALL.iter().position(|&d| d == kind).expect("kind listed");
    k * channels + state_channel
}

/// Human-readable names of the derivative stack channels, e.g. `u_xx`.
pub fn derivative_channel_names(state_names: &[&str]) -> Vec<String> {
    DerivativeKind::ALL
        .iter()
        .flat_map(|k| state_names.iter().map(move |s| format!("{s}_{}", k.label())))
        .collect()
}

/// Signed integer wavenumber of bin `idx` on an axis of `n` points
/// (`-n/2` for the Nyquist bin of even `n`).
pub fn signed_wavenumber(idx: usize, n: usize) -> i64 {
    if idx < n.div_ceil(2) {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// Wavenumber layout of an `H × W` periodic grid.
#[derive(Debug, Clone)]
pub struct SpectralGrid {
    pub h: usize,
    pub w: usize,
    /// Signed integer wavenumbers along x (length W) and y (length H).
    pub kx: Vec<i64>,
    pub ky: Vec<i64>,
    /// `kx² + ky²` per bin, `[H, W]` row-major, integer wavenumbers.
    pub ksq: Vec<f64>,
    /// Physical scale factors `2π/Lx`, `2π/Ly`.
    pub scale_x: f64,
    pub scale_y: f64,
}

impl SpectralGrid {
    pub fn new(h: usize, w: usize, lx: f64, ly: f64) -> Result<Self> {
        if h < 4 || w < 4 {
            return Err(Error::Shape(format!("spectral grid needs H, W >= 4, got {h}x{w}")));
        }
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::Invalid(format!("domain extents must be positive, got {lx} x {ly}")));
        }
        let kx: Vec<i64> = (0..w).map(|i| signed_wavenumber(i, w)).collect();
        let ky: Vec<i64> = (0..h).map(|i| signed_wavenumber(i, h)).collect();
        let mut ksq = Vec::with_capacity(h * w);
        for &b in &ky {
            for &a in &kx {
                ksq.push((a * a + b * b) as f64);
            }
        }
        Ok(SpectralGrid { h, w, kx, ky, ksq, scale_x: 2.0 * PI / lx, scale_y: 2.0 * PI / ly })
    }

    /// Largest complete radial shell, `⌊min(H, W)/2⌋`.
    pub fn xi_max(&self) -> usize {
        self.h.min(self.w) / 2
    }

    /// Radial shell `round(|ξ|)` of bin `idx` (row-major `[H, W]`).
    pub fn shell(&self, idx: usize) -> usize {
        self.ksq[idx].sqrt().round() as usize
    }

    fn axis_factor(k: i64, n: usize, scale: f64, order: u32) -> Complex<f64> {
        let kp = k as f64 * scale;
        match order {
            0 => Complex::new(1.0, 0.0),
            // Odd derivatives drop the Nyquist bin so the operator stays real.
            1 if n % 2 == 0 && k == -(n as i64) / 2 => Complex::zero(),
            1 => Complex::new(0.0, kp),
            2 => Complex::new(-kp * kp, 0.0),
            _ => unreachable!("derivative orders above 2 are not used"),
        }
    }

    /// Fourier multiplier of `∂x^ox ∂y^oy` per bin (physical scaling).
    pub fn multiplier(&self, ox: u32, oy: u32) -> Vec<Complex<f64>> {
        let mut out = Vec::with_capacity(self.h * self.w);
        for &b in &self.ky {
            let fy = Self::axis_factor(b, self.h, self.scale_y, oy);
            for &a in &self.kx {
                out.push(Self::axis_factor(a, self.w, self.scale_x, ox) * fy);
            }
        }
        out
    }
}

/// Planned forward/inverse 2D FFTs for one grid size.
#[derive(Clone)]
pub struct Fft2<T: Scalar> {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Fft2<T> {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::<T>::new();
        Fft2 {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn run(&self, buf: &mut [Complex<T>], inverse: bool) {
        let (h, w) = (self.h, self.w);
        debug_assert_eq!(buf.len(), h * w);
        let (row, col) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        row.process(buf);
        let mut t = vec![Complex::zero(); h * w];
        for y in 0..h {
            for x in 0..w {
                t[x * h + y] = buf[y * w + x];
            }
        }
        col.process(&mut t);
        for y in 0..h {
            for x in 0..w {
                buf[y * w + x] = t[x * h + y];
            }
        }
    }

    /// Unnormalised forward transform of a real `[H, W]` frame.
    pub fn forward_real(&self, frame: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = frame.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.run(&mut buf, false);
        buf
    }

    /// Unnormalised inverse transform, in place.
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.run(buf, true);
    }

    /// Unnormalised forward transform, in place.
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.run(buf, false);
    }
}

/// Forward 2D DFT of a real `[H, W]` frame scaled by `1/(H·W)`.
pub fn fft2_normalized(frame: ArrayView3<f64>) -> Vec<Vec<Complex<f64>>> {
    let (c, h, w) = frame.dim();
    let fft = Fft2::<f64>::new(h, w);
    let norm = 1.0 / (h * w) as f64;
    (0..c)
        .map(|ch| {
            let data: Vec<f64> = frame.index_axis(ndarray::Axis(0), ch).iter().copied().collect();
            fft.forward_real(&data).into_iter().map(|z| z * norm).collect()
        })
        .collect()
}

/// Inverse of [`fft2_normalized`] returning the real part.
pub fn ifft2_normalized(spec: &[Vec<Complex<f64>>], h: usize, w: usize) -> Array3<f64> {
    let fft = Fft2::<f64>::new(h, w);
    let mut out = Array3::zeros((spec.len(), h, w));
    for (ch, s) in spec.iter().enumerate() {
        let mut buf = s.clone();
        fft.inverse(&mut buf);
        for (o, z) in out.index_axis_mut(ndarray::Axis(0), ch).iter_mut().zip(&buf) {
            *o = z.re;
        }
    }
    out
}

/// Precomputed derivative multipliers for the stack and its adjoint.
#[derive(Clone)]
pub struct DerivativeOperator<T: Scalar> {
    pub grid: SpectralGrid,
    fft: Fft2<T>,
    /// One multiplier per kind, already divided by `H·W` for the round trip.
    multipliers: Vec<Vec<Complex<T>>>,
}

impl<T: Scalar> DerivativeOperator<T> {
    pub fn new(grid: SpectralGrid) -> Self {
        let n = (grid.h * grid.w) as f64;
        let multipliers = DerivativeKind::ALL
            .iter()
            .map(|k| {
                let (ox, oy) = k.orders();
                grid.multiplier(ox, oy)
                    .into_iter()
                    .map(|m| Complex::new(T::from_f64_lossy(m.re / n), T::from_f64_lossy(m.im / n)))
                    .collect()
            })
            .collect();
        let fft = Fft2::new(grid.h, grid.w);
        DerivativeOperator { grid, fft, multipliers }
    }

    pub fn frame_len(&self) -> usize {
        self.grid.h * self.grid.w
    }

    /// Derivative stack of `[channels, H, W]` data into `out` (`[5·channels, H, W]`).
    pub fn stack_into(&self, field: &[T], channels: usize, out: &mut [T]) {
        let n = self.frame_len();
        debug_assert_eq!(field.len(), channels * n);
        debug_assert_eq!(out.len(), NUM_DERIVATIVE_KINDS * channels * n);
        let mut buf = vec![Complex::zero(); n];
        for ch in 0..channels {
            let spec = self.fft.forward_real(&field[ch * n..(ch + 1) * n]);
            for (k, mult) in self.multipliers.iter().enumerate() {
                for ((b, s), m) in buf.iter_mut().zip(&spec).zip(mult) {
                    *b = *s * *m;
                }
                self.fft.inverse(&mut buf);
                let off = (k * channels + ch) * n;
                for (o, b) in out[off..off + n].iter_mut().zip(&buf) {
                    *o = b.re;
                }
            }
        }
    }

    /// Adds the adjoint of [`Self::stack_into`] applied to `grad_out` into `grad_in`.
    pub fn stack_adjoint_into(&self, grad_out: &[T], channels: usize, grad_in: &mut [T]) {
        let n = self.frame_len();
        let mut acc: Vec<Complex<T>> = vec![Complex::zero(); n];
        for ch in 0..channels {
            acc.iter_mut().for_each(|a| *a = Complex::zero());
            for (k, mult) in self.multipliers.iter().enumerate() {
                let off = (k * channels + ch) * n;
                let spec = self.fft.forward_real(&grad_out[off..off + n]);
                for ((a, s), m) in acc.iter_mut().zip(&spec).zip(mult) {
                    *a = *a + *s * m.conj();
                }
            }
            self.fft.inverse(&mut acc);
            for (g, a) in grad_in[ch * n..(ch + 1) * n].iter_mut().zip(&acc) {
                *g += a.re;
            }
        }
    }

    /// Single derivative of one `[H, W]` frame.
    pub fn apply_kind(&self, frame: &[T], kind: DerivativeKind) -> Vec<T> {
        let k = DerivativeKind::ALL.iter().position(|&d| d == kind).expect("kind listed");
        let mut spec = self.fft.forward_real(frame);
        for (s, m) in spec.iter_mut().zip(&self.multipliers[k]) {
            *s = *s * *m;
        }
        self.fft.inverse(&mut spec);
        spec.into_iter().map(|z| z.re).collect()
    }
}

fn kind_for(axis: Axis, order: u32) -> Result<DerivativeKind> {
    Ok(match (axis, order) {
        (Axis::X, 1) => DerivativeKind::Dx,
        (Axis::Y, 1) => DerivativeKind::Dy,
        (Axis::X, 2) => DerivativeKind::Dxx,
        (Axis::Y, 2) => DerivativeKind::Dyy,
        _ => return Err(Error::Invalid(format!("derivative order must be 1 or 2, got {order}"))),
    })
}

/// `∂^order/∂axis^order` of a periodic `[C, H, W]` field on a domain of
/// extent `lx × ly`, computed spectrally.
pub fn spectral_derivative<T: Scalar>(
    field: ArrayView3<T>,
    lx: f64,
    ly: f64,
    axis: Axis,
    order: u32,
) -> Result<Array3<T>> {
    let (c, h, w) = field.dim();
    let op = DerivativeOperator::<T>::new(SpectralGrid::new(h, w, lx, ly)?);
    let kind = kind_for(axis, order)?;
    let data: Vec<T> = field.iter().copied().collect();
    let n = h * w;
    let mut out = Vec::with_capacity(c * n);
    for ch in 0..c {
        out.extend(op.apply_kind(&data[ch * n..(ch + 1) * n], kind));
    }
    Ok(Array3::from_shape_vec((c, h, w), out).expect("shape preserved"))
}

/// Derivative stack `[∂x, ∂y, ∂xx, ∂yy, ∂xy] × channels` of a `[C, H, W]` field.
pub fn derivative_stack<T: Scalar>(field: ArrayView3<T>, lx: f64, ly: f64) -> Result<Array3<T>> {
    let (c, h, w) = field.dim();
    let op = DerivativeOperator::<T>::new(SpectralGrid::new(h, w, lx, ly)?);
    let data: Vec<T> = field.iter().copied().collect();
    let mut out = vec![T::zero(); NUM_DERIVATIVE_KINDS * c * h * w];
    op.stack_into(&data, c, &mut out);
    Ok(Array3::from_shape_vec((NUM_DERIVATIVE_KINDS * c, h, w), out).expect("stack shape"))
}

/// Weighted spectral energy of a `[channels, H, W]` difference field and its
/// gradient: `Σ_c Σ_ξ ‖ξ‖² |F(d_c)(ξ)|²` with `F` scaled by `1/(H·W)` and
/// integer wavenumbers `ξ`.
pub struct FreqWeightedError<T: Scalar> {
    grid: SpectralGrid,
    fft: Fft2<T>,
}

impl<T: Scalar> FreqWeightedError<T> {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        // Extents are irrelevant: the weight uses integer wavenumbers.
        Ok(FreqWeightedError { grid: SpectralGrid::new(h, w, 1.0, 1.0)?, fft: Fft2::new(h, w) })
    }

    /// Returns the error and, if `grad` is given, adds `scale · ∂E/∂d` into it.
    pub fn eval(&self, diff: &[T], channels: usize, grad: Option<(&mut [T], T)>) -> T {
        let n = self.grid.h * self.grid.w;
        let nf = n as f64;
        let inv_n2 = T::from_f64_lossy(1.0 / (nf * nf));
        let mut total = T::zero();
        let mut grad = grad;
        for ch in 0..channels {
            let mut spec = self.fft.forward_real(&diff[ch * n..(ch + 1) * n]);
            let mut e = T::zero();
            for (s, &k2) in spec.iter().zip(&self.grid.ksq) {
                e += T::from_f64_lossy(k2) * s.norm_sqr();
            }
            total += e * inv_n2;
            if let Some((g, scale)) = grad.as_mut() {
                for (s, &k2) in spec.iter_mut().zip(&self.grid.ksq) {
                    *s = *s * T::from_f64_lossy(k2);
                }
                self.fft.inverse(&mut spec);
                let factor = *scale * T::from_f64_lossy(2.0) * inv_n2;
                for (gi, s) in g[ch * n..(ch + 1) * n].iter_mut().zip(&spec) {
                    *gi += factor * s.re;
                }
            }
        }
        total
    }
}

/// `Σ_ξ ‖ξ‖² ‖F(u)(ξ) − F(v)(ξ)‖²` summed over channels, for `[C, H, W]` fields.
pub fn freq_weighted_sq_error(u: ArrayView3<f64>, v: ArrayView3<f64>) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", u.dim(), v.dim())));
    }
    let (c, h, w) = u.dim();
    let diff: Vec<f64> = u.iter().zip(v.iter()).map(|(a, b)| a - b).collect();
    Ok(FreqWeightedError::<f64>::new(h, w)?.eval(&diff, c, None))
}

/// Inclusive radial wavenumber band `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub lo: usize,
    pub hi: usize,
}

impl Band {
    pub const fn new(lo: usize, hi: usize) -> Self {
        Band { lo, hi }
    }

    pub fn contains(&self, shell: usize) -> bool {
        shell >= self.lo && shell <= self.hi
    }
}

/// Low `[0,4]`, mid `[5,12]`, high `[13, ξ_max]` on grids large enough to hold
/// them; bands lying entirely above `ξ_max` are `None`, partial ones clipped.
pub fn default_bands(h: usize, w: usize) -> [Option<Band>; 3] {
    let xi_max = h.min(w) / 2;
    let clip = |lo: usize, hi: usize| (lo <= xi_max).then(|| Band::new(lo, hi.min(xi_max)));
    [clip(0, 4), clip(5, 12), clip(13, xi_max.max(13))]
}

/// The single `[0, ξ_max]` band used for total fRMSE.
pub fn total_band(h: usize, w: usize) -> Band {
    Band::new(0, h.min(w) / 2)
}

/// Energy of `ΔF` per radial shell `0..=ξ_max` for one real frame difference.
pub fn shell_energies(diff: &[f64], grid: &SpectralGrid, fft: &Fft2<f64>) -> Vec<f64> {
    let n = grid.h * grid.w;
    let norm = 1.0 / n as f64;
    let spec = fft.forward_real(diff);
    let xi_max = grid.xi_max();
    let mut shells = vec![0.0; xi_max + 1];
    for (idx, s) in spec.iter().enumerate() {
        let shell = grid.shell(idx);
        if shell <= xi_max {
            shells[shell] += (s * norm).norm_sqr();
        }
    }
    shells
}

/// Banded fRMSE between `[steps, C, H, W]` sequences: per frame and channel
/// `sqrt(Σ_{ξ∈band} |ΔF|²) / (hi − lo + 1)`, averaged over steps and channels.
pub fn radial_band_rmse(u_seq: ArrayView4<f64>, v_seq: ArrayView4<f64>, bands: &[Band]) -> Result<Vec<f64>> {
    if u_seq.dim() != v_seq.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", u_seq.dim(), v_seq.dim())));
    }
    let (steps, c, h, w) = u_seq.dim();
    let grid = SpectralGrid::new(h, w, 1.0, 1.0)?;
    for b in bands {
        if b.hi < b.lo || b.lo > grid.xi_max() {
            return Err(Error::EmptyBand { lo: b.lo, hi: b.hi });
        }
    }
    let fft = Fft2::<f64>::new(h, w);
    let mut out = vec![0.0; bands.len()];
    let mut diff = vec![0.0; h * w];
    for t in 0..steps {
        for ch in 0..c {
            let a = u_seq.slice(ndarray::s![t, ch, .., ..]);
            let b = v_seq.slice(ndarray::s![t, ch, .., ..]);
            for (d, (x, y)) in diff.iter_mut().zip(a.iter().zip(b.iter())) {
                *d = x - y;
            }
            let shells = shell_energies(&diff, &grid, &fft);
            for (o, band) in out.iter_mut().zip(bands) {
                let e: f64 = shells.iter().enumerate().filter(|(s, _)| band.contains(*s)).map(|(_, e)| e).sum();
                *o += e.sqrt() / (band.hi - band.lo + 1) as f64;
            }
        }
    }
    let count = (steps * c).max(1) as f64;
    Ok(out.into_iter().map(|x| x / count).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};

    fn sine_field(h: usize, w: usize, lx: f64) -> Array3<f64> {
        Array3::from_shape_fn((1, h, w), |(_, _, x)| (2.0 * PI * (x as f64 * lx / w as f64) / lx).sin())
    }

    fn max_rel(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let f = Array3::from_elem((2, 8, 8), 3.0f64);
        let d = spectral_derivative(f.view(), 1.0, 1.0, Axis::X, 1).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-13));
        let s = derivative_stack(f.view(), 2.0, 2.0).unwrap();
        assert_eq!(s.dim(), (10, 8, 8));
        assert!(s.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn first_and_second_derivatives_of_sine() {
        let (h, w, lx) = (16, 32, 2.0);
        let f = sine_field(h, w, lx);
        let k = 2.0 * PI / lx;
        let dx = spectral_derivative(f.view(), lx, 1.0, Axis::X, 1).unwrap();
        let expect = Array3::from_shape_fn((1, h, w), |(_, _, x)| k * (k * x as f64 * lx / w as f64).cos());
        assert!(max_rel(&dx, &expect) <= 1e-10);
        let dxx = spectral_derivative(f.view(), lx, 1.0, Axis::X, 2).unwrap();
        let expect = f.mapv(|v| -k * k * v);
        assert!(max_rel(&dxx, &expect) <= 1e-10);
        let dy = spectral_derivative(f.view(), lx, 1.0, Axis::Y, 1).unwrap();
        assert!(dy.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mixed_derivative_of_product_of_sines() {
        let (n, l) = (16, 3.0);
        let k = 2.0 * PI / l;
        let x = |i: usize| i as f64 * l / n as f64;
        let f = Array3::from_shape_fn((1, n, n), |(_, j, i)| (k * x(i)).sin() * (k * x(j)).sin());
        let s = derivative_stack(f.view(), l, l).unwrap();
        let expect = Array3::from_shape_fn((1, n, n), |(_, j, i)| k * k * (k * x(i)).cos() * (k * x(j)).cos());
        let dxy = s.slice(ndarray::s![4..5, .., ..]).to_owned();
        assert!(max_rel(&dxy, &expect) <= 1e-9);
    }

    #[test]
    fn stack_ordering_is_kind_major() {
        assert_eq!(derivative_channel(DerivativeKind::Dx, 1, 2), 1);
        assert_eq!(derivative_channel(DerivativeKind::Dxx, 0, 2), 4);
        assert_eq!(derivative_channel(DerivativeKind::Dxy, 1, 2), 9);
        let names = derivative_channel_names(&["u", "v"]);
        assert_eq!(names[4..], ["u_xx", "v_xx", "u_yy", "v_yy", "u_xy", "v_xy"]);
    }

    #[test]
    fn adjoint_identity_holds() {
        // <D x, y> == <x, D* y> for the full stack.
        let (c, h, w) = (2, 8, 12);
        let op = DerivativeOperator::<f64>::new(SpectralGrid::new(h, w, 2.0, 1.5).unwrap());
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let y: Vec<f64> = (0..5 * c * h * w).map(|i| ((i * 53 % 97) as f64 / 48.0) - 1.0).collect();
        let mut dx = vec![0.0; 5 * c * h * w];
        op.stack_into(&x, c, &mut dx);
        let mut dty = vec![0.0; c * h * w];
        op.stack_adjoint_into(&y, c, &mut dty);
        let lhs: f64 = dx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn freq_error_zero_cases() {
        let u = Array3::from_shape_fn((2, 8, 8), |(c, y, x)| (c + y * x) as f64 * 0.1);
        assert_eq!(freq_weighted_sq_error(u.view(), u.view()).unwrap(), 0.0);
        let v = u.mapv(|x| x + 2.5);
        assert!(freq_weighted_sq_error(u.view(), v.view()).unwrap().abs() < 1e-20);
        let bad = Array3::<f64>::zeros((1, 8, 8));
        assert!(matches!(freq_weighted_sq_error(u.view(), bad.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn single_mode_freq_error() {
        // a·sin(2πx/L): two bins at |ξ| = 1 with |F| = a/2.
        let a = 0.7;
        let u = sine_field(8, 8, 1.0).mapv(|v| a * v);
        let z = Array3::zeros((1, 8, 8));
        let e = freq_weighted_sq_error(u.view(), z.view()).unwrap();
        assert!((e - 2.0 * (a / 2.0) * (a / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn freq_error_gradient_matches_finite_differences() {
        let (c, h, w) = (1, 8, 8);
        let op = FreqWeightedError::<f64>::new(h, w).unwrap();
        let d: Vec<f64> = (0..c * h * w).map(|i| ((i * 29 % 31) as f64 / 15.0) - 1.0).collect();
        let mut g = vec![0.0; d.len()];
        op.eval(&d, c, Some((&mut g, 1.0)));
        let eps = 1e-6;
        for j in [0, 5, 17, 63] {
            let mut p = d.clone();
            p[j] += eps;
            let up = op.eval(&p, c, None);
            p[j] -= 2.0 * eps;
            let down = op.eval(&p, c, None);
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - g[j]).abs() <= 1e-7 * g[j].abs().max(1e-3), "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn default_band_edges_on_64_grid() {
        let [lo, mid, hi] = default_bands(64, 64);
        assert_eq!(lo, Some(Band::new(0, 4)));
        assert_eq!(mid, Some(Band::new(5, 12)));
        assert_eq!(hi, Some(Band::new(13, 32)));
        assert_eq!(default_bands(16, 16)[2], None);
        assert_eq!(default_bands(16, 16)[1], Some(Band::new(5, 8)));
    }

    #[test]
    fn band_rmse_validation() {
        let u = Array4::<f64>::zeros((2, 1, 8, 8));
        let r = radial_band_rmse(u.view(), u.view(), &[Band::new(0, 4)]).unwrap();
        assert_eq!(r, vec![0.0]);
        assert!(matches!(radial_band_rmse(u.view(), u.view(), &[Band::new(3, 2)]), Err(Error::EmptyBand { .. })));
        assert!(matches!(radial_band_rmse(u.view(), u.view(), &[Band::new(5, 9)]), Err(Error::EmptyBand { .. })));
    }
}
