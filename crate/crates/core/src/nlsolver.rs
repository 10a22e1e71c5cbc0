//! Spectral toolkit for the gauged cubic Schrödinger equation
//! `i ψ_t + ψ_xx + ½(|ψ|² − a(t)) ψ = 0` and its pseudo-conformal form.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::Grid1D;
use crate::io;

/// Complex field on a periodic grid with a time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    pub grid: Grid1D,
    pub values: Vec<Complex64>,
    pub time: f64,
}

impl WaveField {
    pub fn new(grid: Grid1D, values: Vec<Complex64>, time: f64) -> Result<Self> {
        if !grid.n.is_power_of_two() {
            return Err(LabError::Contract(format!("wave grid size {} is not a power of two", grid.n)));
        }
        if values.len() != grid.n {
            return Err(LabError::Contract("value count does not match grid".into()));
        }
        Ok(Self { grid, values, time })
    }

    pub fn from_fn<F: FnMut(f64) -> Complex64>(grid: Grid1D, time: f64, f: F) -> Result<Self> {
        let values = grid.nodes().into_iter().map(f).collect();
        Self::new(grid, values, time)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn extent(&self) -> f64 {
        self.grid.n as f64 * self.grid.h
    }
}

/// Centered periodic grid `x_j = −L/2 + j L/n`.
pub fn periodic_grid(extent: f64, n: usize) -> Result<Grid1D> {
    if !n.is_power_of_two() {
        return Err(LabError::Contract(format!("grid size {n} is not a power of two")));
    }
    let h = extent / n as f64;
    Grid1D::new(-(n as f64 / 2.0) * h, h, n)
}

/// The gauge `a(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GaugeSpec {
    Zero,
    Critical { alpha: f64 },
}

impl GaugeSpec {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            GaugeSpec::Zero => 0.0,
            GaugeSpec::Critical { alpha } => alpha * alpha / t,
        }
    }

    /// `∫_{ta}^{tb} a(t) dt`.
    pub fn integral(&self, ta: f64, tb: f64) -> f64 {
        match *self {
            GaugeSpec::Zero => 0.0,
            GaugeSpec::Critical { alpha } => alpha * alpha * (tb / ta).ln(),
        }
    }
}

/// Wavenumbers and FFT plans for one grid.
#[derive(Clone)]
pub struct SpectralGrid {
    pub grid: Grid1D,
    /// Angular wavenumbers in FFT order.
    pub xi: Vec<f64>,
    shift: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid").field("grid", &self.grid).finish()
    }
}

impl SpectralGrid {
    pub fn new(grid: Grid1D) -> Result<Self> {
        let n = grid.n;
        if !n.is_power_of_two() {
            return Err(LabError::Contract(format!("grid size {n} is not a power of two")));
        }
        let extent = n as f64 * grid.h;
        let xi: Vec<f64> = (0..n)
            .map(|k| {
                let m = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
                2.0 * std::f64::consts::PI * m / extent
            })
            .collect();
        let shift = xi.iter().map(|&k| Complex64::from_polar(1.0, -grid.x_min * k)).collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            grid,
            xi,
            shift,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    /// `F f(ξ) ≈ ∫ e^{−ixξ} f(x) dx` on the grid modes.
    pub fn forward(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut buf = values.to_vec();
        self.forward.process(&mut buf);
        let h = self.grid.h;
        for (b, s) in buf.iter_mut().zip(&self.shift) {
            *b *= s * h;
        }
        buf
    }

    /// Inverse of [`SpectralGrid::forward`].
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = coeffs.iter().zip(&self.shift).map(|(c, s)| c * s.conj()).collect();
        self.inverse.process(&mut buf);
        let scale = 1.0 / (self.grid.n as f64 * self.grid.h);
        for b in buf.iter_mut() {
            *b *= scale;
        }
        buf
    }

    /// Applies `e^{it∂²}` (multiplier `e^{−itξ²}`) in place.
    pub fn propagate(&self, values: &mut [Complex64], t: f64) {
        if t == 0.0 {
            return;
        }
        let mut buf = values.to_vec();
        self.forward.process(&mut buf);
        let scale = 1.0 / self.grid.n as f64;
        for (b, k) in buf.iter_mut().zip(&self.xi) {
            *b *= Complex64::from_polar(scale, -t * k * k);
        }
        self.inverse.process(&mut buf);
        values.copy_from_slice(&buf);
    }

    /// Spectral `∂ˣ^order`.
    pub fn derivative(&self, values: &[Complex64], order: u32) -> Vec<Complex64> {
        let mut buf = values.to_vec();
        self.forward.process(&mut buf);
        let scale = 1.0 / self.grid.n as f64;
        for (b, k) in buf.iter_mut().zip(&self.xi) {
            *b *= Complex64::new(0.0, *k).powu(order) * scale;
        }
        self.inverse.process(&mut buf);
        buf
    }
}

/// Spectral coefficients of a field in the fixed convention, in FFT order.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub grid: Grid1D,
    pub xi: Vec<f64>,
    pub coeffs: Vec<Complex64>,
    pub time: f64,
}

pub fn fourier_forward(f: &WaveField) -> Result<Spectrum> {
    let sg = SpectralGrid::new(f.grid)?;
    Ok(Spectrum { grid: f.grid, coeffs: sg.forward(&f.values), xi: sg.xi, time: f.time })
}

pub fn fourier_inverse(s: &Spectrum) -> Result<WaveField> {
    let sg = SpectralGrid::new(s.grid)?;
    WaveField::new(s.grid, sg.inverse(&s.coeffs), s.time)
}

/// `e^{it∂²} f`; the time stamp is advanced by `t`.
pub fn free_propagate(f: &WaveField, t: f64) -> Result<WaveField> {
    let sg = SpectralGrid::new(f.grid)?;
    let mut values = f.values.clone();
    sg.propagate(&mut values, t);
    WaveField::new(f.grid, values, f.time + t)
}

/// `h Σ |f_j|²`.
pub fn conserved_mass(f: &WaveField) -> f64 {
    f.grid.h * f.values.iter().map(|z| z.norm_sqr()).sum::<f64>()
}

/// Cosine taper equal to 1 for `|x| ≤ (1 − fraction)·L/2`, falling to 0 at the edges.
pub fn cosine_taper(grid: &Grid1D, fraction: f64) -> Vec<f64> {
    let half = grid.n as f64 * grid.h / 2.0;
    let inner = (1.0 - fraction) * half;
    grid.nodes()
        .iter()
        .map(|&x| {
            let a = x.abs();
            if a <= inner {
                1.0
            } else {
                let r = ((a - inner) / (half - inner)).min(1.0);
                0.5 * (1.0 + (std::f64::consts::PI * r).cos())
            }
        })
        .collect()
}

/// Indices with `|x| ≤ fraction · L/2`.
pub fn interior_indices(grid: &Grid1D, fraction: f64) -> Vec<usize> {
    let half = grid.n as f64 * grid.h / 2.0;
    (0..grid.n).filter(|&j| grid.x(j).abs() <= fraction * half).collect()
}

/// Time-ordered slices of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub slices: Vec<WaveField>,
    pub steps: usize,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.time).collect()
    }

    pub fn last(&self) -> &WaveField {
        self.slices.last().expect("trajectory has at least one slice")
    }

    /// Writes `slice_NNNN.csv` files, `manifest.json`, and optionally `slices.bin`.
    pub fn write_dir(&self, dir: &Path, gauge: Option<GaugeSpec>, binary: bool) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (k, s) in self.slices.iter().enumerate() {
            let rows: Vec<Vec<f64>> =
                (0..s.grid.n).map(|j| vec![s.grid.x(j), s.values[j].re, s.values[j].im]).collect();
            io::write_csv(&dir.join(format!("slice_{k:04}.csv")), &["x", "re", "im"], &rows)?;
        }
        let manifest = Manifest {
            grid: self.slices.first().map(|s| s.grid),
            times: self.times(),
            gauge,
            steps: self.steps,
        };
        io::write_json(&dir.join("manifest.json"), &manifest)?;
        if binary {
            let mut bytes = Vec::new();
            for s in &self.slices {
                for z in &s.values {
                    bytes.extend_from_slice(&z.re.to_le_bytes());
                    bytes.extend_from_slice(&z.im.to_le_bytes());
                }
            }
            fs::write(dir.join("slices.bin"), bytes)?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    grid: Option<Grid1D>,
    times: Vec<f64>,
    gauge: Option<GaugeSpec>,
    steps: usize,
}

/// Output marks strictly after `a` up to and including `b`, in marching order.
fn marks(a: f64, b: f64, outputs: &[f64]) -> Vec<f64> {
    let dir = if b >= a { 1.0 } else { -1.0 };
    let mut m: Vec<f64> =
        outputs.iter().cloned().filter(|&o| (o - a) * dir > 0.0 && (b - o) * dir > 0.0).collect();
    m.sort_by(|x, y| (x * dir).partial_cmp(&(y * dir)).unwrap());
    m.dedup();
    m.push(b);
    m
}

/// Advances `state` from `s` to `target` with steps of at most `step(s)`; the
/// last stretch is split evenly rather than leaving a sliver.
fn advance_to<T, S, A>(state: &mut T, s: f64, target: f64, step: &S, advance: &A) -> usize
where
    S: Fn(f64) -> f64,
    A: Fn(&mut T, f64, f64),
{
    let dir = if target >= s { 1.0 } else { -1.0 };
    let mut s = s;
    let mut steps = 0;
    while (target - s) * dir > 0.0 {
        let len = step(s);
        let remaining = (target - s).abs();
        let m = (remaining / len - 1e-9).ceil().max(1.0);
        let next = if m <= 1.0 { target } else { s + dir * remaining / m };
        advance(state, s, next);
        s = next;
        steps += 1;
    }
    steps
}

/// `w ↦ w e^{i(c|w|² − d)}` on every node.
fn nonlinear_phase(values: &mut [Complex64], c: f64, d: f64) {
    for z in values.iter_mut() {
        *z *= Complex64::from_polar(1.0, c * z.norm_sqr() - d);
    }
}

/// Strang splitting for `i ψ_t + ψ_xx + ½(|ψ|² − a(t))ψ = 0` from `t0` to `t1`.
///
/// The step is `min(dt, 0.1 / max|ψ|²)`; the gauge term is integrated exactly in
/// the nonlinear substeps. Slices are recorded at `t0`, at every output time
/// strictly between `t0` and `t1`, and at `t1`.
pub fn split_step_psi(
    psi: &WaveField,
    gauge: GaugeSpec,
    t0: f64,
    t1: f64,
    dt: f64,
    outputs: &[f64],
) -> Result<Trajectory> {
    if let GaugeSpec::Critical { .. } = gauge {
        if !(t0 > 0.0) || !(t1 > 0.0) {
            return Err(LabError::Domain(format!("critical gauge needs t > 0 (t0 = {t0}, t1 = {t1})")));
        }
    }
    if !(dt > 0.0) {
        return Err(LabError::Contract("time step must be positive".into()));
    }
    let sg = SpectralGrid::new(psi.grid)?;
    let m = psi.max_abs();
    let step = if m > 0.0 { dt.min(0.1 / (m * m)) } else { dt };
    let nl = |v: &mut Vec<Complex64>, ta: f64, tb: f64| {
        let ga = if tb >= ta { gauge.integral(ta, tb) } else { -gauge.integral(tb, ta) };
        nonlinear_phase(v, 0.5 * (tb - ta), 0.5 * ga);
    };
    let advance = |v: &mut Vec<Complex64>, ta: f64, tb: f64| {
        let tm = 0.5 * (ta + tb);
        nl(v, ta, tm);
        sg.propagate(v, tb - ta);
        nl(v, tm, tb);
    };
    let mut values = psi.values.clone();
    let mut slices = vec![WaveField { time: t0, ..psi.clone() }];
    let mut steps = 0;
    let mut s = t0;
    for mark in marks(t0, t1, outputs) {
        steps += advance_to(&mut values, s, mark, &|_| step, &advance);
        s = mark;
        slices.push(WaveField { grid: psi.grid, values: values.clone(), time: mark });
    }
    Ok(Trajectory { slices, steps })
}

/// Step policy for the pseudo-conformal evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StepPolicy {
    /// Constant step.
    Fixed { ds: f64 },
    /// `ds = min(kappa·s, ds_max)`.
    Relative { kappa: f64, ds_max: f64 },
}

impl StepPolicy {
    pub fn step(&self, s: f64) -> f64 {
        match *self {
            StepPolicy::Fixed { ds } => ds,
            StepPolicy::Relative { kappa, ds_max } => (kappa * s.abs()).min(ds_max),
        }
    }
}

/// Strang splitting for `i u_s + u_yy + (1/2s)(|u+α|² − α²)(u+α) = 0`
/// from `s0` to `s1` (either direction).
///
/// The nonlinear substep is the exact flow `w ↦ w e^{i·½(|w|² − α²) ln(s_b/s_a)}`
/// of `w = u + α`.
pub fn split_step_u(
    u: &WaveField,
    alpha: f64,
    s0: f64,
    s1: f64,
    policy: StepPolicy,
    outputs: &[f64],
) -> Result<Trajectory> {
    let mut slices = Vec::new();
    let (_, steps) = split_step_u_visit(u, alpha, s0, s1, policy, outputs, |w| {
        slices.push(w.clone());
        Ok(())
    })?;
    Ok(Trajectory { slices, steps })
}

/// Same evolution as [`split_step_u`], handing each recorded slice to `visit`
/// instead of storing it. Returns the final field and the step count.
pub fn split_step_u_visit<V>(
    u: &WaveField,
    alpha: f64,
    s0: f64,
    s1: f64,
    policy: StepPolicy,
    outputs: &[f64],
    mut visit: V,
) -> Result<(WaveField, usize)>
where
    V: FnMut(&WaveField) -> Result<()>,
{
    if s0 < 1.0 || s1 < 1.0 {
        return Err(LabError::Domain(format!("pseudo-conformal time must be >= 1 (s0 = {s0}, s1 = {s1})")));
    }
    if !(policy.step(s0) > 0.0) {
        return Err(LabError::Contract("step must be positive".into()));
    }
    let sg = SpectralGrid::new(u.grid)?;
    let a = Complex64::new(alpha, 0.0);
    let nl = |v: &mut Vec<Complex64>, sa: f64, sb: f64| {
        let l = 0.5 * (sb / sa).ln();
        for z in v.iter_mut() {
            let w = *z + a;
            *z = w * Complex64::from_polar(1.0, l * (w.norm_sqr() - alpha * alpha)) - a;
        }
    };
    let advance = |v: &mut Vec<Complex64>, sa: f64, sb: f64| {
        let sm = (sa * sb).sqrt();
        nl(v, sa, sm);
        sg.propagate(v, sb - sa);
        nl(v, sm, sb);
    };
    let mut field = WaveField { time: s0, ..u.clone() };
    visit(&field)?;
    let mut steps = 0;
    for mark in marks(s0, s1, outputs) {
        steps += advance_to(&mut field.values, field.time, mark, &|s| policy.step(s), &advance);
        field.time = mark;
        visit(&field)?;
    }
    Ok((field, steps))
}

fn check_uniform(slices: &[WaveField]) -> Result<f64> {
    if slices.len() < 3 {
        return Err(LabError::Contract("residual needs >= 3 slices".into()));
    }
    let dt = slices[1].time - slices[0].time;
    if slices.windows(2).any(|w| ((w[1].time - w[0].time) - dt).abs() > 1e-9 * dt.abs()) {
        return Err(LabError::Contract("slices must be uniformly spaced in time".into()));
    }
    if slices.iter().any(|s| s.grid != slices[0].grid) {
        return Err(LabError::Contract("slices live on different grids".into()));
    }
    Ok(dt)
}

/// Max over interior slices and the inner `interior` fraction of the grid of
/// `|i D_t ψ + ψ_xx + ½(|ψ|² − a)ψ|` with a centered time difference.
pub fn nls_residual(slices: &[WaveField], gauge: GaugeSpec, interior: f64) -> Result<f64> {
    let dt = check_uniform(slices)?;
    let grid = slices[0].grid;
    let sg = SpectralGrid::new(grid)?;
    let idx = interior_indices(&grid, interior);
    let i = Complex64::i();
    let mut worst: f64 = 0.0;
    for k in 1..slices.len() - 1 {
        let psi = &slices[k].values;
        let xx = sg.derivative(psi, 2);
        let a = gauge.value(slices[k].time);
        for &j in &idx {
            let dtp = (slices[k + 1].values[j] - slices[k - 1].values[j]) / (2.0 * dt);
            let r = i * dtp + xx[j] + 0.5 * (psi[j].norm_sqr() - a) * psi[j];
            worst = worst.max(r.norm());
        }
    }
    Ok(worst)
}

/// Same check for the pseudo-conformal equation of `u` at parameter `alpha`.
pub fn u_residual(slices: &[WaveField], alpha: f64, interior: f64) -> Result<f64> {
    let ds = check_uniform(slices)?;
    let grid = slices[0].grid;
    let sg = SpectralGrid::new(grid)?;
    let idx = interior_indices(&grid, interior);
    let i = Complex64::i();
    let mut worst: f64 = 0.0;
    for k in 1..slices.len() - 1 {
        let u = &slices[k].values;
        let yy = sg.derivative(u, 2);
        let s = slices[k].time;
        for &j in &idx {
            let w = u[j] + alpha;
            let dsu = (slices[k + 1].values[j] - slices[k - 1].values[j]) / (2.0 * ds);
            let r = i * dsu + yy[j] + (w.norm_sqr() - alpha * alpha) * w / (2.0 * s);
            worst = worst.max(r.norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_mode_has_value_extent() {
        let g = periodic_grid(8.0, 64).unwrap();
        let f = WaveField::from_fn(g, 0.0, |_| Complex64::new(1.0, 0.0)).unwrap();
        let s = fourier_forward(&f).unwrap();
        assert!((s.coeffs[0] - Complex64::new(8.0, 0.0)).norm() < 1e-13);
        assert!(s.coeffs[1..].iter().all(|c| c.norm() < 1e-13));
    }

    #[test]
    fn plane_wave_is_a_delta() {
        let g = periodic_grid(2.0 * std::f64::consts::PI, 64).unwrap();
        let f = WaveField::from_fn(g, 0.0, |x| Complex64::from_polar(1.0, 3.0 * x)).unwrap();
        let s = fourier_forward(&f).unwrap();
        for (k, c) in s.coeffs.iter().enumerate() {
            if k == 3 {
                assert!((c.norm() - 2.0 * std::f64::consts::PI).abs() < 1e-12);
            } else {
                assert!(c.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_data_stays_zero_in_u() {
        let g = periodic_grid(20.0, 128).unwrap();
        let u = WaveField::new(g, vec![Complex64::new(0.0, 0.0); 128], 1.0).unwrap();
        let tr = split_step_u(&u, 0.4, 1.0, 3.0, StepPolicy::Fixed { ds: 0.1 }, &[]).unwrap();
        assert!(tr.last().max_abs() < 1e-15);
        assert!(split_step_u(&u, 0.4, 0.5, 3.0, StepPolicy::Fixed { ds: 0.1 }, &[]).is_err());
    }

    #[test]
    fn outputs_are_hit_exactly() {
        let g = periodic_grid(20.0, 128).unwrap();
        let u = WaveField::from_fn(g, 1.0, |x| Complex64::new((-x * x).exp(), 0.0)).unwrap();
        let tr = split_step_psi(&u, GaugeSpec::Zero, 1.0, 2.0, 0.03, &[1.5, 1.25, 3.0]).unwrap();
        assert_eq!(tr.times(), vec![1.0, 1.25, 1.5, 2.0]);
        let back = split_step_u(&u, 0.0, 4.0, 2.0, StepPolicy::Fixed { ds: 0.3 }, &[3.0]).unwrap();
        assert_eq!(back.times(), vec![4.0, 3.0, 2.0]);
    }

    #[test]
    fn critical_gauge_needs_positive_time() {
        let g = periodic_grid(20.0, 128).unwrap();
        let u = WaveField::new(g, vec![Complex64::new(0.0, 0.0); 128], 0.0).unwrap();
        let r = split_step_psi(&u, GaugeSpec::Critical { alpha: 0.3 }, 0.0, 1.0, 0.1, &[]);
        assert!(matches!(r, Err(LabError::Domain(_))));
    }
}
