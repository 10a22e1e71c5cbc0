//! Wave-operator side of the construction: the asymptotic state built from
//! filament data, hypothesis audits, the pseudo-conformal ansatz, and the
//! remainder and pointwise diagnostics.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::geometry::{filament_function, FilamentFunction, FrenetData, Grid1D};
use crate::nlsolver::{split_step_u_visit, SpectralGrid, StepPolicy, WaveField};
use crate::numerics::{cubic_sample, fit_power_law, uniform_derivative, PowerFit};

/// `√i = e^{iπ/4}`.
pub fn sqrt_i() -> Complex64 {
    Complex64::from_polar(1.0, PI / 4.0)
}

/// Asymptotic state `u₊` on a periodic grid.
#[derive(Debug, Clone)]
pub struct ScatteringDatum {
    pub grid: Grid1D,
    pub u_plus: Vec<Complex64>,
    pub alpha: f64,
    pub provenance: String,
    pub weighted_sup: (f64, f64),
}

impl ScatteringDatum {
    pub fn field(&self, s: f64) -> WaveField {
        WaveField { grid: self.grid, values: self.u_plus.clone(), time: s }
    }
}

/// `u₊ = F⁻¹[√i g(2ξ) e^{iα² log|ξ|}]` on `u_grid`, with the `ξ = 0` mode removed.
///
/// `g` is sampled at `2ξ` by cubic interpolation and extended by zero.
pub fn build_uplus(g: &FilamentFunction, alpha: f64, u_grid: Grid1D) -> Result<ScatteringDatum> {
    let sg = SpectralGrid::new(u_grid)?;
    let coeffs = uplus_spectrum(g, alpha, &sg.xi);
    let u_plus = sg.inverse(&coeffs);
    let mut sd = ScatteringDatum {
        grid: u_grid,
        u_plus,
        alpha,
        provenance: format!("filament function on {} nodes, h = {}", g.grid.n, g.grid.h),
        weighted_sup: (0.0, 0.0),
    };
    sd.weighted_sup = weighted_sup_bounds(&sd);
    Ok(sd)
}

/// Convenience wrapper building `g` from curvature and torsion first.
pub fn build_uplus_from_frenet(fd: &FrenetData, alpha: f64, u_grid: Grid1D) -> Result<ScatteringDatum> {
    build_uplus(&filament_function(fd), alpha, u_grid)
}

/// Target spectrum `√i g(2ξ) e^{iα² log|ξ|}` at the given wavenumbers.
pub fn uplus_spectrum(g: &FilamentFunction, alpha: f64, xi: &[f64]) -> Vec<Complex64> {
    let gg = &g.grid;
    xi.iter()
        .map(|&k| {
            if k == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let val = cubic_sample(gg.x_min, gg.h, &g.g, 2.0 * k).unwrap_or_default();
            sqrt_i() * val * Complex64::from_polar(1.0, alpha * alpha * k.abs().ln())
        })
        .collect()
}

/// `(sup |(1+x²) u₊|, sup |(1+x²) x u₊|)`.
pub fn weighted_sup_bounds(sd: &ScatteringDatum) -> (f64, f64) {
    let mut a: f64 = 0.0;
    let mut b: f64 = 0.0;
    for (j, z) in sd.u_plus.iter().enumerate() {
        let x = sd.grid.x(j);
        let w = (1.0 + x * x) * z.norm();
        a = a.max(w);
        b = b.max(w * x.abs());
    }
    (a, b)
}

/// Which asymptotic profile to compare the evolution against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AsymptoticKind {
    /// `e^{is∂²} u₊`.
    Literal,
    /// `e^{i(α²/2) ln(4s)} · 2√π · e^{is∂²} u₊`, the state actually reached by `u`.
    Modified,
}

/// Amplitude factor between `u₊` and the state used to seed the evolution.
pub const STATE_AMPLITUDE: f64 = 3.544_907_701_811_032; // 2√π

/// Asymptotic state at pseudo-conformal time `s`.
pub fn asymptotic_state(sd: &ScatteringDatum, s: f64, kind: AsymptoticKind) -> Result<WaveField> {
    let sg = SpectralGrid::new(sd.grid)?;
    asymptotic_state_with(&sg, sd, s, kind)
}

pub fn asymptotic_state_with(
    sg: &SpectralGrid,
    sd: &ScatteringDatum,
    s: f64,
    kind: AsymptoticKind,
) -> Result<WaveField> {
    let mut v = sd.u_plus.clone();
    sg.propagate(&mut v, s);
    if kind == AsymptoticKind::Modified {
        let f = Complex64::from_polar(STATE_AMPLITUDE, 0.5 * sd.alpha * sd.alpha * (4.0 * s).ln());
        for z in v.iter_mut() {
            *z *= f;
        }
    }
    WaveField::new(sd.grid, v, s)
}

/// One audited norm.
#[derive(Debug, Clone, Serialize)]
pub struct NormEntry {
    pub name: String,
    pub value: f64,
    /// Same norm on the inner half of the extent.
    pub half_extent: f64,
    /// Same norm on every other node.
    pub coarse: f64,
    pub suspect: bool,
    pub note: Option<String>,
}

/// Sampled magnitudes of the hypothesis norms with a growth heuristic.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub entries: Vec<NormEntry>,
}

impl HypothesisReport {
    pub fn get(&self, name: &str) -> Option<&NormEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn suspects(&self) -> Vec<&NormEntry> {
        self.entries.iter().filter(|e| e.suspect).collect()
    }
}

#[derive(Clone, Copy)]
enum NormKind {
    W1(usize),
    H(usize),
}

/// Norm of `f` over the listed pieces; each piece is a contiguous run of nodes.
fn piece_norm(pieces: &[Vec<f64>], h: f64, kind: NormKind) -> f64 {
    let (order, l1) = match kind {
        NormKind::W1(k) => (k, true),
        NormKind::H(k) => (k, false),
    };
    let mut total = 0.0;
    for piece in pieces {
        if piece.len() < 2 {
            continue;
        }
        for m in 0..=order {
            let d = if m == 0 {
                piece.clone()
            } else if piece.len() >= 7 {
                uniform_derivative(piece, h, m, if m >= 3 { 7 } else { 5 })
            } else {
                continue;
            };
            let f: Vec<f64> = d.iter().map(|v| if l1 { v.abs() } else { v * v }).collect();
            let n = f.len();
            total += h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[n - 1]));
        }
    }
    if l1 { total } else { total.sqrt() }
}

/// Audits the hypothesis norms of curvature and torsion on a symmetric grid.
///
/// Weights singular at 0 are evaluated on the two half-lines with the node at
/// 0 excluded. An entry is flagged when the full value exceeds twice the value
/// on the inner half extent, or twice the value on the coarsened grid.
pub fn hypothesis_norms(fd: &FrenetData) -> HypothesisReport {
    let grid = fd.grid;
    let j0 = grid.nearest(0.0);
    let zero_on_grid = grid.node_at(0.0).is_some();
    type Weight = fn(f64) -> f64;
    let specs: Vec<(&str, bool, Weight, NormKind, bool)> = vec![
        ("c_W31", false, |_| 1.0, NormKind::W1(3), false),
        ("c_H2", false, |_| 1.0, NormKind::H(2), false),
        ("c_over_x_W21", false, |x| 1.0 / x, NormKind::W1(2), true),
        ("c_over_x_H2", false, |x| 1.0 / x, NormKind::H(2), true),
        ("x2_c_W31", false, |x| x * x, NormKind::W1(3), false),
        ("x2_c_H2", false, |x| x * x, NormKind::H(2), false),
        ("one_plus_x2_c_L2", false, |x| 1.0 + x * x, NormKind::H(0), false),
        ("c_over_x2_L2", false, |x| 1.0 / (x * x), NormKind::H(0), true),
        ("tau_H2", true, |_| 1.0, NormKind::H(2), false),
        ("tau_sq_H1", true, |_| 1.0, NormKind::H(1), false),
    ];
    let entries = specs
        .into_iter()
        .map(|(name, use_tau, w, kind, singular)| {
            let value_at = |j: usize| {
                let x = grid.x(j);
                if use_tau {
                    if name == "tau_sq_H1" { fd.tau[j] * fd.tau[j] } else { fd.tau[j] }
                } else {
                    w(x) * fd.c[j]
                }
            };
            let eval = |keep: &dyn Fn(usize) -> bool, stride: usize| {
                let mut pieces = Vec::new();
                if singular {
                    let left: Vec<f64> =
                        (0..j0).rev().filter(|&j| (j0 - j) % stride == 0 && keep(j)).map(value_at).collect();
                    let start = if zero_on_grid { j0 + 1 } else { j0 };
                    let right: Vec<f64> = (start..grid.n)
                        .filter(|&j| (j - j0) % stride == 0 && keep(j) && grid.x(j) != 0.0)
                        .map(value_at)
                        .collect();
                    pieces.push(left);
                    pieces.push(right);
                } else {
                    let all: Vec<f64> =
                        (0..grid.n).filter(|&j| j.abs_diff(j0) % stride == 0 && keep(j)).map(value_at).collect();
                    pieces.push(all);
                }
                piece_norm(&pieces, grid.h * stride as f64, kind)
            };
            let half = 0.5 * grid.x_max().max(-grid.x_min);
            let value = eval(&|_| true, 1);
            let half_extent = eval(&|j| grid.x(j).abs() <= half, 1);
            let coarse = eval(&|_| true, 2);
            let suspect = !value.is_finite()
                || value > 2.0 * half_extent + 1e-300
                || value > 2.0 * coarse + 1e-300;
            let note = singular.then(|| "node at x = 0 excluded (weight singular there)".to_string());
            NormEntry { name: name.to_string(), value, half_extent, coarse, suspect, note }
        })
        .collect();
    HypothesisReport { entries }
}

/// `ψ(t, x) = e^{ix²/4t}/√t · (α + ū(1/t, x/t))` on the image grid `x = t y`.
pub fn assemble_psi(alpha: f64, u: &WaveField, t: f64) -> Result<WaveField> {
    if !(t > 0.0) {
        return Err(LabError::Domain(format!("t must be positive, got {t}")));
    }
    let g = Grid1D::new(t * u.grid.x_min, t * u.grid.h, u.grid.n)?;
    let st = t.sqrt();
    let values = u
        .values
        .iter()
        .enumerate()
        .map(|(j, z)| {
            let x = g.x(j);
            Complex64::from_polar(1.0 / st, x * x / (4.0 * t)) * (alpha + z.conj())
        })
        .collect();
    WaveField::new(g, values, t)
}

/// Inverse of [`assemble_psi`]; returns `u(1/t, ·)` on the grid `y = x/t`.
pub fn extract_u(psi: &WaveField, alpha: f64, t: f64) -> Result<WaveField> {
    if !(t > 0.0) {
        return Err(LabError::Domain(format!("t must be positive, got {t}")));
    }
    let g = Grid1D::new(psi.grid.x_min / t, psi.grid.h / t, psi.grid.n)?;
    let st = t.sqrt();
    let values = psi
        .values
        .iter()
        .enumerate()
        .map(|(j, z)| {
            let x = psi.grid.x(j);
            let w = z * Complex64::from_polar(st, -x * x / (4.0 * t));
            (w - alpha).conj()
        })
        .collect();
    WaveField::new(g, values, 1.0 / t)
}

/// Smooth envelope `q = e^{−iy²/4s} u` of one `u` slice, resampled finely on a
/// window, from which `ψ` and `ψ_x` are evaluated anywhere in `|x| ≤ x_window`.
#[derive(Debug, Clone)]
pub struct PsiSlice {
    pub alpha: f64,
    pub t: f64,
    y_min: f64,
    h: f64,
    q: Vec<Complex64>,
    qy: Vec<Complex64>,
    qyy: Vec<Complex64>,
}

/// Upsampling factor for the envelope at pseudo-conformal time `s`.
pub fn envelope_upsampling(s: f64) -> usize {
    let m = (32.0 / s).ceil().max(1.0) as usize;
    m.next_power_of_two().min(16)
}

impl PsiSlice {
    pub fn from_u(u: &WaveField, sg: &SpectralGrid, alpha: f64, x_window: f64) -> Result<Self> {
        let s = u.time;
        let t = 1.0 / s;
        let grid = u.grid;
        let n = grid.n;
        let m = envelope_upsampling(s);
        let chirp = |y: f64| Complex64::from_polar(1.0, -y * y / (4.0 * s));
        let q: Vec<Complex64> = u.values.iter().enumerate().map(|(j, z)| chirp(grid.x(j)) * z).collect();
        let y_half = x_window / t + 8.0 * grid.h;
        let lo = grid.nearest(-y_half).saturating_sub(2);
        let hi = (grid.nearest(y_half) + 2).min(n - 1);
        if grid.x(lo) > -x_window / t || grid.x(hi) < x_window / t {
            return Err(LabError::Range(format!("u grid does not cover |y| <= {}", x_window / t)));
        }
        // spectrum of q in plain FFT normalization
        let mut spec = q.clone();
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(n).process(&mut spec);
        let nm = n * m;
        let inv = planner.plan_fft_inverse(nm);
        let derive = |order: u32| -> Vec<Complex64> {
            let mut big = vec![Complex64::new(0.0, 0.0); nm];
            for k in 0..n {
                let xi = sg.xi[k];
                let c = spec[k] * Complex64::new(0.0, xi).powu(order) / n as f64;
                let dst = if k < n / 2 { k } else { nm - (n - k) };
                if k == n / 2 {
                    // split the Nyquist mode symmetrically
                    big[dst] += 0.5 * c;
                    big[n / 2] += 0.5 * c * if order % 2 == 1 { -1.0 } else { 1.0 };
                } else {
                    big[dst] = c;
                }
            }
            inv.process(&mut big);
            big[lo * m..=hi * m].to_vec()
        };
        let (q, qy, qyy) = (derive(0), derive(1), derive(2));
        Ok(Self { alpha, t, y_min: grid.x(lo), h: grid.h / m as f64, q, qy, qyy })
    }

    fn hermite(&self, v: &[Complex64], dv: &[Complex64], y: f64) -> Option<Complex64> {
        let pos = (y - self.y_min) / self.h;
        if !(pos >= 0.0) || pos > (v.len() - 1) as f64 {
            return None;
        }
        let j = (pos.floor() as usize).min(v.len() - 2);
        let u = pos - j as f64;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u),
            u * (1.0 - u) * (1.0 - u),
            u * u * (3.0 - 2.0 * u),
            u * u * (u - 1.0),
        );
        Some(v[j] * h00 + dv[j] * (h10 * self.h) + v[j + 1] * h01 + dv[j + 1] * (h11 * self.h))
    }

    /// `(ψ, ψ_x)` at `x`.
    pub fn eval(&self, x: f64) -> Result<(Complex64, Complex64)> {
        let t = self.t;
        let y = x / t;
        let q = self.hermite(&self.q, &self.qy, y);
        let qy = self.hermite(&self.qy, &self.qyy, y);
        let (q, qy) = match (q, qy) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(LabError::Range(format!("x = {x} outside the stored window"))),
        };
        let st = t.sqrt();
        let e = Complex64::from_polar(1.0, x * x / (4.0 * t));
        let psi = self.alpha * e / st + q.conj() / st;
        let psi_x = self.alpha * Complex64::new(0.0, x / (2.0 * t)) * e / st + qy.conj() / (t * st);
        Ok((psi, psi_x))
    }
}

/// `u(s, 0)` and `u_y(s, 0)` from the spectrum.
pub fn origin_values(u: &WaveField, sg: &SpectralGrid) -> (Complex64, Complex64) {
    let coeffs = sg.forward(&u.values);
    let extent = u.grid.n as f64 * u.grid.h;
    let mut v = Complex64::new(0.0, 0.0);
    let mut d = Complex64::new(0.0, 0.0);
    for (c, &k) in coeffs.iter().zip(&sg.xi) {
        v += c;
        d += c * Complex64::new(0.0, k);
    }
    (v / extent, d / extent)
}

/// Time series of the remainder and pointwise quantities.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RemainderDiagnostics {
    /// ψ-time `t = 1/s` of each record.
    pub times: Vec<f64>,
    pub r_l2: Vec<f64>,
    pub r_h1: Vec<f64>,
    pub r_h2: Vec<f64>,
    /// `‖u − e^{is∂²}u₊‖₂` against the unmodified state (control).
    pub r_l2_literal: Vec<f64>,
    pub pointwise_u: Vec<f64>,
    pub pointwise_r: Vec<f64>,
    pub pointwise_ux: Vec<f64>,
    pub cancel_bound: Vec<f64>,
}

/// Fitted exponents with their targets.
#[derive(Debug, Clone, Serialize)]
pub struct RemainderFits {
    pub r_l2: PowerFit,
    pub r_h1: PowerFit,
    pub r_h2: PowerFit,
    pub r_l2_literal: Option<PowerFit>,
    pub pointwise_u: PowerFit,
    pub pointwise_r: PowerFit,
    pub pointwise_ux: PowerFit,
    pub cancel: PowerFit,
}

/// Collects remainder records slice by slice.
pub struct RemainderAccumulator<'a> {
    sd: &'a ScatteringDatum,
    sg: SpectralGrid,
    pub x_window: f64,
    pub diag: RemainderDiagnostics,
}

impl<'a> RemainderAccumulator<'a> {
    pub fn new(sd: &'a ScatteringDatum, x_window: f64) -> Result<Self> {
        Ok(Self { sd, sg: SpectralGrid::new(sd.grid)?, x_window, diag: RemainderDiagnostics::default() })
    }

    pub fn record(&mut self, u: &WaveField, kind: AsymptoticKind) -> Result<()> {
        let s = u.time;
        let t = 1.0 / s;
        let asym = asymptotic_state_with(&self.sg, self.sd, s, kind)?;
        let r: Vec<Complex64> = u.values.iter().zip(&asym.values).map(|(a, b)| a - b).collect();
        let rh = self.sg.forward(&r);
        let extent = u.grid.n as f64 * u.grid.h;
        let mut n1 = 0.0;
        let mut n2 = 0.0;
        for (c, k) in rh.iter().zip(&self.sg.xi) {
            n1 += (k * k) * c.norm_sqr();
            n2 += (k * k * k * k) * c.norm_sqr();
        }
        let h = u.grid.h;
        let l2 = |v: &[Complex64]| (h * v.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt();
        let literal = asymptotic_state_with(&self.sg, self.sd, s, AsymptoticKind::Literal)?;
        let rl: Vec<Complex64> = u.values.iter().zip(&literal.values).map(|(a, b)| a - b).collect();
        let uy = self.sg.derivative(&u.values, 1);
        let (mut pu, mut pr, mut pux, mut pc) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for j in 0..u.grid.n {
            let y = u.grid.x(j);
            if (y * t).abs() > self.x_window {
                continue;
            }
            pu = pu.max(u.values[j].norm());
            pr = pr.max(r[j].norm());
            // ∂ₓ[u(1/t, x/t)] = s u_y and the combination (ix/2t) u − ∂ₓ[u(1/t, x/t)]
            pux = pux.max(s * uy[j].norm());
            pc = pc.max((Complex64::new(0.0, 0.5 * y) * u.values[j] - s * uy[j]).norm());
        }
        let d = &mut self.diag;
        d.times.push(t);
        d.r_l2.push(l2(&r));
        d.r_h1.push((n1 / extent).sqrt());
        d.r_h2.push((n2 / extent).sqrt());
        d.r_l2_literal.push(l2(&rl));
        d.pointwise_u.push(pu);
        d.pointwise_r.push(pr);
        d.pointwise_ux.push(pux);
        d.cancel_bound.push(pc);
        Ok(())
    }
}

/// Remainder diagnostics over stored `u` slices (time stamps are `s`).
pub fn remainder_diagnostics(
    slices: &[WaveField],
    sd: &ScatteringDatum,
    kind: AsymptoticKind,
    x_window: f64,
) -> Result<RemainderDiagnostics> {
    let mut acc = RemainderAccumulator::new(sd, x_window)?;
    for u in slices {
        acc.record(u, kind)?;
    }
    Ok(acc.diag)
}

/// Power-law fits of every series against `t` over the smallest run of
/// records whose times enclose `[t_lo, t_hi]`.
pub fn fit_remainder(d: &RemainderDiagnostics, t_lo: f64, t_hi: f64) -> Result<RemainderFits> {
    let below = d.times.iter().copied().filter(|&t| t <= t_lo).fold(f64::NEG_INFINITY, f64::max);
    let above = d.times.iter().copied().filter(|&t| t >= t_hi).fold(f64::INFINITY, f64::min);
    let sel: Vec<usize> = (0..d.times.len()).filter(|&k| d.times[k] >= below && d.times[k] <= above).collect();
    let ts: Vec<f64> = sel.iter().map(|&k| d.times[k]).collect();
    if ts.is_empty() || ts.iter().cloned().fold(0.0, f64::max) / ts.iter().cloned().fold(f64::INFINITY, f64::min) < 9.99 {
        return Err(LabError::FitUnstable("remainder fit needs at least one decade in t".into()));
    }
    let pick = |v: &Vec<f64>| sel.iter().map(|&k| v[k]).collect::<Vec<f64>>();
    let fit = |v: &Vec<f64>| fit_power_law(&ts, &pick(v), 5);
    Ok(RemainderFits {
        r_l2: fit(&d.r_l2)?,
        r_h1: fit(&d.r_h1)?,
        r_h2: fit(&d.r_h2)?,
        r_l2_literal: fit(&d.r_l2_literal).ok(),
        pointwise_u: fit(&d.pointwise_u)?,
        pointwise_r: fit(&d.pointwise_r)?,
        pointwise_ux: fit(&d.pointwise_ux)?,
        cancel: fit(&d.cancel_bound)?,
    })
}

/// Pointwise part only: sups of `u`, `∂ₓu(1/t, x/t)` and the cancellation
/// combination over `|x| ≤ x_window`, plus the remainder sup when a datum is given.
pub fn pointwise_bounds_check(
    slices: &[WaveField],
    sd: &ScatteringDatum,
    x_window: f64,
) -> Result<RemainderDiagnostics> {
    remainder_diagnostics(slices, sd, AsymptoticKind::Modified, x_window)
}

/// What to record during the backward evolution of `u`, in ψ-time.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub t_min: f64,
    pub t_max: f64,
    pub policy: StepPolicy,
    /// Times at which remainder and pointwise diagnostics are recorded.
    pub diagnostic_times: Vec<f64>,
    /// Times at which `u(s, 0)` and `u_y(s, 0)` are kept.
    pub probe_times: Vec<f64>,
    /// Times at which an envelope slice is kept.
    pub slice_times: Vec<f64>,
    pub slice_window: f64,
    pub pointwise_window: f64,
}

/// `u(1/t, 0)` and `u_y(1/t, 0)`.
#[derive(Debug, Clone, Copy)]
pub struct OriginProbe {
    pub t: f64,
    pub u: Complex64,
    pub uy: Complex64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub diagnostics: RemainderDiagnostics,
    pub probes: Vec<OriginProbe>,
    pub slices: Vec<PsiSlice>,
    pub steps: usize,
    /// `sup |u|` over all recorded slices.
    pub u_sup: f64,
    pub final_field: WaveField,
}

/// Seeds `u` with the modified asymptotic state at `s = 1/t_min` and evolves
/// down to `s = 1/t_max`, recording everything the plan asks for on the way.
pub fn backward_sweep(sd: &ScatteringDatum, plan: &SweepPlan) -> Result<SweepOutput> {
    if !(plan.t_min > 0.0 && plan.t_min < plan.t_max && plan.t_max <= 1.0) {
        return Err(LabError::Domain(format!(
            "need 0 < t_min < t_max <= 1 (got {}, {})",
            plan.t_min, plan.t_max
        )));
    }
    let sg = SpectralGrid::new(sd.grid)?;
    let s_max = 1.0 / plan.t_min;
    let seed = asymptotic_state_with(&sg, sd, s_max, AsymptoticKind::Modified)?;
    let key = |t: f64| (1.0 / t).to_bits();
    let diag: HashSet<u64> = plan.diagnostic_times.iter().map(|&t| key(t)).collect();
    let probe: HashMap<u64, f64> = plan.probe_times.iter().map(|&t| (key(t), t)).collect();
    let slice: HashMap<u64, f64> = plan.slice_times.iter().map(|&t| (key(t), t)).collect();
    let marks: Vec<f64> = plan
        .diagnostic_times
        .iter()
        .chain(&plan.probe_times)
        .chain(&plan.slice_times)
        .map(|&t| 1.0 / t)
        .collect();
    let mut acc = RemainderAccumulator::new(sd, plan.pointwise_window)?;
    let mut probes = Vec::new();
    let mut slices = Vec::new();
    let mut u_sup: f64 = 0.0;
    let (final_field, steps) =
        split_step_u_visit(&seed, sd.alpha, s_max, 1.0 / plan.t_max, plan.policy, &marks, |u| {
            let k = u.time.to_bits();
            u_sup = u_sup.max(u.max_abs());
            if diag.contains(&k) {
                acc.record(u, AsymptoticKind::Modified)?;
            }
            if let Some(&t) = probe.get(&k) {
                let (v, d) = origin_values(u, &sg);
                probes.push(OriginProbe { t, u: v, uy: d });
            }
            if let Some(&t) = slice.get(&k) {
                let mut sl = PsiSlice::from_u(u, &sg, sd.alpha, plan.slice_window)?;
                sl.t = t;
                slices.push(sl);
            }
            log::debug!("u sweep at s = {:.6e}", u.time);
            Ok(())
        })?;
    Ok(SweepOutput { diagnostics: acc.diag, probes, slices, steps, u_sup, final_field })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlsolver::periodic_grid;

    #[test]
    fn assemble_of_zero_is_selfsimilar_wave() {
        let g = periodic_grid(64.0, 256).unwrap();
        let u = WaveField::new(g, vec![Complex64::new(0.0, 0.0); 256], 2.0).unwrap();
        let psi = assemble_psi(0.3, &u, 0.5).unwrap();
        for (j, z) in psi.values.iter().enumerate() {
            let x = psi.grid.x(j);
            let exact = crate::selfsimilar::psi_alpha(0.3, 0.5, x).unwrap();
            assert!((z - exact).norm() < 1e-14);
        }
        assert!(assemble_psi(0.3, &u, 0.0).is_err());
    }

    #[test]
    fn synthetic_weighted_sup() {
        let g = periodic_grid(64.0, 256).unwrap();
        let u_plus: Vec<Complex64> = g.nodes().iter().map(|x| Complex64::new(1.0 / (1.0 + x * x), 0.0)).collect();
        let sd = ScatteringDatum { grid: g, u_plus, alpha: 0.0, provenance: String::new(), weighted_sup: (0.0, 0.0) };
        let (a, _) = weighted_sup_bounds(&sd);
        assert!((a - 1.0).abs() < 1e-15);
    }

    #[test]
    fn upsampling_factor_decreases_with_s() {
        assert_eq!(envelope_upsampling(2.0), 16);
        assert_eq!(envelope_upsampling(10.0), 4);
        assert_eq!(envelope_upsampling(1e4), 1);
    }
}
