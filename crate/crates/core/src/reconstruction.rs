//! Time side of the construction: frames evolved in `t` at a base point,
//! spatial slices, the reconstructed curve family and its `t → 0` limits.

use std::collections::HashMap;
use std::ops::{Add, Mul};

use nalgebra::Matrix3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::geometry::{
    curve_from_tangent, filament_function, frame_step, integrate_parallel_frame_x, measure_corner_angle, Curve,
    FilamentFunction, Frame, FrenetData, Grid1D,
};
use crate::nlsolver::{periodic_grid, SpectralGrid, StepPolicy};
use crate::numerics::{cubic_sample, fit_power_law, geometric_ladder, rk4_step, PowerFit};
use crate::scattering::{
    backward_sweep, build_uplus, fit_remainder, hypothesis_norms, OriginProbe, PsiSlice, RemainderDiagnostics,
    RemainderFits, ScatteringDatum, SweepOutput, SweepPlan,
};
use crate::selfsimilar::{angle_from_alpha, integrate_profile, selfsimilar_frame, RotationFit, SelfSimilarProfile};
use crate::vector::{CVec3, Vec3};

/// Anything that can report `ψ` and `ψ_x` at `(t, x)`.
pub trait PsiSource: Sync {
    fn alpha(&self) -> f64;
    fn eval(&self, t: f64, x: f64) -> Result<(Complex64, Complex64)>;
    /// Gauge `a(t) = α²/t`.
    fn gauge(&self, t: f64) -> f64 {
        let a = self.alpha();
        a * a / t
    }
}

/// `ψ_α(t, x) = α e^{ix²/4t}/√t`, exact.
#[derive(Debug, Clone, Copy)]
pub struct SelfSimilarSource {
    pub alpha: f64,
}

impl PsiSource for SelfSimilarSource {
    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn eval(&self, t: f64, x: f64) -> Result<(Complex64, Complex64)> {
        if !(t > 0.0) {
            return Err(LabError::Domain(format!("t must be positive, got {t}")));
        }
        let psi = Complex64::from_polar(self.alpha / t.sqrt(), x * x / (4.0 * t));
        Ok((psi, Complex64::new(0.0, x / (2.0 * t)) * psi))
    }
}

/// `ψ` assembled from a backward `u` sweep: exact origin probes at the march
/// times and envelope slices at the output times.
#[derive(Debug, Clone)]
pub struct PerturbedSource {
    pub alpha: f64,
    probes: HashMap<u64, OriginProbe>,
    slices: HashMap<u64, PsiSlice>,
}

impl PerturbedSource {
    pub fn new(alpha: f64, sweep: &SweepOutput) -> Self {
        Self {
            alpha,
            probes: sweep.probes.iter().map(|p| (p.t.to_bits(), *p)).collect(),
            slices: sweep.slices.iter().map(|s| (s.t.to_bits(), s.clone())).collect(),
        }
    }
}

impl PsiSource for PerturbedSource {
    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn eval(&self, t: f64, x: f64) -> Result<(Complex64, Complex64)> {
        if x == 0.0 {
            if let Some(p) = self.probes.get(&t.to_bits()) {
                let s = 1.0 / t;
                return Ok(((self.alpha + p.u.conj()) * s.sqrt(), p.uy.conj() * s.powf(1.5)));
            }
        }
        match self.slices.get(&t.to_bits()) {
            Some(sl) => sl.eval(x),
            None => Err(LabError::Range(format!("no wave data stored at t = {t}, x = {x}"))),
        }
    }
}

/// Step nodes of the time march: equal substeps between consecutive output
/// times with `dt ≤ max_ratio · t`.
#[derive(Debug, Clone)]
pub struct TimeMarch {
    pub outputs: Vec<f64>,
    pub nodes: Vec<f64>,
    pub max_ratio: f64,
}

impl TimeMarch {
    pub fn new(outputs: &[f64], max_ratio: f64) -> Result<Self> {
        if outputs.is_empty() || outputs.iter().any(|&t| !(t > 0.0)) {
            return Err(LabError::Domain("output times must be positive".into()));
        }
        if outputs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::Contract("output times must increase".into()));
        }
        let mut nodes = vec![outputs[0]];
        for w in outputs.windows(2) {
            let m = ((w[1] - w[0]) / (max_ratio * w[0])).ceil().max(1.0) as usize;
            for k in 1..m {
                nodes.push(w[0] + (w[1] - w[0]) * k as f64 / m as f64);
            }
            nodes.push(w[1]);
        }
        Ok(Self { outputs: outputs.to_vec(), nodes, max_ratio })
    }

    /// Every time at which the march evaluates `ψ`.
    pub fn stage_times(&self) -> Vec<f64> {
        let mut v = self.nodes.clone();
        v.extend(self.nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, Copy)]
struct TState {
    f: Frame,
    p: Vec3,
}

impl Add for TState {
    type Output = TState;
    fn add(self, o: TState) -> TState {
        TState { f: self.f + o.f, p: self.p + o.p }
    }
}

impl Mul<f64> for TState {
    type Output = TState;
    fn mul(self, s: f64) -> TState {
        TState { f: self.f * s, p: self.p * s }
    }
}

/// Frame and position at the base point along the march nodes.
#[derive(Debug, Clone)]
pub struct FrameSeries {
    pub x0: f64,
    pub times: Vec<f64>,
    pub frames: Vec<Frame>,
    pub positions: Vec<Vec3>,
    pub max_defect: f64,
}

impl FrameSeries {
    pub fn at(&self, t: f64) -> Option<(Frame, Vec3)> {
        self.times.iter().position(|&s| s == t).map(|k| (self.frames[k], self.positions[k]))
    }
}

/// `T_t = Im(ψ̄ₓN)`, `N_t = −iψₓT − (i/2)(|ψ|² − a)N` and `χ_t = T ∧ T_x` at `x0`.
pub fn evolve_frame_time(
    src: &dyn PsiSource,
    march: &TimeMarch,
    x0: f64,
    seed: Frame,
    seed_position: Vec3,
) -> Result<FrameSeries> {
    for w in march.nodes.windows(2) {
        if w[1] - w[0] > march.max_ratio * w[0] * (1.0 + 1e-12) {
            return Err(LabError::Resolution(format!("time step {} too large at t = {}", w[1] - w[0], w[0])));
        }
    }
    let err = std::cell::RefCell::new(None);
    let rhs = |t: f64, st: TState| -> TState {
        let (psi, px) = match src.eval(t, x0) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
            }
        };
        let m = 0.5 * (psi.norm_sqr() - src.gauge(t));
        let Frame { t: tt, e1, e2 } = st.f;
        let tx = e1 * psi.re + e2 * psi.im;
        TState {
            f: Frame { t: e2 * px.re - e1 * px.im, e1: tt * px.im + e2 * m, e2: -tt * px.re - e1 * m },
            p: tt.cross(&tx),
        }
    };
    let mut st = TState { f: seed, p: seed_position };
    let mut frames = vec![seed];
    let mut positions = vec![seed_position];
    let mut max_defect = seed.defect();
    for w in march.nodes.windows(2) {
        let h = w[1] - w[0];
        // the midpoint must be bitwise 0.5(a + b), matching the stage times
        let mid = 0.5 * (w[0] + w[1]);
        let k1 = rhs(w[0], st);
        let k2 = rhs(mid, st + k1 * (0.5 * h));
        let k3 = rhs(mid, st + k2 * (0.5 * h));
        let k4 = rhs(w[1], st + k3 * h);
        st = st + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        max_defect = max_defect.max(st.f.defect());
        st.f = st.f.orthonormalized();
        frames.push(st.f);
        positions.push(st.p);
        if let Some(e) = err.borrow_mut().take() {
            return Err(e);
        }
    }
    Ok(FrameSeries { x0, times: march.nodes.clone(), frames, positions, max_defect })
}

/// Spatial integration settings for the slices.
#[derive(Debug, Clone)]
pub struct SliceSpec {
    pub x_max: f64,
    /// Output spacing.
    pub d_out: f64,
    /// Largest integration step.
    pub h_max: f64,
    /// The step is also capped at `cfl · t / x_max`.
    pub cfl: f64,
    /// Self-similar probe points `z`; frames are kept at `x = ±z√t`.
    pub scaled_probes: Vec<f64>,
}

impl Default for SliceSpec {
    fn default() -> Self {
        Self { x_max: 2.5, d_out: 0.01, h_max: 1e-3, cfl: 0.1, scaled_probes: vec![2.0, 5.0, 10.0] }
    }
}

#[derive(Debug, Clone, Copy)]
struct XState {
    f: Frame,
    chi: Vec3,
    m: CVec3,
}

impl Add for XState {
    type Output = XState;
    fn add(self, o: XState) -> XState {
        XState { f: self.f + o.f, chi: self.chi + o.chi, m: self.m + o.m }
    }
}

impl Mul<f64> for XState {
    type Output = XState;
    fn mul(self, s: f64) -> XState {
        XState { f: self.f * s, chi: self.chi * s, m: self.m * s }
    }
}

/// One time slice: frames, positions and the running integral of `Ñ` on the
/// output grid, plus frames at the self-similar probes.
#[derive(Debug, Clone)]
pub struct FrameSlice {
    pub t: f64,
    pub frames: Vec<Frame>,
    pub chi: Vec<Vec3>,
    /// `∫ Ñ dx` from the base point.
    pub m: Vec<CVec3>,
    /// `(z, frame at z√t, frame at −z√t)`.
    pub probe_frames: Vec<(f64, Frame, Frame)>,
    pub max_defect: f64,
    /// `max √t |ψ|` over all evaluations.
    pub scaled_psi_sup: f64,
}

/// Frames on a `(t, x)` grid; times increase away from 0.
#[derive(Debug, Clone)]
pub struct FrameTrajectory {
    pub alpha: f64,
    pub grid: Grid1D,
    pub x0: f64,
    pub slices: Vec<FrameSlice>,
}

impl FrameTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.t).collect()
    }

    pub fn max_defect(&self) -> f64 {
        self.slices.iter().map(|s| s.max_defect).fold(0.0, f64::max)
    }

    /// Moving averages `(χ(x+w) − χ(x−w))/2w` and `(M(x+w) − M(x−w))/2w` at node `j`.
    pub fn smoothed(&self, k: usize, j: usize, w_nodes: usize) -> Option<(Vec3, CVec3)> {
        if j < w_nodes || j + w_nodes >= self.grid.n {
            return None;
        }
        let s = &self.slices[k];
        let d = 2.0 * w_nodes as f64 * self.grid.h;
        Some((
            (s.chi[j + w_nodes] - s.chi[j - w_nodes]) * (1.0 / d),
            (s.m[j + w_nodes] - s.m[j - w_nodes]) * (1.0 / d),
        ))
    }

    /// Derivatives of the triangular averages of half-width `w`:
    /// `(χ(x+w) − 2χ(x) + χ(x−w))/w²` and the same for `M`.
    pub fn smoothed_derivative(&self, k: usize, j: usize, w_nodes: usize) -> Option<(Vec3, CVec3)> {
        if j < w_nodes || j + w_nodes >= self.grid.n {
            return None;
        }
        let s = &self.slices[k];
        let w = w_nodes as f64 * self.grid.h;
        let inv = 1.0 / (w * w);
        Some((
            (s.chi[j + w_nodes] - s.chi[j] * 2.0 + s.chi[j - w_nodes]) * inv,
            (s.m[j + w_nodes] - s.m[j] * 2.0 + s.m[j - w_nodes]) * inv,
        ))
    }
}

fn modulation(alpha: f64, t: f64, x: f64) -> Complex64 {
    if x == 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        Complex64::from_polar(1.0, alpha * alpha * (x.abs() / t.sqrt()).ln())
    }
}

fn integrate_slice(
    src: &dyn PsiSource,
    t: f64,
    x0: f64,
    seed: Frame,
    base: Vec3,
    grid: Grid1D,
    spec: &SliceSpec,
) -> Result<FrameSlice> {
    let alpha = src.alpha();
    let h = spec.h_max.min(spec.cfl * t / spec.x_max);
    let st = t.sqrt();
    let j0 = grid.node_at(x0).ok_or_else(|| LabError::Contract(format!("base point {x0} is not a grid node")))?;
    let err = std::cell::RefCell::new(None);
    let sup = std::cell::Cell::new(0.0f64);
    let rhs = |x: f64, s: XState| -> XState {
        let psi = match src.eval(t, x) {
            Ok(v) => v.0,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                Complex64::new(0.0, 0.0)
            }
        };
        sup.set(sup.get().max(st * psi.norm()));
        XState { f: s.f.x_derivative(psi.conj()), chi: s.f.t, m: s.f.normal().scale(modulation(alpha, t, x)) }
    };
    let mut frames = vec![seed; grid.n];
    let mut chi = vec![base; grid.n];
    let mut m = vec![CVec3::zeros(); grid.n];
    frames[j0] = seed;
    chi[j0] = base;
    let mut max_defect = seed.defect();
    let mut probes_plus = Vec::new();
    let mut probes_minus = Vec::new();
    for dir in [1.0, -1.0] {
        // output nodes and probe points in the direction of travel
        let mut marks: Vec<(f64, Option<usize>)> = (0..grid.n)
            .filter(|&j| (grid.x(j) - x0) * dir > 0.0)
            .map(|j| (grid.x(j), Some(j)))
            .collect();
        for &z in &spec.scaled_probes {
            let x = x0 + dir * z * st;
            if x.abs() <= grid.x_max() {
                marks.push((x, None));
            }
        }
        marks.sort_by(|a, b| ((a.0 - x0) * dir).partial_cmp(&((b.0 - x0) * dir)).unwrap());
        let mut s = XState { f: seed, chi: base, m: CVec3::zeros() };
        let mut x = x0;
        for (xm, slot) in marks {
            let len = (xm - x).abs();
            let n = (len / h).ceil().max(1.0) as usize;
            let step = (xm - x) / n as f64;
            for k in 0..n {
                let xa = x + step * k as f64;
                s = rk4_step(&rhs, xa, s, step);
                max_defect = max_defect.max(s.f.defect());
                s.f = s.f.orthonormalized();
            }
            x = xm;
            if let Some(e) = err.borrow_mut().take() {
                return Err(e);
            }
            match slot {
                Some(j) => {
                    frames[j] = s.f;
                    chi[j] = s.chi;
                    m[j] = s.m;
                }
                None if dir > 0.0 => probes_plus.push(s.f),
                None => probes_minus.push(s.f),
            }
        }
    }
    let probe_frames = spec
        .scaled_probes
        .iter()
        .zip(probes_plus.iter().zip(&probes_minus))
        .map(|(&z, (p, q))| (z, *p, *q))
        .collect();
    Ok(FrameSlice { t, frames, chi, m, probe_frames, max_defect, scaled_psi_sup: sup.get() })
}

/// Integrates `T_x = Re(ψ̄N)`, `N_x = −ψT` at every output time of the march,
/// seeded by the time-evolved frame at the base point. Slices run in parallel.
pub fn build_frame_slices(
    src: &dyn PsiSource,
    series: &FrameSeries,
    outputs: &[f64],
    spec: &SliceSpec,
) -> Result<FrameTrajectory> {
    let grid = Grid1D::symmetric(spec.x_max, spec.d_out)?;
    let slices = outputs
        .par_iter()
        .map(|&t| {
            let (f, p) = series
                .at(t)
                .ok_or_else(|| LabError::Contract(format!("output time {t} is not a march node")))?;
            integrate_slice(src, t, series.x0, f, p, grid, spec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameTrajectory { alpha: src.alpha(), grid, x0: series.x0, slices })
}

/// Curves `χ(t, ·)` of every slice; positions come from the fine spatial
/// integration seeded with the time-integrated base point.
pub fn reconstruct_curve(traj: &FrameTrajectory) -> Result<Vec<Curve>> {
    traj.slices.iter().map(|s| Curve::new(traj.grid, s.chi.clone(), true)).collect()
}

/// `Ñ(t, x) = e^{iα² ln(|x|/√t)} N(t, x)`; the node at `x = 0` is left out.
#[derive(Debug, Clone)]
pub struct ModulatedNormal {
    pub alpha: f64,
    pub grid: Grid1D,
    pub times: Vec<f64>,
    pub values: Vec<Vec<Option<CVec3>>>,
}

pub fn modulated_normal(traj: &FrameTrajectory, alpha: f64) -> ModulatedNormal {
    let values = traj
        .slices
        .iter()
        .map(|s| {
            (0..traj.grid.n)
                .map(|j| {
                    let x = traj.grid.x(j);
                    (x != 0.0).then(|| s.frames[j].normal().scale(modulation(alpha, s.t, x)))
                })
                .collect()
        })
        .collect();
    ModulatedNormal { alpha, grid: traj.grid, times: traj.times(), values }
}

/// A decay-rate fit for one quantity.
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub quantity: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub fit: Option<PowerFit>,
    pub target: f64,
    /// All differences vanish to round-off; the rate holds vacuously.
    pub exact: bool,
}

impl RateFit {
    pub fn exponent(&self) -> f64 {
        if self.exact { f64::INFINITY } else { self.fit.as_ref().map_or(f64::NAN, |f| f.exponent) }
    }

    fn build(quantity: String, times: Vec<f64>, values: Vec<f64>, target: f64) -> Result<Self> {
        if times.len() < 5 {
            return Err(LabError::FitUnstable(format!("{quantity}: fewer than 5 usable times")));
        }
        let scale = values.iter().cloned().fold(0.0, f64::max);
        if scale < 1e-13 {
            return Ok(Self { quantity, times, values, fit: None, target, exact: true });
        }
        let fit = fit_power_law(&times, &values, 5)?;
        Ok(Self { quantity, times, values, fit: Some(fit), target, exact: false })
    }
}

fn cauchy_window(traj: &FrameTrajectory) -> Result<Vec<usize>> {
    let ts = traj.times();
    let t_min = ts[0];
    if ts.last().copied().unwrap_or(t_min) < t_min * 10f64.powf(1.5) {
        return Err(LabError::FitUnstable("times must span at least 1.5 decades".into()));
    }
    Ok((1..ts.len()).filter(|&k| ts[k] >= 10.0 * t_min).collect())
}

/// `|T(t,x) − T(t_min,x)|` against `t` at each probe.
pub fn tangent_limit_rate(traj: &FrameTrajectory, probes: &[f64]) -> Result<Vec<RateFit>> {
    let sel = cauchy_window(traj)?;
    probes
        .iter()
        .map(|&x| {
            let j = traj.grid.node_at(x).ok_or_else(|| LabError::Range(format!("probe {x} not on the grid")))?;
            let r = traj.slices[0].frames[j].t;
            let times = sel.iter().map(|&k| traj.slices[k].t).collect();
            let values = sel.iter().map(|&k| (traj.slices[k].frames[j].t - r).norm()).collect();
            RateFit::build(format!("tangent at x = {x}"), times, values, 0.25)
        })
        .collect()
}

/// Same fit for the normal, modulated or raw.
pub fn normal_limit_rate(traj: &FrameTrajectory, probes: &[f64], modulated: bool) -> Result<Vec<RateFit>> {
    let sel = cauchy_window(traj)?;
    let mn = modulated_normal(traj, if modulated { traj.alpha } else { 0.0 });
    probes
        .iter()
        .map(|&x| {
            if x == 0.0 {
                return Err(LabError::Range("normal probes must avoid x = 0".into()));
            }
            let j = traj.grid.node_at(x).ok_or_else(|| LabError::Range(format!("probe {x} not on the grid")))?;
            let r = mn.values[0][j].unwrap();
            let times = sel.iter().map(|&k| mn.times[k]).collect();
            let values = sel.iter().map(|&k| (mn.values[k][j].unwrap() - r).norm()).collect();
            let name = if modulated { "modulated normal" } else { "raw normal" };
            RateFit::build(format!("{name} at x = {x}"), times, values, 0.25)
        })
        .collect()
}

/// Spectral coefficient `(1/√i) û₊(x/2) e^{−iα² ln|x|}` of the trace system.
pub fn trace_coefficient(sd: &ScatteringDatum) -> Result<impl Fn(f64) -> Complex64> {
    let sg = SpectralGrid::new(sd.grid)?;
    let spec = sg.forward(&sd.u_plus);
    let n = sd.grid.n;
    let dxi = sg.xi[1];
    // ascending modes −n/2 … n/2 − 1
    let sorted: Vec<Complex64> = (0..n).map(|k| spec[(k + n / 2) % n]).collect();
    let xi_min = -((n / 2) as f64) * dxi;
    let alpha = sd.alpha;
    let inv = Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_4);
    Ok(move |x: f64| {
        let u = cubic_sample(xi_min, dxi, &sorted, 0.5 * x).unwrap_or_default();
        inv * u * Complex64::from_polar(1.0, -alpha * alpha * x.abs().ln())
    })
}

/// Result of checking the trace system on the smallest time slice.
#[derive(Debug, Clone, Serialize)]
pub struct TraceDefect {
    pub t: f64,
    pub max_defect: f64,
    /// Defect divided by the largest coefficient magnitude on the window.
    pub relative_defect: f64,
    pub delta: f64,
    pub expected_delta: f64,
    pub unfitted_defect: f64,
}

/// Checks `T_x = Re(e^{iδ} C Ñ)`, `Ñ_x = −conj(e^{iδ} C) T` on the smallest
/// slice, with `C` the spectral coefficient and one fitted global phase `δ`.
///
/// `T` and `Ñ` are moving averages of half-width `w`; their derivatives are
/// those of the triangular averages of half-width `w`, which are exact second
/// differences of `χ` and `M` and so free of the aliased oscillation.
pub fn trace_system_defect(
    traj: &FrameTrajectory,
    sd: &ScatteringDatum,
    window: (f64, f64),
    w: f64,
) -> Result<TraceDefect> {
    let coef = trace_coefficient(sd)?;
    let grid = traj.grid;
    let wn = (w / grid.h).round().max(1.0) as usize;
    let mut rows_t: Vec<(Vec3, Vec3, Vec3)> = Vec::new(); // (T_x, Re(CÑ), Im(CÑ))
    let mut rows_n: Vec<(CVec3, CVec3)> = Vec::new(); // (Ñ_x, conj(C) T)
    for side in [1.0, -1.0] {
        let idx: Vec<usize> = (0..grid.n).filter(|&j| grid.x(j) * side > 0.0).collect();
        for &j in &idx {
            let x = grid.x(j) * side;
            if x < window.0 || x > window.1 {
                continue;
            }
            let ((tb, nb), (tx, nx)) = traj
                .smoothed(0, j, wn)
                .zip(traj.smoothed_derivative(0, j, wn))
                .ok_or_else(|| LabError::Range("trace window too close to the grid edge for the smoothing width".into()))?;
            let c = coef(grid.x(j));
            let cn = nb.scale(c);
            rows_t.push((tx, cn.re, cn.im));
            rows_n.push((nx, CVec3::from_real(tb).scale(c.conj())));
        }
    }
    // T_x = a Re(CÑ) − b Im(CÑ);  Ñ_x = −(a − ib) conj(C) T
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = [0.0; 2];
    let mut push = |ca: f64, cb: f64, r: f64| {
        ata[(0, 0)] += ca * ca;
        ata[(0, 1)] += ca * cb;
        ata[(1, 1)] += cb * cb;
        atb[0] += ca * r;
        atb[1] += cb * r;
    };
    for (tx, re, im) in &rows_t {
        for c in 0..3 {
            push(re[c], -im[c], tx[c]);
        }
    }
    for (nx, ct) in &rows_n {
        // −(a − ib)(p + iq) = −a p − b q + i(−a q + b p)
        for c in 0..3 {
            let (p, q) = (ct.re[c], ct.im[c]);
            push(-p, -q, nx.re[c]);
            push(-q, p, nx.im[c]);
        }
    }
    let det = ata[(0, 0)] * ata[(1, 1)] - ata[(0, 1)] * ata[(0, 1)];
    let delta = if det.abs() > 1e-300 {
        let a = (atb[0] * ata[(1, 1)] - atb[1] * ata[(0, 1)]) / det;
        let b = (ata[(0, 0)] * atb[1] - ata[(0, 1)] * atb[0]) / det;
        b.atan2(a)
    } else {
        0.0
    };
    let defect_at = |d: f64| {
        let e = Complex64::from_polar(1.0, d);
        let mut worst: f64 = 0.0;
        for ((tx, re, im), (nx, ct)) in rows_t.iter().zip(&rows_n) {
            let rt = tx - (re * e.re - im * e.im);
            let rn = *nx + ct.scale(e.conj());
            worst = worst.max(rt.norm()).max(rn.norm());
        }
        worst
    };
    let cmax = grid
        .nodes()
        .iter()
        .filter(|x| x.abs() >= window.0 && x.abs() <= window.1)
        .map(|&x| coef(x).norm())
        .fold(0.0, f64::max);
    let max_defect = defect_at(delta);
    Ok(TraceDefect {
        t: traj.slices[0].t,
        max_defect,
        relative_defect: if cmax > 0.0 { max_defect / cmax } else { 0.0 },
        delta,
        expected_delta: sd.alpha * sd.alpha * 2f64.ln(),
        unfitted_defect: defect_at(0.0),
    })
}

/// Rotation taking the profile frames at `±z` onto the sampled ones, per time.
#[derive(Debug, Clone)]
pub struct PathLimit {
    pub times: Vec<f64>,
    pub fits: Vec<RotationFit>,
    /// Frobenius distance between consecutive fits.
    pub cauchy: Vec<f64>,
    /// Largest pairwise distance between single-probe fits at the smallest time.
    pub probe_spread: f64,
    pub theta: RotationFit,
}

fn frame_vectors(f: &Frame) -> [Vec3; 3] {
    [f.t, f.e1, f.e2]
}

pub fn selfsimilar_path_limit(traj: &FrameTrajectory, profile: &SelfSimilarProfile) -> Result<PathLimit> {
    let fit_slice = |s: &FrameSlice, only: Option<usize>| -> Result<RotationFit> {
        let mut from = Vec::new();
        let mut to = Vec::new();
        for (k, (z, fp, fm)) in s.probe_frames.iter().enumerate() {
            if only.is_some_and(|o| o != k) {
                continue;
            }
            from.extend(frame_vectors(&selfsimilar_frame(profile, 1.0, *z)?));
            to.extend(frame_vectors(fp));
            from.extend(frame_vectors(&selfsimilar_frame(profile, 1.0, -*z)?));
            to.extend(frame_vectors(fm));
        }
        RotationFit::fit(&from, &to)
    };
    if traj.slices.first().is_none_or(|s| s.probe_frames.is_empty()) {
        return Err(LabError::Contract("no self-similar probes were recorded".into()));
    }
    // slices where every probe z√t left the grid carry no information
    let usable: Vec<&FrameSlice> = traj.slices.iter().filter(|s| !s.probe_frames.is_empty()).collect();
    let fits = usable.iter().map(|s| fit_slice(s, None)).collect::<Result<Vec<_>>>()?;
    let cauchy = fits.windows(2).map(|w| (w[1].r - w[0].r).norm()).collect();
    let s0 = &traj.slices[0];
    let single = (0..s0.probe_frames.len()).map(|k| fit_slice(s0, Some(k))).collect::<Result<Vec<_>>>()?;
    let mut probe_spread: f64 = 0.0;
    for a in &single {
        for b in &single {
            probe_spread = probe_spread.max((a.r - b.r).norm());
        }
    }
    let times = usable.iter().map(|s| s.t).collect();
    Ok(PathLimit { times, theta: fits[0], fits, cauchy, probe_spread })
}

/// Three-point extrapolation to `t = 0` assuming `v = v₀ + a t^{1/4} + b t^{1/2}`.
pub fn richardson_quarter(ts: [f64; 3], vs: [Vec3; 3]) -> Vec3 {
    let tau: Vec<f64> = ts.iter().map(|t| t.powf(0.25)).collect();
    // Lagrange weights of the quadratic in τ evaluated at τ = 0
    let mut out = Vec3::zeros();
    for i in 0..3 {
        let mut w = 1.0;
        for j in 0..3 {
            if i != j {
                w *= tau[j] / (tau[j] - tau[i]);
            }
        }
        out += vs[i] * w;
    }
    out
}

/// Corner directions read off the smallest slices versus `Θ(A±)`, `Θ(B±)`.
#[derive(Debug, Clone, Serialize)]
pub struct CornerReport {
    pub t_plus: [f64; 3],
    pub t_minus: [f64; 3],
    pub angle_plus_deg: f64,
    pub angle_minus_deg: f64,
    /// Same angles using the three-point extrapolation in `t^{1/4}` over the
    /// first decade of slices.
    pub richardson_plus_deg: f64,
    pub richardson_minus_deg: f64,
    pub b_plus_distance: f64,
    pub b_minus_distance: f64,
    pub b_re_norms: [f64; 2],
    pub b_im_norms: [f64; 2],
    pub b_orthogonality: f64,
    pub corner_angle: f64,
    pub formula_angle: f64,
}

impl CornerReport {
    pub fn worst_angle_deg(&self) -> f64 {
        self.angle_plus_deg.max(self.angle_minus_deg)
    }
}

fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Estimates `T(0,0±)` and `Ñ(0,0±)`: the averaged slice values at `±x_c` are
/// carried back to `0±` along the trace system with coefficient `g` (none for
/// the pure corner).
pub fn corner_directions_check(
    traj: &FrameTrajectory,
    profile: &SelfSimilarProfile,
    theta: &RotationFit,
    g: Option<&FilamentFunction>,
    x_c: f64,
    w: f64,
) -> Result<CornerReport> {
    let grid = traj.grid;
    let wn = (w / grid.h).round().max(1.0) as usize;
    let back = |k: usize, side: f64| -> Result<Frame> {
        let x = side * x_c;
        let j = grid.node_at(x).ok_or_else(|| LabError::Range(format!("x_c = {x_c} not on the grid")))?;
        let (tb, nb) = traj.smoothed(k, j, wn).ok_or_else(|| LabError::Range("x_c too close to the edge".into()))?;
        let mut f = Frame::from_normal(tb, nb).orthonormalized();
        if let Some(g) = g {
            let kappa = |y: f64| cubic_sample(g.grid.x_min, g.grid.h, &g.g, y).unwrap_or_default();
            let n = (x_c / 1e-3).ceil() as usize;
            let h = -x / n as f64;
            let mut y = x;
            for _ in 0..n {
                f = frame_step(&kappa, y, f, h);
                y += h;
            }
        }
        Ok(f)
    };
    let (cp, cm) = profile.corner_frames();
    let r = &theta.r;
    // extrapolation nodes spread over one decade; adjacent ladder times are too
    // close in t^{1/4} for a stable three-point formula
    let ts_all = traj.times();
    let last = ts_all.iter().rposition(|&t| t <= 10.0 * ts_all[0] * (1.0 + 1e-12)).unwrap_or(0);
    let picks = if last >= 2 { vec![0, last / 2, last] } else { vec![0] };
    let est: Vec<(Frame, Frame)> =
        picks.iter().map(|&k| Ok((back(k, 1.0)?, back(k, -1.0)?))).collect::<Result<_>>()?;
    let (fp, fm) = est[0];
    let (ta, tb) = (r * cp.t, r * cm.t);
    let (rp, rm) = if est.len() == 3 {
        let ts = [ts_all[picks[0]], ts_all[picks[1]], ts_all[picks[2]]];
        (
            richardson_quarter(ts, [est[0].0.t, est[1].0.t, est[2].0.t]),
            richardson_quarter(ts, [est[0].1.t, est[1].1.t, est[2].1.t]),
        )
    } else {
        (fp.t, fm.t)
    };
    let bp = cp.normal().rotate(r);
    let bm = cm.normal().rotate(r);
    Ok(CornerReport {
        t_plus: [fp.t.x, fp.t.y, fp.t.z],
        t_minus: [fm.t.x, fm.t.y, fm.t.z],
        angle_plus_deg: angle_deg(&fp.t, &ta),
        angle_minus_deg: angle_deg(&fm.t, &tb),
        richardson_plus_deg: angle_deg(&rp, &ta),
        richardson_minus_deg: angle_deg(&rm, &tb),
        b_plus_distance: (fp.normal() - bp).norm(),
        b_minus_distance: (fm.normal() - bm).norm(),
        b_re_norms: [fp.e1.norm(), fm.e1.norm()],
        b_im_norms: [fp.e2.norm(), fm.e2.norm()],
        b_orthogonality: [fp.e1.dot(&fp.t), fp.e2.dot(&fp.t), fm.e1.dot(&fm.t), fm.e2.dot(&fm.t)]
            .iter()
            .fold(0.0f64, |a, b| a.max(b.abs())),
        corner_angle: measure_corner_angle(&fp.t.normalize(), &fm.t.normalize())?,
        formula_angle: angle_from_alpha(traj.alpha)?,
    })
}

/// Settings of the end-to-end recovery experiment.
#[derive(Debug, Clone)]
pub struct RecoveryConfig {
    pub alpha: f64,
    pub frenet: FrenetData,
    pub u_extent: f64,
    pub u_points: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub per_decade: usize,
    pub policy: StepPolicy,
    pub max_time_ratio: f64,
    pub slice: SliceSpec,
    pub tangent_probes: Vec<f64>,
    pub smoothing: f64,
    pub trace_window: (f64, f64),
    pub corner_offset: f64,
    pub pointwise_window: f64,
    pub profile_x_max: f64,
    pub profile_h: f64,
}

impl RecoveryConfig {
    pub fn new(alpha: f64, frenet: FrenetData) -> Self {
        Self {
            alpha,
            frenet,
            u_extent: 131072.0,
            u_points: 1 << 17,
            t_min: 1e-4,
            t_max: 0.5,
            per_decade: 12,
            policy: StepPolicy::Relative { kappa: 0.002, ds_max: 0.2 },
            max_time_ratio: 0.05,
            slice: SliceSpec::default(),
            tangent_probes: vec![0.5, 1.0, 2.0],
            smoothing: 0.1,
            trace_window: (0.2, 2.0),
            corner_offset: 0.5,
            pointwise_window: 2.0,
            profile_x_max: 200.0,
            profile_h: 5e-4,
        }
    }
}

/// Everything measured by the recovery experiment.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub times: Vec<f64>,
    pub curve_distance: RateFit,
    pub tangent_rates: Vec<RateFit>,
    pub tangent_cauchy: Vec<RateFit>,
    pub path_limit: PathLimit,
    pub corner: CornerReport,
    pub trace: Option<TraceDefect>,
    pub remainder: Option<RemainderDiagnostics>,
    pub remainder_fits: Option<RemainderFits>,
    pub frame_defect_x: f64,
    pub frame_defect_t: f64,
    pub scaled_psi_sup: f64,
    pub u_sup: f64,
    pub sweep_steps: usize,
    pub trajectory: FrameTrajectory,
    pub reference: Curve,
}

/// Full pipeline: filament data → asymptotic state → backward `u` sweep →
/// frames at the origin in time → spatial slices → curves, compared with the
/// curve built directly from the data and the fitted rotation `Θ`.
///
/// Identically vanishing curvature skips the sweep: `u ≡ 0` and the wave is
/// the self-similar one.
pub fn recover_initial_curve(cfg: &RecoveryConfig) -> Result<RecoveryReport> {
    let audit = hypothesis_norms(&cfg.frenet);
    let suspects = audit.suspects();
    if !suspects.is_empty() {
        let names: Vec<String> =
            suspects.iter().map(|e| format!("{} = {:.3e} (half extent {:.3e}, coarse {:.3e})", e.name, e.value, e.half_extent, e.coarse)).collect();
        return Err(LabError::HypothesisAudit(names.join("; ")));
    }
    let outputs = geometric_ladder(cfg.t_min, cfg.t_max, cfg.per_decade);
    let march = TimeMarch::new(&outputs, cfg.max_time_ratio)?;
    let profile = integrate_profile(cfg.alpha, cfg.profile_x_max, cfg.profile_h)?;
    let g = filament_function(&cfg.frenet);
    let trivial = cfg.frenet.c.iter().all(|&c| c == 0.0);
    let seed = Frame::canonical();
    let p0 = Vec3::new(0.0, 0.0, 2.0 * cfg.alpha * cfg.t_min.sqrt());

    let (series, traj, sd, sweep) = if trivial {
        let src = SelfSimilarSource { alpha: cfg.alpha };
        let series = evolve_frame_time(&src, &march, 0.0, seed, p0)?;
        let traj = build_frame_slices(&src, &series, &outputs, &cfg.slice)?;
        (series, traj, None, None)
    } else {
        let grid = periodic_grid(cfg.u_extent, cfg.u_points)?;
        let sd = build_uplus(&g, cfg.alpha, grid)?;
        let plan = SweepPlan {
            t_min: cfg.t_min,
            t_max: cfg.t_max,
            policy: cfg.policy,
            diagnostic_times: outputs.clone(),
            probe_times: march.stage_times(),
            slice_times: outputs.clone(),
            slice_window: cfg.slice.x_max * 1.02,
            pointwise_window: cfg.pointwise_window,
        };
        log::info!("backward sweep on {} nodes from s = {:.3e}", cfg.u_points, 1.0 / cfg.t_min);
        let sweep = backward_sweep(&sd, &plan)?;
        let src = PerturbedSource::new(cfg.alpha, &sweep);
        let series = evolve_frame_time(&src, &march, 0.0, seed, p0)?;
        log::info!("frames at the origin done; integrating {} slices", outputs.len());
        let traj = build_frame_slices(&src, &series, &outputs, &cfg.slice)?;
        (series, traj, Some(sd), Some(sweep))
    };

    let path_limit = selfsimilar_path_limit(&traj, &profile)?;
    let theta = path_limit.theta;
    let (cp, cm) = profile.corner_frames();
    let chi0_frames = integrate_parallel_frame_x(&g, cp.rotate(&theta.r), cm.rotate(&theta.r))?;
    let j0 = g.grid.node_at(0.0).ok_or_else(|| LabError::Contract("filament grid must contain 0".into()))?;
    // corner point: the base point minus the self-similar offset 2α√t Θe₃
    let corner = traj.slices[0].chi[traj.grid.node_at(0.0).unwrap()]
        - theta.r * Vec3::new(0.0, 0.0, 2.0 * cfg.alpha * cfg.t_min.sqrt());
    let reference = curve_from_tangent(g.grid, &chi0_frames.tangents(), corner, j0)?;
    let chi0: Vec<Vec3> = traj
        .grid
        .nodes()
        .iter()
        .map(|&x| cubic_sample(g.grid.x_min, g.grid.h, &reference.points, x))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| LabError::Range("filament grid does not cover the slice window".into()))?;
    let times = traj.times();
    let dist: Vec<f64> = traj
        .slices
        .iter()
        .map(|s| s.chi.iter().zip(&chi0).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
        .collect();
    let curve_distance = RateFit::build("sup |chi(t) - chi0|".into(), times.clone(), dist, 0.5)?;
    let tangent_rates = cfg
        .tangent_probes
        .iter()
        .map(|&x| {
            let j = traj.grid.node_at(x).ok_or_else(|| LabError::Range(format!("probe {x} not on the grid")))?;
            let t0 = chi0_frames.sample(x).unwrap().orthonormalized().t;
            let values = traj.slices.iter().map(|s| (s.frames[j].t - t0).norm()).collect();
            RateFit::build(format!("|T(t, {x}) - T0({x})|"), times.clone(), values, 0.25)
        })
        .collect::<Result<Vec<_>>>()?;
    let tangent_cauchy = tangent_limit_rate(&traj, &cfg.tangent_probes)?;
    let corner_report =
        corner_directions_check(&traj, &profile, &theta, (!trivial).then_some(&g), cfg.corner_offset, cfg.smoothing)?;
    let trace = match &sd {
        Some(sd) => Some(trace_system_defect(&traj, sd, cfg.trace_window, cfg.smoothing)?),
        None => None,
    };
    let remainder = sweep.as_ref().map(|s| s.diagnostics.clone());
    let remainder_fits = match &remainder {
        Some(d) => fit_remainder(d, 1e-2, 1e-1).ok(),
        None => None,
    };
    Ok(RecoveryReport {
        times,
        curve_distance,
        tangent_rates,
        tangent_cauchy,
        path_limit,
        corner: corner_report,
        trace,
        remainder,
        remainder_fits,
        frame_defect_x: traj.max_defect(),
        frame_defect_t: series.max_defect,
        scaled_psi_sup: traj.slices.iter().map(|s| s.scaled_psi_sup).fold(0.0, f64::max),
        u_sup: sweep.as_ref().map_or(0.0, |s| s.u_sup),
        sweep_steps: sweep.as_ref().map_or(0, |s| s.steps),
        trajectory: traj,
        reference,
    })
}
