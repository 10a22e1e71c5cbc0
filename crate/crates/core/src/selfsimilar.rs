//! The self-similar family: profile frame at `t = 1`, its corner data, the
//! angle law, self-similar scaling and binormal-flow residuals.

use std::f64::consts::PI;
use std::ops::{Add, Mul};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::geometry::{measure_corner_angle, CornerData, Curve, Frame, FrameField, Grid1D};
use crate::io;
use crate::numerics::{cubic_sample, least_squares, rk4_step, uniform_derivative};
use crate::rigid::best_rotation;
use crate::vector::{CVec3, Vec3};

/// Integrated profile of one member of the family.
#[derive(Debug, Clone)]
pub struct SelfSimilarProfile {
    pub alpha: f64,
    /// Frame `(T, e1, e2)(1, x)` on a symmetric grid.
    pub frame: FrameField,
    /// `∫₀ˣ T`, i.e. the profile curve up to its base offset.
    pub positions: Vec<Vec3>,
    pub corner: CornerData,
    pub tail_window: (f64, f64),
    /// Translation putting the corner of the `t → 0` trace at the origin.
    pub base_offset: Vec3,
}

/// Rotation with its fit residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationFit {
    pub r: Matrix3<f64>,
    pub residual: f64,
}

impl RotationFit {
    /// Best rotation taking the `from` vectors onto the `to` vectors.
    pub fn fit(from: &[Vec3], to: &[Vec3]) -> Result<Self> {
        let r = best_rotation(from, to, None)?;
        let residual = from
            .iter()
            .zip(to)
            .map(|(a, b)| (r * a - b).norm())
            .fold(0.0, f64::max);
        Ok(Self { r, residual })
    }

    pub fn orthogonality_defect(&self) -> f64 {
        (self.r.transpose() * self.r - Matrix3::identity()).abs().max()
    }
}

/// Profile coupling `α e^{−ix²/4}`.
pub fn profile_coupling(alpha: f64, x: f64) -> Complex64 {
    Complex64::from_polar(alpha, -0.25 * x * x)
}

#[derive(Debug, Clone, Copy)]
struct ProfileState {
    f: Frame,
    p: Vec3,
}

impl Add for ProfileState {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { f: self.f + o.f, p: self.p + o.p }
    }
}

impl Mul<f64> for ProfileState {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self { f: self.f * s, p: self.p * s }
    }
}

/// Integrates the profile frame `T' = Re(α e^{−ix²/4} N)`, `N' = −α e^{ix²/4} T`
/// from the canonical frame at `x = 0` out to `±x_max`, together with `∫T`.
pub fn integrate_profile(alpha: f64, x_max: f64, h: f64) -> Result<SelfSimilarProfile> {
    if !(alpha > 0.0) {
        return Err(LabError::Domain(format!("alpha must be positive, got {alpha}")));
    }
    if alpha > 1.0 {
        log::warn!("alpha = {alpha} is outside the small-coupling regime");
    }
    if x_max < 50.0 {
        return Err(LabError::Contract(format!("x_max = {x_max} leaves no tail window (need >= 50)")));
    }
    if h * x_max > 0.5 {
        return Err(LabError::Resolution(format!(
            "h * x_max = {} does not resolve the x^2/4 oscillation",
            h * x_max
        )));
    }
    if h * x_max > 0.1 {
        log::warn!("h * x_max = {} is above the recommended 0.1", h * x_max);
    }
    let grid = Grid1D::symmetric(x_max, h)?;
    let j0 = grid.nearest(0.0);
    let rhs = |x: f64, s: ProfileState| ProfileState {
        f: s.f.x_derivative(profile_coupling(alpha, x)),
        p: s.f.t,
    };
    let start = ProfileState { f: Frame::canonical(), p: Vec3::zeros() };
    let mut frames = vec![start.f; grid.n];
    let mut positions = vec![Vec3::zeros(); grid.n];
    for dir in [1i64, -1] {
        let mut s = start;
        let mut j = j0 as i64;
        loop {
            let next = j + dir;
            if next < 0 || next >= grid.n as i64 {
                break;
            }
            let x = grid.x(j as usize);
            s = rk4_step(&rhs, x, s, grid.x(next as usize) - x);
            s.f = s.f.orthonormalized();
            frames[next as usize] = s.f;
            positions[next as usize] = s.p;
            j = next;
        }
    }
    let frame = FrameField { grid, frames, minus_at_zero: None };
    let window = (50.0, x_max.min(200.0));
    let (corner, c_plus, c_minus) = fit_corner(alpha, &frame, &positions, window)?;
    let base_offset = -(c_plus + c_minus) * 0.5;
    Ok(SelfSimilarProfile { alpha, frame, positions, corner, tail_window: window, base_offset })
}

/// Fits `v(x) ≈ Σ c_k b_k(x)` over the nodes with `x_lo ≤ |x| ≤ x_hi` on one side.
fn fit_side<B, V>(grid: &Grid1D, window: (f64, f64), sign: f64, basis: B, value: V) -> Result<DVector<f64>>
where
    B: Fn(f64) -> [f64; 4],
    V: Fn(usize) -> f64,
{
    let idx: Vec<usize> = (0..grid.n)
        .filter(|&j| {
            let x = grid.x(j) * sign;
            x >= window.0 && x <= window.1
        })
        .collect();
    let stride = (idx.len() / 20_000).max(1);
    let rows: Vec<usize> = idx.into_iter().step_by(stride).collect();
    let mut design = DMatrix::zeros(rows.len(), 4);
    let mut rhs = DVector::zeros(rows.len());
    for (r, &j) in rows.iter().enumerate() {
        let b = basis(grid.x(j).abs());
        for k in 0..4 {
            design[(r, k)] = b[k];
        }
        rhs[r] = value(j);
    }
    least_squares(&design, &rhs)
}

fn tail_phase(alpha: f64, x: f64) -> f64 {
    0.25 * x * x + alpha * alpha * x.abs().ln()
}

fn check_window(grid: &Grid1D, window: (f64, f64)) -> Result<()> {
    let (lo, hi) = window;
    if lo < 50.0 - 1e-9 || hi > grid.x_max() + 1e-9 || hi <= lo {
        return Err(LabError::Contract(format!("tail window [{lo}, {hi}] not inside the profile grid with lo >= 50")));
    }
    let periods = (hi * hi - lo * lo) / 4.0 / (2.0 * PI);
    if periods < 10.0 {
        return Err(LabError::FitUnstable(format!("tail window spans only {periods:.2} oscillation periods")));
    }
    Ok(())
}

fn fit_corner(
    alpha: f64,
    frame: &FrameField,
    positions: &[Vec3],
    window: (f64, f64),
) -> Result<(CornerData, Vec3, Vec3)> {
    check_window(&frame.grid, window)?;
    let grid = &frame.grid;
    let osc = |x: f64| {
        let ph = tail_phase(alpha, x);
        [1.0, ph.cos() / x, ph.sin() / x, 1.0 / (x * x)]
    };
    let pos_basis = |x: f64| {
        let ph = tail_phase(alpha, x);
        [1.0, 1.0 / x, ph.cos() / (x * x), ph.sin() / (x * x)]
    };
    let modulated = |j: usize| {
        let x = grid.x(j);
        frame.frames[j].normal().scale(Complex64::from_polar(1.0, alpha * alpha * x.abs().ln()))
    };
    let mut a = [Vec3::zeros(); 2];
    let mut b = [CVec3::zeros(); 2];
    let mut c = [Vec3::zeros(); 2];
    for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
        for k in 0..3 {
            a[side][k] = fit_side(grid, window, sign, osc, |j| frame.frames[j].t[k])?[0];
            b[side].re[k] = fit_side(grid, window, sign, osc, |j| modulated(j).re[k])?[0];
            b[side].im[k] = fit_side(grid, window, sign, osc, |j| modulated(j).im[k])?[0];
        }
        a[side] = a[side].normalize();
        let dir = a[side];
        for k in 0..3 {
            c[side][k] =
                fit_side(grid, window, sign, pos_basis, |j| positions[j][k] - grid.x(j) * dir[k])?[0];
        }
    }
    let theta = measure_corner_angle(&a[0], &a[1])?;
    let corner = CornerData { a_plus: a[0], a_minus: a[1], b_plus: b[0], b_minus: b[1], theta };
    Ok((corner, c[0], c[1]))
}

/// Refits the corner data of `p` over its tail window.
pub fn extract_asymptotics(p: &SelfSimilarProfile) -> Result<CornerData> {
    extract_asymptotics_in(p, p.tail_window)
}

/// Corner data fitted over an explicit tail window `[x_lo, x_hi]`.
pub fn extract_asymptotics_in(p: &SelfSimilarProfile, window: (f64, f64)) -> Result<CornerData> {
    Ok(fit_corner(p.alpha, &p.frame, &p.positions, window)?.0)
}

/// `θ = 2 arcsin(e^{−πα²/2})`.
pub fn angle_from_alpha(alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(LabError::Domain(format!("alpha must be non-negative, got {alpha}")));
    }
    Ok(2.0 * (-PI * alpha * alpha / 2.0).exp().asin())
}

/// Inverse of [`angle_from_alpha`].
pub fn alpha_from_angle(theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta <= PI) {
        return Err(LabError::Domain(format!("angle must lie in (0, pi], got {theta}")));
    }
    Ok((-(2.0 / PI) * (theta / 2.0).sin().ln()).max(0.0).sqrt())
}

/// Profile frame at `x / √t`.
pub fn selfsimilar_frame(p: &SelfSimilarProfile, t: f64, x: f64) -> Result<Frame> {
    if !(t > 0.0) {
        return Err(LabError::Domain(format!("t must be positive, got {t}")));
    }
    let z = x / t.sqrt();
    p.frame
        .sample(z)
        .map(|f| f.orthonormalized())
        .ok_or_else(|| LabError::Range(format!("x/sqrt(t) = {z} outside the profile grid")))
}

/// Profile curve `χ_α(1, z)` with its corner-at-origin placement.
pub fn profile_point(p: &SelfSimilarProfile, z: f64) -> Result<Vec3> {
    let g = &p.frame.grid;
    cubic_sample(g.x_min, g.h, &p.positions, z)
        .map(|v| v + p.base_offset)
        .ok_or_else(|| LabError::Range(format!("z = {z} outside the profile grid")))
}

/// `χ(t, x) = √t χ_α(1, x/√t)` on `grid`.
pub fn selfsimilar_curve(p: &SelfSimilarProfile, t: f64, grid: Grid1D) -> Result<Curve> {
    if !(t > 0.0) {
        return Err(LabError::Domain(format!("t must be positive, got {t}")));
    }
    let st = t.sqrt();
    let pts = (0..grid.n)
        .map(|j| profile_point(p, grid.x(j) / st).map(|v| v * st))
        .collect::<Result<Vec<_>>>()?;
    Curve::new(grid, pts, true)
}

/// The `t = 0` trace `x ↦ x A±`.
pub fn selfsimilar_trace(p: &SelfSimilarProfile, grid: Grid1D) -> Curve {
    let pts = grid
        .nodes()
        .iter()
        .map(|&x| if x >= 0.0 { p.corner.a_plus * x } else { p.corner.a_minus * x })
        .collect();
    Curve { grid, points: pts, arclength: true }
}

/// `ψ_α(t, x) = α e^{ix²/4t} / √t`.
pub fn psi_alpha(alpha: f64, t: f64, x: f64) -> Result<Complex64> {
    if !(t > 0.0) {
        return Err(LabError::Domain(format!("t must be positive, got {t}")));
    }
    Ok(Complex64::from_polar(alpha / t.sqrt(), x * x / (4.0 * t)))
}

/// Max-norm of `χ_t − χ_x ∧ χ_xx` over interior nodes and interior times.
///
/// `χ_t` is a centered difference in time (uniform `times` required); space
/// derivatives are fourth-order differences. When frames are given their
/// tangents replace the differenced `χ_x`.
pub fn binormal_residual(
    times: &[f64],
    curves: &[Curve],
    frames: Option<&[FrameField]>,
) -> Result<f64> {
    if curves.len() < 3 || times.len() != curves.len() {
        return Err(LabError::Contract("need >= 3 time slices with matching times".into()));
    }
    let dt = times[1] - times[0];
    if times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1e-300)) || dt <= 0.0 {
        return Err(LabError::Contract("time slices must be uniformly spaced".into()));
    }
    let grid = curves[0].grid;
    if curves.iter().any(|c| c.grid != grid) {
        return Err(LabError::Contract("curves live on different grids".into()));
    }
    if let Some(fs) = frames {
        if fs.len() != curves.len() || fs.iter().any(|f| f.grid != grid) {
            return Err(LabError::Contract("frames do not match the curves".into()));
        }
    }
    let margin = 3;
    let mut worst: f64 = 0.0;
    for k in 1..curves.len() - 1 {
        let c = &curves[k];
        let tx: Vec<Vec3> = match frames {
            Some(fs) => fs[k].tangents(),
            None => c.derivative(1),
        };
        let txx: Vec<Vec3> = {
            let comps: Vec<Vec<f64>> = (0..3)
                .map(|i| {
                    let v: Vec<f64> = tx.iter().map(|p| p[i]).collect();
                    uniform_derivative(&v, grid.h, 1, 5)
                })
                .collect();
            (0..grid.n).map(|j| Vec3::new(comps[0][j], comps[1][j], comps[2][j])).collect()
        };
        for j in margin..grid.n - margin {
            let chi_t = (curves[k + 1].points[j] - curves[k - 1].points[j]) / (2.0 * dt);
            worst = worst.max((chi_t - tx[j].cross(&txx[j])).norm());
        }
    }
    Ok(worst)
}

/// JSON record of a profile's corner data.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileRecord {
    pub alpha: f64,
    pub theta_measured: f64,
    pub theta_formula: f64,
    #[serde(rename = "A_plus")]
    pub a_plus: [f64; 3],
    #[serde(rename = "A_minus")]
    pub a_minus: [f64; 3],
    #[serde(rename = "B_plus")]
    pub b_plus: ComplexVecRecord,
    #[serde(rename = "B_minus")]
    pub b_minus: ComplexVecRecord,
    pub b_plus_re_norm: f64,
    pub b_plus_im_norm: f64,
    pub b_minus_re_norm: f64,
    pub b_minus_im_norm: f64,
    pub tail_window: [f64; 2],
    pub base_offset: [f64; 3],
    pub frame_defect: f64,
    pub x_max: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexVecRecord {
    pub re: [f64; 3],
    pub im: [f64; 3],
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl ComplexVecRecord {
    fn from(v: &CVec3) -> Self {
        Self { re: arr(&v.re), im: arr(&v.im) }
    }
}

impl SelfSimilarProfile {
    pub fn record(&self) -> Result<ProfileRecord> {
        let c = &self.corner;
        Ok(ProfileRecord {
            alpha: self.alpha,
            theta_measured: c.theta,
            theta_formula: angle_from_alpha(self.alpha)?,
            a_plus: arr(&c.a_plus),
            a_minus: arr(&c.a_minus),
            b_plus: ComplexVecRecord::from(&c.b_plus),
            b_minus: ComplexVecRecord::from(&c.b_minus),
            b_plus_re_norm: c.b_plus.re.norm(),
            b_plus_im_norm: c.b_plus.im.norm(),
            b_minus_re_norm: c.b_minus.re.norm(),
            b_minus_im_norm: c.b_minus.im.norm(),
            tail_window: [self.tail_window.0, self.tail_window.1],
            base_offset: arr(&self.base_offset),
            frame_defect: crate::geometry::frame_orthonormality_defect(&self.frame),
            x_max: self.frame.grid.x_max(),
            h: self.frame.grid.h,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        io::write_json(path, &self.record()?)
    }

    /// Orthonormal frames `(A±, Re B±, Im B±)` built from the fitted corner data.
    pub fn corner_frames(&self) -> (Frame, Frame) {
        let c = &self.corner;
        let mk = |a: Vec3, b: CVec3| Frame { t: a, e1: b.re, e2: b.im }.orthonormalized();
        (mk(c.a_plus, c.b_plus), mk(c.a_minus, c.b_minus))
    }
}
