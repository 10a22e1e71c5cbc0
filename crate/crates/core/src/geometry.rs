//! Curves, moving frames, curvature and torsion, the spatial frame ODE and
//! corner measurement.

use std::ops::{Add, Mul};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::io;
use crate::numerics::{cubic_sample, rk4_step, uniform_derivative, CubicSpline, GAUSS5};
use crate::vector::{CVec3, Vec3};

/// Uniform grid `x_j = x_min + j h`, `j = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub h: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, h: f64, n: usize) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() || !x_min.is_finite() {
            return Err(LabError::DegenerateInput(format!("grid step must be positive, got {h}")));
        }
        if n < 2 {
            return Err(LabError::DegenerateInput(format!("grid needs at least 2 nodes, got {n}")));
        }
        Ok(Self { x_min, h, n })
    }

    /// Grid on `[-x_max, x_max]` with a node at 0. `x_max` is rounded to a multiple of `h`.
    pub fn symmetric(x_max: f64, h: f64) -> Result<Self> {
        let half = (x_max / h).round() as usize;
        Self::new(-(half as f64) * h, h, 2 * half + 1)
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.h
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.n - 1)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let k = ((x - self.x_min) / self.h).round();
        k.clamp(0.0, (self.n - 1) as f64) as usize
    }

    /// Index of a node sitting at `x` up to round-off, if any.
    pub fn node_at(&self, x: f64) -> Option<usize> {
        let j = self.nearest(x);
        ((self.x(j) - x).abs() <= 1e-9 * self.h.max(1.0)).then_some(j)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min - 1e-12 * self.h && x <= self.x_max() + 1e-12 * self.h
    }
}

/// Arc-length sampled space curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub grid: Grid1D,
    pub points: Vec<Vec3>,
    pub arclength: bool,
}

impl Curve {
    pub fn new(grid: Grid1D, points: Vec<Vec3>, arclength: bool) -> Result<Self> {
        if points.len() != grid.n {
            return Err(LabError::Contract(format!(
                "{} points on a grid of {} nodes",
                points.len(),
                grid.n
            )));
        }
        Ok(Self { grid, points, arclength })
    }

    /// Fourth-order finite-difference derivative of the points.
    pub fn derivative(&self, order: usize) -> Vec<Vec3> {
        let width = if order >= 3 { 7 } else { 5 };
        let comps: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                let v: Vec<f64> = self.points.iter().map(|p| p[k]).collect();
                uniform_derivative(&v, self.grid.h, order, width)
            })
            .collect();
        (0..self.grid.n)
            .map(|j| Vec3::new(comps[0][j], comps[1][j], comps[2][j]))
            .collect()
    }

    /// Largest deviation of the finite-difference tangent length from 1 at interior nodes.
    pub fn arclength_defect(&self) -> f64 {
        let d = self.derivative(1);
        let n = d.len();
        d.iter()
            .enumerate()
            .filter(|(j, _)| *j >= 2 && *j + 2 < n)
            .map(|(_, v)| (v.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .enumerate()
            .map(|(j, p)| vec![self.grid.x(j), p.x, p.y, p.z])
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_csv(path, &["x", "px", "py", "pz"], &self.csv_rows())
    }
}

/// Orthonormal triple `(T, e1, e2)`; the complex normal is `N = e1 + i e2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub t: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl Frame {
    pub fn canonical() -> Self {
        Self { t: Vec3::x(), e1: Vec3::y(), e2: Vec3::z() }
    }

    pub fn from_normal(t: Vec3, n: CVec3) -> Self {
        Self { t, e1: n.re, e2: n.im }
    }

    pub fn normal(&self) -> CVec3 {
        CVec3::new(self.e1, self.e2)
    }

    pub fn defect(&self) -> f64 {
        [
            (self.t.norm() - 1.0).abs(),
            (self.e1.norm() - 1.0).abs(),
            (self.e2.norm() - 1.0).abs(),
            self.t.dot(&self.e1).abs(),
            self.t.dot(&self.e2).abs(),
            self.e1.dot(&self.e2).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Modified Gram–Schmidt with `T` first.
    pub fn orthonormalized(&self) -> Self {
        let t = self.t.normalize();
        let mut e1 = self.e1 - t * t.dot(&self.e1);
        e1 = e1.normalize();
        let mut e2 = self.e2 - t * t.dot(&self.e2);
        e2 -= e1 * e1.dot(&e2);
        Self { t, e1, e2: e2.normalize() }
    }

    pub fn rotate(&self, r: &nalgebra::Matrix3<f64>) -> Self {
        Self { t: r * self.t, e1: r * self.e1, e2: r * self.e2 }
    }

    /// Frame after the `x`-derivative law `T' = Re(κ N)`, `N' = −κ̄ T`.
    pub fn x_derivative(&self, kappa: Complex64) -> Self {
        Self {
            t: self.e1 * kappa.re - self.e2 * kappa.im,
            e1: -self.t * kappa.re,
            e2: self.t * kappa.im,
        }
    }
}

impl Add for Frame {
    type Output = Frame;
    fn add(self, o: Frame) -> Frame {
        Frame { t: self.t + o.t, e1: self.e1 + o.e1, e2: self.e2 + o.e2 }
    }
}

impl Mul<f64> for Frame {
    type Output = Frame;
    fn mul(self, s: f64) -> Frame {
        Frame { t: self.t * s, e1: self.e1 * s, e2: self.e2 * s }
    }
}

/// One RK4 step of the frame ODE with coupling `κ(x)`, followed by re-orthonormalization.
pub fn frame_step<K: Fn(f64) -> Complex64>(kappa: &K, x: f64, f: Frame, h: f64) -> Frame {
    let rhs = |x: f64, y: Frame| y.x_derivative(kappa(x));
    rk4_step(&rhs, x, f, h).orthonormalized()
}

/// Moving frame sampled on a grid.
///
/// When the grid has a node at 0 and the frame is two-sided there, the frame
/// stored at that node is the right limit and `minus_at_zero` the left limit.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameField {
    pub grid: Grid1D,
    pub frames: Vec<Frame>,
    pub minus_at_zero: Option<Frame>,
}

impl FrameField {
    pub fn tangents(&self) -> Vec<Vec3> {
        self.frames.iter().map(|f| f.t).collect()
    }

    pub fn normals(&self) -> Vec<CVec3> {
        self.frames.iter().map(|f| f.normal()).collect()
    }

    /// Cubic interpolation of the frame at `x` (not re-orthonormalized).
    pub fn sample(&self, x: f64) -> Option<Frame> {
        cubic_sample(self.grid.x_min, self.grid.h, &self.frames, x)
    }

    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .enumerate()
            .map(|(j, f)| {
                vec![
                    self.grid.x(j),
                    f.t.x,
                    f.t.y,
                    f.t.z,
                    f.e1.x,
                    f.e1.y,
                    f.e1.z,
                    f.e2.x,
                    f.e2.y,
                    f.e2.z,
                ]
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_csv(
            path,
            &["x", "Tx", "Ty", "Tz", "e1x", "e1y", "e1z", "e2x", "e2y", "e2z"],
            &self.csv_rows(),
        )
    }
}

/// Curvature, torsion and the phase constant of a curve.
#[derive(Debug, Clone, PartialEq)]
pub struct FrenetData {
    pub grid: Grid1D,
    pub c: Vec<f64>,
    pub tau: Vec<f64>,
    pub gamma: f64,
}

impl FrenetData {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<f64>> = (0..self.grid.n)
            .map(|j| vec![self.grid.x(j), self.c[j], self.tau[j]])
            .collect();
        io::write_csv(path, &["x", "c", "tau"], &rows)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma.rem_euclid(std::f64::consts::TAU);
        self
    }
}

/// Complex curvature `g = c e^{i(∫τ + γ)}` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FilamentFunction {
    pub grid: Grid1D,
    pub g: Vec<Complex64>,
}

/// One-sided asymptotic data of a corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerData {
    pub a_plus: Vec3,
    pub a_minus: Vec3,
    pub b_plus: CVec3,
    pub b_minus: CVec3,
    pub theta: f64,
}

/// Resamples a polyline-sampled curve at uniform arc-length spacing `target_h`.
///
/// The samples are interpolated by a natural cubic spline in the cumulative
/// chord length; arc length along the spline is then inverted node by node.
pub fn arclength_resample(points: &[Vec3], target_h: f64) -> Result<Curve> {
    if points.len() < 4 {
        return Err(LabError::DegenerateInput("need at least 4 points".into()));
    }
    if !(target_h > 0.0) {
        return Err(LabError::DegenerateInput("target spacing must be positive".into()));
    }
    let mut chord = vec![0.0];
    for w in points.windows(2) {
        let d = (w[1] - w[0]).norm();
        if d <= 1e-14 * (1.0 + w[0].norm()) {
            return Err(LabError::DegenerateInput("duplicate consecutive points".into()));
        }
        chord.push(chord.last().unwrap() + d);
    }
    let splines: Vec<CubicSpline> = (0..3)
        .map(|k| CubicSpline::new(&chord, &points.iter().map(|p| p[k]).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let speed = |u: f64| {
        Vec3::new(splines[0].derivative(u), splines[1].derivative(u), splines[2].derivative(u))
            .norm()
    };
    let length_between = |a: f64, b: f64| {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        GAUSS5.iter().map(|(z, w)| w * speed(mid + half * z)).sum::<f64>() * half
    };
    // Arc length at each knot, two Gauss panels per segment.
    let mut arc = vec![0.0];
    for w in chord.windows(2) {
        let m = 0.5 * (w[0] + w[1]);
        arc.push(arc.last().unwrap() + length_between(w[0], m) + length_between(m, w[1]));
    }
    let total = *arc.last().unwrap();
    if target_h >= total {
        return Err(LabError::GridTooCoarse(format!(
            "target spacing {target_h} not below curve length {total}"
        )));
    }
    let n = (total / target_h + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for j in 0..n {
        let s = j as f64 * target_h;
        while seg + 2 < arc.len() && arc[seg + 1] < s {
            seg += 1;
        }
        let (u0, u1) = (chord[seg], chord[seg + 1]);
        let mut u = u0 + (s - arc[seg]) / (arc[seg + 1] - arc[seg]) * (u1 - u0);
        for _ in 0..30 {
            let f = arc[seg] + length_between(u0, u) - s;
            let du = f / speed(u);
            u -= du;
            if du.abs() < 1e-15 * (1.0 + u.abs()) {
                break;
            }
        }
        out.push(Vec3::new(splines[0].eval(u), splines[1].eval(u), splines[2].eval(u)));
    }
    Curve::new(Grid1D::new(0.0, target_h, n)?, out, true)
}

/// Curvature and torsion from fourth-order differences.
///
/// Torsion is set to zero where the curvature is below `1e-8 · max c`.
pub fn frenet_data(curve: &Curve) -> Result<FrenetData> {
    if !curve.arclength {
        return Err(LabError::Contract("frenet_data needs an arc-length curve".into()));
    }
    if curve.grid.n < 5 {
        return Err(LabError::DegenerateInput("frenet_data needs at least 5 nodes".into()));
    }
    let d1 = curve.derivative(1);
    let d2 = curve.derivative(2);
    let d3 = curve.derivative(3);
    let c: Vec<f64> = d2.iter().map(|v| v.norm()).collect();
    let floor = 1e-8 * c.iter().cloned().fold(0.0, f64::max);
    let tau = (0..c.len())
        .map(|j| {
            if c[j] > floor && c[j] > 0.0 {
                d1[j].cross(&d2[j]).dot(&d3[j]) / (c[j] * c[j])
            } else {
                0.0
            }
        })
        .collect();
    Ok(FrenetData { grid: curve.grid, c, tau, gamma: 0.0 })
}

/// `g(x) = c(x) e^{i(∫₀ˣ τ + γ)}` with the integral accumulated by the
/// trapezoid rule from the node nearest 0.
pub fn filament_function(fd: &FrenetData) -> FilamentFunction {
    let grid = fd.grid;
    let j0 = grid.nearest(0.0);
    let mut phase = vec![0.0; grid.n];
    for j in j0 + 1..grid.n {
        phase[j] = phase[j - 1] + 0.5 * grid.h * (fd.tau[j - 1] + fd.tau[j]);
    }
    for j in (0..j0).rev() {
        phase[j] = phase[j + 1] - 0.5 * grid.h * (fd.tau[j + 1] + fd.tau[j]);
    }
    let g = fd
        .c
        .iter()
        .zip(&phase)
        .map(|(&c, &p)| Complex64::from_polar(c, p + fd.gamma))
        .collect();
    FilamentFunction { grid, g }
}

fn check_seed(f: &Frame, name: &str) -> Result<()> {
    let d = f.defect();
    if d > 1e-8 {
        return Err(LabError::Contract(format!("{name} seed not orthonormal (defect {d:.3e})")));
    }
    Ok(())
}

/// Integrates `T' = Re(g N)`, `N' = −ḡ T` outward from `x = 0` in both directions.
///
/// The plus seed is used for `x > 0`, the minus seed for `x < 0`; `g` between
/// nodes comes from cubic interpolation.
pub fn integrate_parallel_frame_x(
    g: &FilamentFunction,
    plus_seed: Frame,
    minus_seed: Frame,
) -> Result<FrameField> {
    check_seed(&plus_seed, "plus")?;
    check_seed(&minus_seed, "minus")?;
    let grid = g.grid;
    if !grid.contains(0.0) || grid.n < 4 {
        return Err(LabError::Contract("grid must contain x = 0 and at least 4 nodes".into()));
    }
    let kappa = |x: f64| {
        cubic_sample(grid.x_min, grid.h, &g.g, x)
            .unwrap_or_else(|| g.g[grid.nearest(x)])
    };
    let mut frames = vec![plus_seed; grid.n];
    let zero = grid.node_at(0.0);
    // first node strictly right of 0 and first node at or left of 0
    let right_start = match zero {
        Some(j) => j,
        None => ((0.0 - grid.x_min) / grid.h).ceil() as usize,
    };
    let mut f = plus_seed;
    let mut x = 0.0;
    for (j, slot) in frames.iter_mut().enumerate().skip(right_start) {
        let xj = grid.x(j);
        if xj > x {
            f = frame_step(&kappa, x, f, xj - x);
            x = xj;
        }
        *slot = f;
    }
    let left_start = match zero {
        Some(j) => j,
        None => right_start,
    };
    let mut f = minus_seed;
    let mut x = 0.0;
    for j in (0..left_start).rev() {
        let xj = grid.x(j);
        f = frame_step(&kappa, x, f, xj - x);
        x = xj;
        frames[j] = f;
    }
    Ok(FrameField { grid, frames, minus_at_zero: zero.map(|_| minus_seed) })
}

/// Integrates a unit tangent field by the cumulative trapezoid rule.
pub fn curve_from_tangent(
    grid: Grid1D,
    tangent: &[Vec3],
    base_point: Vec3,
    base_index: usize,
) -> Result<Curve> {
    if tangent.len() != grid.n || base_index >= grid.n {
        return Err(LabError::Contract("tangent length or base index does not match grid".into()));
    }
    if let Some(bad) = tangent.iter().find(|v| (v.norm() - 1.0).abs() > 1e-8) {
        return Err(LabError::Contract(format!("non-unit tangent (|T| = {})", bad.norm())));
    }
    let mut pts = vec![base_point; grid.n];
    for j in base_index + 1..grid.n {
        pts[j] = pts[j - 1] + (tangent[j - 1] + tangent[j]) * (0.5 * grid.h);
    }
    for j in (0..base_index).rev() {
        pts[j] = pts[j + 1] - (tangent[j + 1] + tangent[j]) * (0.5 * grid.h);
    }
    Curve::new(grid, pts, true)
}

/// Corner angle `θ = arccos(−T⁺·T⁻)`; a straight line gives `π`.
pub fn measure_corner_angle(t_plus: &Vec3, t_minus: &Vec3) -> Result<f64> {
    for v in [t_plus, t_minus] {
        if (v.norm() - 1.0).abs() > 1e-8 {
            return Err(LabError::Contract(format!("non-unit direction (|v| = {})", v.norm())));
        }
    }
    Ok((-t_plus.dot(t_minus)).clamp(-1.0, 1.0).acos())
}

pub fn frame_orthonormality_defect(f: &FrameField) -> f64 {
    f.frames
        .iter()
        .chain(f.minus_at_zero.iter())
        .map(Frame::defect)
        .fold(0.0, f64::max)
}
