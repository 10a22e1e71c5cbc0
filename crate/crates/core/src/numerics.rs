//! Small numerical kernels shared by the modules: finite-difference weights,
//! local interpolation, a natural cubic spline, least squares and power-law fits.

use std::ops::{Add, Mul};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Fornberg's algorithm: weights for the `m`-th derivative at `z` from the
/// stencil points `xs`.
pub fn fornberg_weights(z: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - z;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Derivative of order `order` of uniformly sampled data.
///
/// Interior nodes use a centered stencil of `width` points (odd); nodes closer
/// than `width / 2` to an end use the same number of points shifted inward.
pub fn uniform_derivative(values: &[f64], h: f64, order: usize, width: usize) -> Vec<f64> {
    let n = values.len();
    let width = width.min(n);
    let half = width / 2;
    let mut cache: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut out = vec![0.0; n];
    for (j, o) in out.iter_mut().enumerate() {
        let start = j.saturating_sub(half).min(n - width);
        let shift = j - start;
        let w = match cache.iter().find(|(s, _)| *s == shift) {
            Some((_, w)) => w.clone(),
            None => {
                let xs: Vec<f64> = (0..width).map(|k| k as f64).collect();
                let w = fornberg_weights(shift as f64, &xs, order);
                cache.push((shift, w.clone()));
                w
            }
        };
        let scale = h.powi(order as i32);
        *o = w
            .iter()
            .zip(&values[start..start + width])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / scale;
    }
    out
}

/// Four-point Lagrange (cubic) interpolation on a uniform grid.
///
/// `values[j]` sits at `x_min + j h`. Returns `None` outside `[x_min, x_max]`.
pub fn cubic_sample<T>(x_min: f64, h: f64, values: &[T], x: f64) -> Option<T>
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
{
    let n = values.len();
    if n < 4 {
        return None;
    }
    let pos = (x - x_min) / h;
    let last = (n - 1) as f64;
    if !(pos >= -1e-9 && pos <= last + 1e-9) {
        return None;
    }
    let pos = pos.clamp(0.0, last);
    let base = (pos.floor() as usize).saturating_sub(1).min(n - 4);
    let u = pos - base as f64;
    // nodes at 0,1,2,3 relative to base
    let w0 = -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0;
    let w1 = u * (u - 2.0) * (u - 3.0) / 2.0;
    let w2 = -u * (u - 1.0) * (u - 3.0) / 2.0;
    let w3 = u * (u - 1.0) * (u - 2.0) / 6.0;
    Some(values[base] * w0 + values[base + 1] * w1 + values[base + 2] * w2 + values[base + 3] * w3)
}

/// Natural cubic spline through `(knots[i], values[i])` for a scalar channel.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(knots: &[f64], values: &[f64]) -> Result<Self> {
        let n = knots.len();
        if n < 3 || values.len() != n {
            return Err(LabError::DegenerateInput("spline needs >= 3 matching knots".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::DegenerateInput("spline knots must increase".into()));
        }
        // Tridiagonal system for the second derivatives, natural end conditions.
        let mut second = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let mut upper = vec![0.0; n];
        diag[0] = 1.0;
        diag[n - 1] = 1.0;
        for i in 1..n - 1 {
            let h0 = knots[i] - knots[i - 1];
            let h1 = knots[i + 1] - knots[i];
            let lower = h0 / 6.0;
            diag[i] = (h0 + h1) / 3.0;
            upper[i] = h1 / 6.0;
            rhs[i] = (values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0;
            // forward elimination against row i-1
            let m = lower / diag[i - 1];
            diag[i] -= m * upper[i - 1];
            rhs[i] -= m * rhs[i - 1];
        }
        for i in (1..n - 1).rev() {
            second[i] = (rhs[i] - upper[i] * second[i + 1]) / diag[i];
        }
        Ok(Self { knots: knots.to_vec(), values: values.to_vec(), second })
    }

    fn segment(&self, s: f64) -> usize {
        match self.knots.binary_search_by(|k| k.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.knots.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.knots.len() - 2),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let i = self.segment(s);
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - s) / h;
        let b = (s - self.knots[i]) / h;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let i = self.segment(s);
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - s) / h;
        let b = (s - self.knots[i]) / h;
        (self.values[i + 1] - self.values[i]) / h
            + (-(3.0 * a * a - 1.0) * self.second[i] + (3.0 * b * b - 1.0) * self.second[i + 1]) * h
                / 6.0
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

/// Five-point Gauss–Legendre nodes and weights on `[-1, 1]`.
pub const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Ordinary least squares `design · coef ≈ rhs` via SVD.
pub fn least_squares(design: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(LabError::FitUnstable(format!(
            "ill-conditioned design (singular values {smin:.3e} / {smax:.3e})"
        )));
    }
    svd.solve(rhs, 0.0).map_err(|e| LabError::FitUnstable(e.to_string()))
}

/// Result of a straight-line fit of `log value` against `log t`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PowerFit {
    pub exponent: f64,
    pub log_prefactor: f64,
    /// 95% confidence interval of the exponent.
    pub interval: (f64, f64),
    pub points: usize,
}

/// Two-sided 95% Student-t quantile.
fn t_quantile_95(dof: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
        2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
        2.052, 2.048, 2.045, 2.042,
    ];
    if dof == 0 {
        f64::INFINITY
    } else if dof <= 30 {
        TABLE[dof - 1]
    } else {
        1.96 + 2.4 / dof as f64
    }
}

/// Fits `value ≈ C t^p` by least squares in log-log coordinates.
///
/// Points with non-positive or non-finite values are skipped; at least
/// `min_points` usable points are required.
pub fn fit_power_law(ts: &[f64], values: &[f64], min_points: usize) -> Result<PowerFit> {
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(values)
        .filter(|(t, v)| **t > 0.0 && **v > 0.0 && v.is_finite())
        .map(|(t, v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < min_points.max(2) {
        return Err(LabError::FitUnstable(format!(
            "{} usable points, need {}",
            pts.len(),
            min_points.max(2)
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(LabError::FitUnstable("all abscissae coincide".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = pts.len().saturating_sub(2);
    let half = if dof > 0 {
        let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        t_quantile_95(dof) * (rss / dof as f64 / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(PowerFit {
        exponent: slope,
        log_prefactor: intercept,
        interval: (slope - half, slope + half),
        points: pts.len(),
    })
}

/// Geometric ladder from `lo` to `hi` with `per_decade` points per decade,
/// both ends included.
pub fn geometric_ladder(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let steps = ((decades * per_decade as f64).round() as usize).max(1);
    (0..=steps)
        .map(|k| {
            if k == steps {
                hi
            } else {
                lo * 10f64.powf(decades * k as f64 / steps as f64)
            }
        })
        .collect()
}

/// One classical Runge–Kutta step for `y' = f(x, y)` on any vector-like state.
pub fn rk4_step<S, F>(f: &F, x: f64, y: S, h: f64) -> S
where
    S: Copy + Add<Output = S> + Mul<f64, Output = S>,
    F: Fn(f64, S) -> S,
{
    let k1 = f(x, y);
    let k2 = f(x + 0.5 * h, y + k1 * (0.5 * h));
    let k3 = f(x + 0.5 * h, y + k2 * (0.5 * h));
    let k4 = f(x + h, y + k3 * h);
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}
