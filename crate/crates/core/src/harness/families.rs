//! Named curvature and torsion families.

use std::path::Path;

use crate::error::{LabError, Result};
use crate::geometry::{FrenetData, Grid1D};
use crate::io::read_csv;
use crate::numerics::CubicSpline;

use super::config::{CurvatureFamily, CurvatureSpec, TorsionFamily, TorsionSpec};

pub fn curvature_value(spec: &CurvatureSpec, x: f64) -> f64 {
    let b = spec.beta;
    match spec.family {
        CurvatureFamily::Zero | CurvatureFamily::Csv => 0.0,
        CurvatureFamily::Gauss2 => b * x * x * (-x * x).exp(),
        CurvatureFamily::Bump => {
            let r = x / spec.width;
            if r.abs() < 1.0 {
                b * x * x * (1.0 - r * r).powi(4)
            } else {
                0.0
            }
        }
        CurvatureFamily::Badgauss => b * (-x * x).exp(),
    }
}

/// Samples a two-column table `x, value` onto `grid` with a cubic spline;
/// zero outside the table's range.
fn sample_table(path: &Path, grid: &Grid1D) -> Result<Vec<f64>> {
    let (_, rows) = read_csv(path)?;
    if rows.len() < 4 || rows.iter().any(|r| r.len() < 2) {
        return Err(LabError::DegenerateInput(format!("{} needs at least 4 rows of x, value", path.display())));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let vs: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let spline = CubicSpline::new(&xs, &vs)?;
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    Ok(grid
        .nodes()
        .iter()
        .map(|&x| if x < lo || x > hi { 0.0 } else { spline.eval(x) })
        .collect())
}

/// Curvature, torsion and phase on the symmetric grid `|x| ≤ x_max`.
pub fn frenet_from_spec(
    curvature: &CurvatureSpec,
    torsion: &TorsionSpec,
    gamma: f64,
    grid: Grid1D,
    base_dir: &Path,
) -> Result<FrenetData> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
    let c = match (curvature.family, &curvature.path) {
        (CurvatureFamily::Csv, Some(p)) => sample_table(&resolve(p), &grid)?,
        (CurvatureFamily::Csv, None) => return Err(LabError::Contract("csv curvature without a path".into())),
        _ => grid.nodes().iter().map(|&x| curvature_value(curvature, x)).collect(),
    };
    let tau = match (torsion.family, &torsion.path) {
        (TorsionFamily::Zero, _) => vec![0.0; grid.n],
        (TorsionFamily::Constant, _) => vec![torsion.value; grid.n],
        (TorsionFamily::Csv, Some(p)) => sample_table(&resolve(p), &grid)?,
        (TorsionFamily::Csv, None) => return Err(LabError::Contract("csv torsion without a path".into())),
    };
    Ok(FrenetData { grid, c, tau, gamma: 0.0 }.with_gamma(gamma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_have_the_documented_shapes() {
        let mut s = CurvatureSpec { family: CurvatureFamily::Bump, beta: 0.5, width: 2.0, path: None };
        assert_eq!(curvature_value(&s, 2.5), 0.0);
        assert!((curvature_value(&s, 1.0) - 0.5 * 0.75f64.powi(4)).abs() < 1e-15);
        s.family = CurvatureFamily::Gauss2;
        assert!((curvature_value(&s, 1.0) - 0.5 / std::f64::consts::E).abs() < 1e-15);
        s.family = CurvatureFamily::Badgauss;
        assert_eq!(curvature_value(&s, 0.0), 0.5);
    }

    #[test]
    fn csv_curvature_is_resampled() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<Vec<f64>> = (0..=40).map(|k| {
            let x = -2.0 + 0.1 * k as f64;
            vec![x, x * x]
        }).collect();
        crate::io::write_csv(&dir.path().join("c.csv"), &["x", "c"], &rows).unwrap();
        let spec = CurvatureSpec { family: CurvatureFamily::Csv, path: Some("c.csv".into()), ..Default::default() };
        let grid = Grid1D::symmetric(3.0, 0.05).unwrap();
        let fd = frenet_from_spec(&spec, &TorsionSpec::default(), 0.0, grid, dir.path()).unwrap();
        let j = grid.nearest(1.05);
        assert!((fd.c[j] - 1.05f64.powi(2)).abs() < 1e-3);
        assert_eq!(fd.c[grid.nearest(2.5)], 0.0);
    }
}
