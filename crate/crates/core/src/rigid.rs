//! Optimal rigid alignment of point clouds (orthogonal Procrustes).

use nalgebra::{Matrix3, SVD};

use crate::error::{LabError, Result};
use crate::vector::Vec3;

/// A proper rigid motion `p ↦ rotation · p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidMotion {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

/// Rotation `R ∈ SO(3)` minimizing `Σ w_k |R a_k − b_k|²` (no translation).
pub fn best_rotation(a: &[Vec3], b: &[Vec3], weights: Option<&[f64]>) -> Result<Matrix3<f64>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(LabError::DegenerateInput("alignment needs matching non-empty sets".into()));
    }
    let mut h = Matrix3::zeros();
    for (k, (p, q)) in a.iter().zip(b).enumerate() {
        let w = weights.map_or(1.0, |w| w[k]);
        h += w * q * p.transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(LabError::FitUnstable("SVD failed in alignment".into())),
    };
    let d = (u * vt).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    Ok(u * fix * vt)
}

/// Rigid motion mapping `a` onto `b` in the least-squares sense (Kabsch).
pub fn kabsch(a: &[Vec3], b: &[Vec3]) -> Result<RigidMotion> {
    if a.len() != b.len() || a.is_empty() {
        return Err(LabError::DegenerateInput("alignment needs matching non-empty sets".into()));
    }
    let n = a.len() as f64;
    let ca = a.iter().fold(Vec3::zeros(), |s, p| s + p) / n;
    let cb = b.iter().fold(Vec3::zeros(), |s, p| s + p) / n;
    let da: Vec<Vec3> = a.iter().map(|p| p - ca).collect();
    let db: Vec<Vec3> = b.iter().map(|p| p - cb).collect();
    let rotation = best_rotation(&da, &db, None)?;
    Ok(RigidMotion { rotation, translation: cb - rotation * ca })
}

/// Maximum pointwise distance after optimal rigid alignment of `a` onto `b`.
pub fn aligned_max_error(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    let m = kabsch(a, b)?;
    Ok(a.iter().zip(b).map(|(p, q)| (m.apply(p) - q).norm()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn kabsch_recovers_known_motion() {
        let pts: Vec<Vec3> = (0..10)
            .map(|k| {
                let s = k as f64 * 0.3;
                Vec3::new(s.cos(), s.sin(), 0.2 * s * s)
            })
            .collect();
        let r = Rotation3::from_euler_angles(0.4, -1.1, 2.0).into_inner();
        let t = Vec3::new(1.0, -2.0, 0.5);
        let moved: Vec<Vec3> = pts.iter().map(|p| r * p + t).collect();
        let m = kabsch(&pts, &moved).unwrap();
        assert!((m.rotation - r).norm() < 1e-12);
        assert!((m.translation - t).norm() < 1e-12);
        assert!(aligned_max_error(&pts, &moved).unwrap() < 1e-12);
    }
}
