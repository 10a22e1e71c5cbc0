use std::f64::consts::PI;

use filament_lab::geometry::{frame_orthonormality_defect, Grid1D};
use filament_lab::numerics::{fit_power_law, geometric_ladder};
use filament_lab::selfsimilar::*;
use filament_lab::{LabError, Vec3};
use nalgebra::Matrix3;

fn reflect() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0))
}

#[test]
fn angle_law_holds_on_alpha_ladder() {
    let mut measured = Vec::new();
    for alpha in [0.2, 0.4, 0.6, 0.8] {
        let p = integrate_profile(alpha, 200.0, 5e-4).unwrap();
        let c = p.corner;
        // closed form: sin(θ/2) = exp(−πα²/2)
        let oracle = 2.0 * (-PI * alpha * alpha / 2.0).exp().asin();
        assert!(((c.theta - oracle) / oracle).abs() < 5e-3, "alpha {alpha}: {} vs {oracle}", c.theta);
        assert!((c.a_plus.norm() - 1.0).abs() < 1e-8 && (c.a_minus.norm() - 1.0).abs() < 1e-8);
        for (a, b) in [(c.a_plus, c.b_plus), (c.a_minus, c.b_minus)] {
            assert!(b.re.dot(&a).abs() < 1e-6 && b.im.dot(&a).abs() < 1e-6);
        }
        assert!(frame_orthonormality_defect(&p.frame) <= 1e-10);
        measured.push(c.theta);
    }
    assert!(measured.windows(2).all(|w| w[1] < w[0]));
    let formula: Vec<f64> = [0.2, 0.4, 0.6, 0.8].iter().map(|&a| angle_from_alpha(a).unwrap()).collect();
    assert!(formula.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn half_coupling_corner_matches_dot_product_identity_and_parity() {
    let p = integrate_profile(0.5, 200.0, 5e-4).unwrap();
    let c = p.corner;
    let oracle = 2.0 * (-PI * 0.25f64).exp() - 1.0;
    assert!((c.a_plus.dot(&c.a_minus) - oracle).abs() < 5e-3);
    // x ↦ −x maps the profile to its reflection through the first axis
    assert!((reflect() * c.a_plus - c.a_minus).norm() < 1e-6);
    assert!((-c.b_plus.rotate(&reflect()) - c.b_minus).norm() < 1e-6);
    assert!(frame_orthonormality_defect(&p.frame) <= 1e-10);
    // the profile passes through 2α times the initial binormal at x = 0
    assert!((p.base_offset - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-4);
    for b in [c.b_plus, c.b_minus] {
        assert!((b.re.norm() - 1.0).abs() < 1e-6 && (b.im.norm() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn profile_is_fourth_order_in_step() {
    let ps: Vec<_> = [2e-3, 1e-3, 5e-4].iter().map(|&h| integrate_profile(0.5, 60.0, h).unwrap()).collect();
    let diff = |a: &SelfSimilarProfile, b: &SelfSimilarProfile| {
        let g = a.frame.grid;
        (0..g.n)
            .map(|j| {
                let k = b.frame.grid.node_at(g.x(j)).unwrap();
                (a.frame.frames[j].t - b.frame.frames[k].t).norm()
            })
            .fold(0.0, f64::max)
    };
    let d1 = diff(&ps[0], &ps[1]);
    let d2 = diff(&ps[1], &ps[2]);
    assert!(d1 / d2 > 12.0, "{d1} {d2}");
}

#[test]
fn short_tail_window_is_rejected() {
    let p = integrate_profile(0.5, 60.0, 1e-3).unwrap();
    assert!(matches!(extract_asymptotics_in(&p, (50.0, 52.0)), Err(LabError::FitUnstable(_))));
    assert!(extract_asymptotics(&p).is_ok());
}

#[test]
fn small_coupling_has_no_corner() {
    let p = integrate_profile(0.01, 200.0, 5e-4).unwrap();
    // π − θ ≈ 2√π α for small α
    assert!((p.corner.theta - angle_from_alpha(0.01).unwrap()).abs() < 1e-5);
    assert!((PI - p.corner.theta - 2.0 * PI.sqrt() * 0.01).abs() < 1e-4);
    let grid = Grid1D::symmetric(2.0, 0.01).unwrap();
    let curve = selfsimilar_curve(&p, 0.5, grid).unwrap();
    for (j, q) in curve.points.iter().enumerate() {
        assert!((q - Vec3::new(grid.x(j), 0.0, 0.0)).norm() < 5.0 * 0.01);
    }
}

#[test]
fn selfsimilar_curve_converges_at_half_rate() {
    let p = integrate_profile(0.5, 200.0, 5e-4).unwrap();
    let grid = Grid1D::symmetric(1.0, 0.005).unwrap();
    let trace = selfsimilar_trace(&p, grid);
    let ts = geometric_ladder(1e-4, 1e-1, 6);
    let sups: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let c = selfsimilar_curve(&p, t, grid).unwrap();
            c.points.iter().zip(&trace.points).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
        })
        .collect();
    let fit = fit_power_law(&ts, &sups, 5).unwrap();
    assert!((fit.exponent - 0.5).abs() < 0.05, "{fit:?}");
}

#[test]
fn selfsimilar_curve_is_arclength_and_has_curvature_law() {
    let p = integrate_profile(0.5, 200.0, 5e-4).unwrap();
    let grid = Grid1D::symmetric(3.0, 0.002).unwrap();
    let c = selfsimilar_curve(&p, 1.0, grid).unwrap();
    assert!(c.arclength_defect() < 1e-8, "{}", c.arclength_defect());
    // |T_x| = α/√t follows from the frame law with ψ_α
    let t = 0.25;
    let x = 0.3;
    let d = 1e-4;
    let tp = selfsimilar_frame(&p, t, x + d).unwrap().t;
    let tm = selfsimilar_frame(&p, t, x - d).unwrap().t;
    let curvature = ((tp - tm) / (2.0 * d)).norm();
    assert!((curvature - psi_alpha(0.5, t, x).unwrap().norm()).abs() < 1e-6);
}

#[test]
fn binormal_residual_is_second_order_in_time() {
    let p = integrate_profile(0.5, 200.0, 5e-4).unwrap();
    let grid = Grid1D::symmetric(2.0, 0.005).unwrap();
    let res = |dt: f64| {
        let times = [1.05 - dt, 1.05, 1.05 + dt];
        let curves: Vec<_> = times.iter().map(|&t| selfsimilar_curve(&p, t, grid).unwrap()).collect();
        binormal_residual(&times, &curves, None).unwrap()
    };
    let (r1, r2, r3) = (res(0.05), res(0.025), res(0.0125));
    let o1 = (r1 / r2).log2();
    let o2 = (r2 / r3).log2();
    assert!(o1 >= 1.9 && o2 >= 1.9, "{r1} {r2} {r3}");
}
