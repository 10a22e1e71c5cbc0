use std::sync::OnceLock;

use filament_lab::geometry::*;
use filament_lab::harness::config::ExperimentConfig;
use filament_lab::io::{csv_string, read_csv, write_csv};
use filament_lab::nlsolver::*;
use filament_lab::numerics::geometric_ladder;
use filament_lab::reconstruction::*;
use filament_lab::scattering::*;
use filament_lab::selfsimilar::*;
use filament_lab::{CVec3, Vec3};
use nalgebra::{Matrix3, Rotation3};
use num_complex::Complex64;
use proptest::prelude::*;

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    (-3.1f64..3.1, -1.5f64..1.5, -3.1f64..3.1).prop_map(|(a, b, c)| *Rotation3::from_euler_angles(a, b, c).matrix())
}

fn unit_vector() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("nonzero", |(x, y, z)| x * x + y * y + z * z > 1e-2)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
}

/// Smooth field: sum of three modulated Gaussians.
fn smooth_field() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -3.0f64..3.0, -2.0f64..2.0), 3)
}

fn eval_field(terms: &[(f64, f64, f64, f64)], x: f64) -> Complex64 {
    terms
        .iter()
        .map(|&(re, im, k, c)| Complex64::new(re, im) * Complex64::from_polar(1.0, k * x) * (-(x - c).powi(2)).exp())
        .sum()
}

fn profile() -> &'static SelfSimilarProfile {
    static P: OnceLock<SelfSimilarProfile> = OnceLock::new();
    P.get_or_init(|| integrate_profile(0.4, 60.0, 1e-3).unwrap())
}

fn l2(f: &WaveField) -> f64 {
    conserved_mass(f).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn parallel_frames_stay_orthonormal(terms in smooth_field(), r in rotation()) {
        let grid = Grid1D::symmetric(4.0, 5e-3).unwrap();
        let g = FilamentFunction { grid, g: grid.nodes().iter().map(|&x| eval_field(&terms, x)).collect() };
        let seed = Frame::canonical().rotate(&r);
        let ff = integrate_parallel_frame_x(&g, seed, seed).unwrap();
        prop_assert!(frame_orthonormality_defect(&ff) <= 1e-10);
    }

    #[test]
    fn filament_function_modulus_is_the_curvature(
        c in prop::collection::vec(0.0f64..5.0, 64),
        tau in prop::collection::vec(-3.0f64..3.0, 64),
        gamma in -10.0f64..10.0,
    ) {
        let grid = Grid1D::new(-1.0, 1.0 / 32.0, 64).unwrap();
        let fd = FrenetData { grid, c: c.clone(), tau, gamma: 0.0 }.with_gamma(gamma);
        prop_assert!((0.0..std::f64::consts::TAU).contains(&fd.gamma));
        let g = filament_function(&fd);
        for (z, cj) in g.g.iter().zip(&c) {
            prop_assert!((z.norm() - cj).abs() <= 1e-14 * cj.max(1e-300));
        }
    }

    #[test]
    fn corner_angle_is_rotation_invariant(a in unit_vector(), b in unit_vector(), r in rotation()) {
        let th = measure_corner_angle(&a, &b).unwrap();
        let tr = measure_corner_angle(&(r * a), &(r * b)).unwrap();
        prop_assert!((th - tr).abs() <= 1e-12 || (th.cos() - tr.cos()).abs() <= 1e-14);
    }

    #[test]
    fn rotation_fit_recovers_rotations(r in rotation(), vs in prop::collection::vec(unit_vector(), 4..8)) {
        let to: Vec<Vec3> = vs.iter().map(|v| r * v).collect();
        let fit = RotationFit::fit(&vs, &to).unwrap();
        prop_assert!(fit.orthogonality_defect() <= 1e-12);
        prop_assert!((fit.r.determinant() - 1.0).abs() <= 1e-12);
        prop_assert!((fit.r - r).norm() <= 1e-9);
    }

    #[test]
    fn angle_law_is_monotone_and_invertible(a in 0.01f64..1.5, b in 0.01f64..1.5) {
        prop_assume!((a - b).abs() > 1e-6);
        let (ta, tb) = (angle_from_alpha(a).unwrap(), angle_from_alpha(b).unwrap());
        prop_assert!((ta < tb) == (a > b));
        prop_assert!((alpha_from_angle(ta).unwrap() - a).abs() <= 1e-10);
    }

    #[test]
    fn profile_frames_are_scale_invariant(x in -4.0f64..4.0, t1 in 0.01f64..1.0, t2 in 0.01f64..1.0) {
        let p = profile();
        let a = selfsimilar_frame(p, t1, x * t1.sqrt()).unwrap();
        let b = selfsimilar_frame(p, t2, x * t2.sqrt()).unwrap();
        let d = (a.t - b.t).norm().max((a.e1 - b.e1).norm()).max((a.e2 - b.e2).norm());
        prop_assert!(d <= 1e-15, "{}", d);
    }

    #[test]
    fn fourier_round_trip_is_exact(terms in smooth_field(), noise in prop::collection::vec(-1.0f64..1.0, 256)) {
        let grid = periodic_grid(20.0, 256).unwrap();
        let mut k = 0;
        let f = WaveField::from_fn(grid, 0.0, |x| {
            k += 1;
            eval_field(&terms, x) + noise[k - 1]
        }).unwrap();
        let back = fourier_inverse(&fourier_forward(&f).unwrap()).unwrap();
        let err = back.values.iter().zip(&f.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-13);
    }

    #[test]
    fn evolutions_preserve_mass(terms in smooth_field(), t in 0.1f64..5.0) {
        let grid = periodic_grid(40.0, 256).unwrap();
        let f = WaveField::from_fn(grid, 0.0, |x| 0.5 * eval_field(&terms, x)).unwrap();
        let m0 = l2(&f);
        prop_assert!((l2(&free_propagate(&f, t).unwrap()) - m0).abs() <= 1e-12 * m0);
        let tr = split_step_psi(&f, GaugeSpec::Zero, 0.0, 1.0, 1e-3, &[]).unwrap();
        let drift = (l2(tr.last()) - m0).abs() / m0 * 1000.0 / tr.steps as f64;
        prop_assert!(drift <= 1e-12, "{}", drift);
        // ‖u‖ is conserved by the u-equation only when α = 0
        let u = WaveField { time: 1.0, ..f.clone() };
        let tu = split_step_u(&u, 0.0, 1.0, 2.0, StepPolicy::Fixed { ds: 1e-3 }, &[]).unwrap();
        let drift = (l2(tu.last()) - m0).abs() / m0 * 1000.0 / tu.steps as f64;
        prop_assert!(drift <= 1e-12, "{}", drift);
    }

    #[test]
    fn asymptotic_state_is_linear_in_the_data(beta in 0.01f64..1.0, lambda in -5.0f64..5.0, alpha in 0.0f64..0.8) {
        prop_assume!(lambda.abs() > 1e-3);
        let grid = Grid1D::symmetric(6.0, 1e-2).unwrap();
        let g: Vec<Complex64> = grid.nodes().iter().map(|&x| Complex64::new(beta * x * x * (-x * x).exp(), 0.0)).collect();
        let ug = periodic_grid(512.0, 1024).unwrap();
        let a = build_uplus(&FilamentFunction { grid, g: g.clone() }, alpha, ug).unwrap();
        let scaled = g.iter().map(|z| z * lambda).collect();
        let b = build_uplus(&FilamentFunction { grid, g: scaled }, alpha, ug).unwrap();
        let top = a.u_plus.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let err = a.u_plus.iter().zip(&b.u_plus).map(|(x, y)| (x * lambda - y).norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-13 * top * lambda.abs());
    }

    #[test]
    fn assemble_and_extract_are_inverse(terms in smooth_field(), alpha in 0.0f64..1.0, t in 1e-3f64..10.0) {
        let grid = periodic_grid(40.0, 256).unwrap();
        let u = WaveField::from_fn(grid, 1.0 / t, |x| eval_field(&terms, x)).unwrap();
        let psi = assemble_psi(alpha, &u, t).unwrap();
        let back = extract_u(&psi, alpha, t).unwrap();
        let err = back.values.iter().zip(&u.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12);
    }

    #[test]
    fn hypothesis_norms_are_nonnegative(beta in 0.0f64..2.0, width in 0.5f64..3.0, bump in any::<bool>()) {
        let grid = Grid1D::symmetric(8.0, 2e-3).unwrap();
        let c = grid.nodes().iter().map(|&x| {
            if bump {
                let r = x / width;
                if r.abs() < 1.0 { beta * x * x * (1.0 - r * r).powi(4) } else { 0.0 }
            } else {
                beta * x * x * (-x * x).exp()
            }
        }).collect();
        let report = hypothesis_norms(&FrenetData { grid, c, tau: vec![0.0; grid.n], gamma: 0.0 });
        for e in &report.entries {
            prop_assert!(e.value >= 0.0 && e.value.is_finite(), "{:?}", e);
            prop_assert!(!e.suspect, "{:?}", e);
        }
    }

    #[test]
    fn csv_files_round_trip_bitwise(rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &["a", "b", "c"], &rows).unwrap();
        let (_, back) = read_csv(&p).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (x, y) in back.iter().flatten().zip(rows.iter().flatten()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
        prop_assert_eq!(csv_string(&["a", "b", "c"], &rows), csv_string(&["a", "b", "c"], &rows));
    }

    #[test]
    fn configs_survive_serialization(alpha in 0.0f64..1.5, beta in 0.0f64..1.0, n_exp in 5u32..18, per_decade in 1usize..40) {
        let text = format!(
            "kind = \"recover\"\nalpha = {alpha:?}\n[curvature]\nfamily = \"gauss2\"\nbeta = {beta:?}\n[grid]\nn = {}\n[time]\nper_decade = {per_decade}\n",
            1usize << n_exp
        );
        let cfg = ExperimentConfig::parse(&text, &[]).unwrap();
        prop_assert_eq!(cfg.alpha.to_bits(), alpha.to_bits());
        let again = ExperimentConfig::parse(&cfg.to_toml(), &[]).unwrap();
        prop_assert_eq!(again, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn frames_in_time_rotate_with_the_seed(r in rotation(), alpha in 0.1f64..0.6) {
        let src = SelfSimilarSource { alpha };
        let outputs = geometric_ladder(1e-2, 4e-2, 6);
        let march = TimeMarch::new(&outputs, 0.05).unwrap();
        let spec = SliceSpec { x_max: 0.3, d_out: 0.05, scaled_probes: vec![], ..SliceSpec::default() };
        let run = |seed: Frame| {
            let series = evolve_frame_time(&src, &march, 0.0, seed, seed.e2 * (2.0 * alpha * 0.1)).unwrap();
            (series.max_defect, build_frame_slices(&src, &series, &outputs, &spec).unwrap())
        };
        let (da, a) = run(Frame::canonical());
        let (db, b) = run(Frame::canonical().rotate(&r));
        prop_assert!(da <= 1e-9 && db <= 1e-9 && a.max_defect() <= 1e-9 && b.max_defect() <= 1e-9);
        for (sa, sb) in a.slices.iter().zip(&b.slices) {
            for (fa, fb) in sa.frames.iter().zip(&sb.frames) {
                let fr = fa.rotate(&r);
                prop_assert!((fr.t - fb.t).norm().max((fr.e1 - fb.e1).norm()).max((fr.e2 - fb.e2).norm()) <= 1e-10);
            }
        }
        let mn = modulated_normal(&b, alpha);
        for (row, s) in mn.values.iter().zip(&b.slices) {
            for (v, f) in row.iter().zip(&s.frames) {
                if let Some(v) = v {
                    let v: &CVec3 = v;
                    prop_assert!((v.norm_squared() - 2.0).abs() <= 1e-12);
                    prop_assert!(v.re.dot(&f.t).abs() <= 1e-9 && v.im.dot(&f.t).abs() <= 1e-9);
                }
            }
        }
    }
}
