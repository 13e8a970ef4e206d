use std::f64::consts::PI;

use ndarray::Array2;
use proptest::prelude::*;
use sfl_core::dst::sine_matrix;
use sfl_core::harness::{compute_rates, render_report, run_convergence, Norm, ProblemConfig, ReportFormat, StudyConfig, SweepAxis};
use sfl_core::problems::{caputo_power, example_4_4, TimeProfile};
use sfl_core::{
    apply_fractional_op, build_h, direct_l1_reference, discrete_l2_norm, discrete_max_norm, dst_nd,
    fast_l1_scalar, idst_nd, mode_apply, DstPlan, EvolutionParams, EvolutionSolver, FastL1, Grid,
    RhsMode, SchemeKind, TensorField,
};

fn scheme() -> impl Strategy<Value = SchemeKind> {
    prop_oneof![Just(SchemeKind::Fem), Just(SchemeKind::Cdm4), Just(SchemeKind::Fd2)]
}

/// Interval counts per axis for a grid of dimension 1..=3.
fn counts() -> impl Strategy<Value = Vec<usize>> {
    (1usize..=3).prop_flat_map(|d| {
        let max = [40, 14, 7][d - 1];
        prop::collection::vec(2usize..=max, d)
    })
}

fn grid_and_values() -> impl Strategy<Value = (Vec<usize>, Vec<f64>, Vec<f64>)> {
    counts().prop_flat_map(|c| {
        let len: usize = c.iter().map(|n| n - 1).product();
        (
            Just(c),
            prop::collection::vec(-1.0f64..1.0, len),
            prop::collection::vec(-1.0f64..1.0, len),
        )
    })
}

fn unit_grid(counts: &[usize]) -> Grid {
    Grid::new(&vec![(0.0, 1.0); counts.len()], counts).unwrap()
}

fn field(grid: &Grid, values: &[f64]) -> TensorField {
    TensorField::from_vec(grid, values.to_vec()).unwrap()
}

fn rel_diff(a: &TensorField, b: &TensorField) -> f64 {
    a.axpy(-1.0, b).unwrap().max_norm() / b.max_norm().max(f64::MIN_POSITIVE)
}

fn matrix(n: usize, seed: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| ((i * 7 + j * 3) as f64 + seed).sin())
}

fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (m, n) = (a.nrows(), b.nrows());
    Array2::from_shape_fn((m * n, m * n), |(r, c)| a[[r / n, c / n]] * b[[r % n, c % n]])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mode_apply_is_linear((c, u, v) in grid_and_values(), a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0.0f64..6.0) {
        let grid = unit_grid(&c);
        let (u, v) = (field(&grid, &u), field(&grid, &v));
        for axis in 0..c.len() {
            let w = matrix(c[axis] - 1, seed);
            let combined = u.scaled(a).axpy(b, &v).unwrap();
            let lhs = mode_apply(&w, &combined, axis).unwrap();
            let rhs = mode_apply(&w, &u, axis).unwrap().scaled(a)
                .axpy(b, &mode_apply(&w, &v, axis).unwrap()).unwrap();
            prop_assert!(lhs.axpy(-1.0, &rhs).unwrap().max_norm() <= 1e-13 * (1.0 + rhs.max_norm()));
        }
    }

    #[test]
    fn mode_apply_commutes_across_axes((c, u, _) in grid_and_values(), s1 in 0.0f64..6.0, s2 in 0.0f64..6.0) {
        prop_assume!(c.len() >= 2);
        let grid = unit_grid(&c);
        let u = field(&grid, &u);
        let (w0, w1) = (matrix(c[0] - 1, s1), matrix(c[1] - 1, s2));
        let a = mode_apply(&w1, &mode_apply(&w0, &u, 0).unwrap(), 1).unwrap();
        let b = mode_apply(&w0, &mode_apply(&w1, &u, 1).unwrap(), 0).unwrap();
        prop_assert!(a.axpy(-1.0, &b).unwrap().max_norm() <= 1e-13 * (1.0 + a.max_norm()));
    }

    #[test]
    fn mode_apply_matches_kronecker_action(n0 in 2usize..=5, n1 in 2usize..=5, s1 in 0.0f64..6.0, s2 in 0.0f64..6.0,
                                           values in prop::collection::vec(-1.0f64..1.0, 16)) {
        let grid = unit_grid(&[n0, n1]);
        let len = (n0 - 1) * (n1 - 1);
        let u = field(&grid, &values[..len]);
        let (w0, w1) = (matrix(n0 - 1, s1), matrix(n1 - 1, s2));
        let fast = mode_apply(&w1, &mode_apply(&w0, &u, 0).unwrap(), 1).unwrap();
        let dense = kron(&w0, &w1).dot(&ndarray::Array1::from(values[..len].to_vec()));
        for (a, b) in fast.as_slice().iter().zip(dense.iter()) {
            prop_assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn norms_are_absolutely_homogeneous((c, u, _) in grid_and_values(), k in -50.0f64..50.0) {
        let grid = unit_grid(&c);
        let u = field(&grid, &u);
        let cu = u.scaled(k);
        for (a, b) in [
            (discrete_l2_norm(&cu), discrete_l2_norm(&u)),
            (discrete_max_norm(&cu), discrete_max_norm(&u)),
        ] {
            prop_assert!((a - k.abs() * b).abs() <= 1e-12 * (1.0 + a));
        }
    }

    #[test]
    fn dst_is_linear((c, u, v) in grid_and_values(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let grid = unit_grid(&c);
        let plan = DstPlan::for_grid(&grid).unwrap();
        let (u, v) = (field(&grid, &u), field(&grid, &v));
        let combined = u.scaled(a).axpy(b, &v).unwrap();
        for transform in [dst_nd, idst_nd] {
            let lhs = transform(&combined, &plan).unwrap();
            let rhs = transform(&u, &plan).unwrap().scaled(a).axpy(b, &transform(&v, &plan).unwrap()).unwrap();
            prop_assert!(lhs.axpy(-1.0, &rhs).unwrap().max_norm() <= 1e-13 * (1.0 + rhs.max_norm()));
        }
    }

    #[test]
    fn dst_roundtrip((c, u, _) in grid_and_values()) {
        let grid = unit_grid(&c);
        let plan = DstPlan::for_grid(&grid).unwrap();
        let u = field(&grid, &u);
        let back = idst_nd(&dst_nd(&u, &plan).unwrap(), &plan).unwrap();
        prop_assert!(back.axpy(-1.0, &u).unwrap().max_norm() <= 1e-12);
    }

    #[test]
    fn dst_matches_sine_matrix_composition((c, u, _) in grid_and_values()) {
        prop_assume!(c.iter().all(|&n| n <= 8));
        let grid = unit_grid(&c);
        let plan = DstPlan::for_grid(&grid).unwrap();
        let u = field(&grid, &u);
        let mut dense = u.clone();
        for (axis, &n) in c.iter().enumerate() {
            dense = mode_apply(&sine_matrix(n), &dense, axis).unwrap();
        }
        prop_assert!(dst_nd(&u, &plan).unwrap().axpy(-1.0, &dense).unwrap().max_norm() <= 1e-12);
    }

    #[test]
    fn fractional_op_is_symmetric_and_positive((c, u, v) in grid_and_values(), kind in scheme(),
                                               s in 0.1f64..1.9, gamma in 0.0f64..3.0) {
        let grid = unit_grid(&c);
        let plan = DstPlan::for_grid(&grid).unwrap();
        let h = build_h(&grid, kind, s, gamma).unwrap();
        let (u, v) = (field(&grid, &u), field(&grid, &v));
        let (au, av) = (apply_fractional_op(&u, &h, &plan).unwrap(), apply_fractional_op(&v, &h, &plan).unwrap());
        let (lhs, rhs) = (au.dot(&v).unwrap(), u.dot(&av).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-11 * au.l2_norm() * v.l2_norm());
        prop_assume!(u.max_norm() > 1e-3);
        prop_assert!(au.dot(&u).unwrap() > 0.0);
    }

    #[test]
    fn fractional_op_semigroup((c, u, _) in grid_and_values(), kind in scheme(),
                               s1 in 0.05f64..1.0, s2 in 0.05f64..1.0, gamma in 0.0f64..3.0) {
        let grid = unit_grid(&c);
        let plan = DstPlan::for_grid(&grid).unwrap();
        let u = field(&grid, &u);
        let op = |s: f64, x: &TensorField| apply_fractional_op(x, &build_h(&grid, kind, s, gamma).unwrap(), &plan).unwrap();
        let twice = op(s2, &op(s1, &u));
        let once = op(s1 + s2, &u);
        prop_assert!(rel_diff(&twice, &once) <= 1e-10);
    }

    #[test]
    fn fd2_unit_power_is_three_point_stencil(n in 3usize..60, values in prop::collection::vec(-1.0f64..1.0, 59),
                                              a in -2.0f64..0.0, len in 0.5f64..3.0) {
        let grid = Grid::new(&[(a, a + len)], &[n]).unwrap();
        let h = len / n as f64;
        let u = &values[..n - 1];
        let plan = DstPlan::for_grid(&grid).unwrap();
        let sym = build_h(&grid, SchemeKind::Fd2, 1.0, 0.0).unwrap();
        let out = apply_fractional_op(&field(&grid, u), &sym, &plan).unwrap();
        let at = |i: isize| if i < 0 || i as usize >= u.len() { 0.0 } else { u[i as usize] };
        let scale = 4.0 / (h * h);
        for (i, &got) in out.as_slice().iter().enumerate() {
            let i = i as isize;
            let expected = (-at(i - 1) + 2.0 * at(i) - at(i + 1)) / (h * h);
            prop_assert!((got - expected).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn fast_l1_matches_direct_l1(alpha in 0.05f64..0.99, n in 2usize..=200, freq in 0.0f64..6.0, shift in -1.0f64..1.0) {
        let dt = 1.0 / n as f64;
        let values: Vec<f64> = (0..=n).map(|k| {
            let t = k as f64 * dt;
            (freq * t + shift).sin() + t * t
        }).collect();
        let fast = fast_l1_scalar(&values, alpha, dt, 1.0).unwrap();
        for k in 1..=n {
            prop_assert!((fast[k - 1] - direct_l1_reference(&values, alpha, dt, k)).abs() <= 1e-8);
        }
    }

    #[test]
    fn g1_equals_initial_and_history_starts_at_zero((c, u, _) in grid_and_values(), alpha in 0.05f64..=1.0, steps in 4usize..400) {
        let grid = unit_grid(&c);
        let u0 = field(&grid, &u);
        let fast = FastL1::new(alpha, 1.0 / steps as f64, 1.0).unwrap();
        let state = fast.init_state(u0.clone());
        prop_assert!(state.history().iter().all(|&y| y == 0.0));
        prop_assert!(fast.assemble_g(&state, 1).axpy(-1.0, &u0).unwrap().max_norm() <= 1e-15 * (1.0 + u0.max_norm()));
    }

    #[test]
    fn state_size_does_not_grow(n in 4usize..40, alpha in 0.1f64..1.0, steps in 2usize..30) {
        let grid = Grid::unit(1, n).unwrap();
        let params = EvolutionParams {
            kind: SchemeKind::Fd2, s: 0.5, gamma: 0.0, kappa: 1.0, alpha,
            dt: 1.0 / 64.0, t_final: 1.0, rhs_mode: RhsMode::Nodal,
        };
        let mut solver = EvolutionSolver::new(&grid, params, TensorField::constant(&grid, 1.0)).unwrap();
        let before = solver.state().memory_bytes();
        let rhs = TensorField::constant(&grid, 0.25);
        for _ in 0..steps {
            solver.step(&rhs).unwrap();
            prop_assert_eq!(solver.state().memory_bytes(), before);
        }
    }

    #[test]
    fn manufactured_solution_satisfies_its_equation(s in 0.1f64..2.0, alpha in 0.1f64..1.0, linear in any::<bool>(),
                                                   x0 in 0.0f64..1.0, x1 in 0.0f64..1.0, t in 0.0f64..1.0) {
        let g = if linear { TimeProfile::Linear } else { TimeProfile::Power15 };
        let spec = example_4_4(g, s, alpha);
        let exact = spec.exact.clone().unwrap();
        let x = [x0, x1];
        let lambda = (2.0 * PI * PI + spec.gamma).powf(s);
        let phi = (PI * x0).sin() * (PI * x1).sin();
        let dg = caputo_power(g.exponent(), alpha, t).unwrap();
        let lhs = dg * phi / lambda + spec.kappa * lambda * exact(&x, t);
        prop_assert!((lhs - (spec.source)(&x, t)).abs() <= 1e-12);
        let u0 = (spec.initial)(&x);
        prop_assert_eq!(u0 - exact(&x, 0.0), 0.0);
    }

    #[test]
    fn rates_are_scale_invariant(errors in prop::collection::vec(1e-12f64..1.0, 2..8), k in 1e-6f64..1e6) {
        let base = compute_rates(&errors).unwrap();
        let scaled: Vec<f64> = errors.iter().map(|e| e * k).collect();
        for (a, b) in base.iter().zip(compute_rates(&scaled).unwrap()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

fn small_study() -> StudyConfig {
    StudyConfig {
        title: "determinism".into(),
        problem: ProblemConfig::Smooth { d: 2, n: 1, kind: SchemeKind::Cdm4, rhs_mode: None },
        pairs: vec![[0.5, 1.0], [0.9, 0.0]],
        sweep: SweepAxis::Space,
        sizes: vec![4, 8, 16],
        full_sizes: None,
        nx: None,
        full_nx: None,
        nt: None,
        norm: Norm::L2,
        threads: None,
        seed: Some(1),
        output: None,
        formats: vec![],
        rate_checks: vec![],
    }
}

#[test]
fn emitted_rates_match_neighbouring_errors() {
    let table = run_convergence(&small_study()).unwrap();
    for (_, rows) in table.groups() {
        assert!(rows[0].rate.is_none());
        for w in rows.windows(2) {
            let expected = (w[0].error.unwrap() / w[1].error.unwrap()).log2();
            assert!((w[1].rate.unwrap() - expected).abs() <= 1e-9);
        }
    }
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let a = run_convergence(&small_study()).unwrap();
    let b = run_convergence(&small_study()).unwrap();
    for format in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown] {
        assert_eq!(render_report(&a, format).unwrap(), render_report(&b, format).unwrap());
    }
}
