mod common;

use std::collections::BTreeMap;

use homconc::concentration::*;
use homconc::fem::Region;
use homconc::geometry::{build_homogeneous, rasterize_schulgasser};
use homconc::macro_solver::{solve_homogenized, two_scale_reconstruction, MacroProblem};
use homconc::schulgasser::{lambda_moment, lb_factor, sampled_field};
use homconc::*;
use proptest::prelude::*;

fn laminate_solution() -> CorrectorSolution {
    solve_corrector(common::laminate(32), SolverOptions::default()).unwrap()
}

#[test]
fn numeric_laminate_moments() {
    let sol = laminate_solution();
    let m = FieldMoments::of_solution(&sol);
    let f2 = m.moment_power(&[1.0, 0.0], 2.0, None).unwrap().as_f64().sqrt();
    assert!((f2 - (10.0f64 / 9.0).sqrt()).abs() < 1e-8);
    let f0 = m.moment_power(&[1.0, 0.0], 2.0, Some(0)).unwrap().as_f64().sqrt();
    assert!((f0 - (8.0f64 / 9.0).sqrt()).abs() < 1e-8);
    assert!((m.sup_norm(&[1.0, 0.0], None).unwrap().as_f64() - 4.0 / 3.0).abs() < 1e-8);
}

#[test]
fn monotonicity_and_phase_decomposition() {
    let sol = laminate_solution();
    let numeric = FieldMoments::of_solution(&sol);
    let cell = SchulgasserCell::centered(0.35, 0.75).unwrap();
    let (field, labels) = sampled_field(&cell, 16, 12, 12).unwrap();
    let sampled = FieldMoments::new(&field, Some(&labels)).unwrap();
    let analytic = AnalyticMoments { cell: cell.clone(), integrand: AnalyticIntegrand::Direct };
    let cases: [(&dyn CellMoments, Vec<f64>); 3] =
        [(&numeric, vec![0.6, -0.8]), (&sampled, vec![0.0, 1.0, 0.0]), (&analytic, vec![1.0, 0.0, 0.0])];
    for (m, xi) in cases {
        let mut last = 0.0;
        for p in [2.0, 3.0, 4.0] {
            let whole = m.moment_power(&xi, p, None).unwrap().as_f64();
            let parts: f64 =
                (0..m.num_phases() as u8).map(|i| m.moment_power(&xi, p, Some(i)).unwrap().as_f64()).sum();
            assert!((whole - parts).abs() <= 1e-10 * whole);
            let fp = whole.powf(1.0 / p);
            assert!(fp >= last);
            last = fp;
            let sup = m.sup_norm(&xi, None).unwrap().as_f64();
            assert!(fp <= sup * (1.0 + 1e-12));
            for i in 0..m.num_phases() as u8 {
                assert!(m.moment_power(&xi, p, Some(i)).unwrap().as_f64() <= whole);
            }
        }
    }
}

#[test]
fn matrix_phase_of_dispersion_is_identity() {
    let cell = SchulgasserCell::centered(0.35, 0.75).unwrap();
    let a = AnalyticMoments { cell: cell.clone(), integrand: AnalyticIntegrand::Direct };
    for p in [2.0, 5.0, 9.0] {
        let v = a.moment_power(&[1.0, 0.0, 0.0], p, Some(0)).unwrap().as_f64().powf(1.0 / p);
        assert!((v - (1.0 - cell.theta()).powf(1.0 / p)).abs() < 1e-14);
    }
    assert!(a.sup_norm(&[1.0, 0.0, 0.0], None).unwrap().is_divergent());
    assert_eq!(a.sup_norm(&[1.0, 0.0, 0.0], Some(0)).unwrap(), MomentValue::Finite(1.0));
}

#[test]
fn analytic_report_matches_lambda_moment_roots() {
    let cell = SchulgasserCell::centered_with_fraction(0.5, 0.75).unwrap();
    let a = AnalyticMoments { cell: cell.clone(), integrand: AnalyticIntegrand::Lambda };
    let spec = MomentSpec { p_grid: vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0], phases: vec![], gradient: vec![1.0, 0.0, 0.0] };
    let report = concentration_report(&a, &spec).unwrap();
    assert_eq!(report.source, "analytic");
    for e in &report.entries {
        match lb_factor(&cell, e.p).unwrap() {
            MomentValue::Finite(v) => assert!((e.value.as_f64() - v).abs() < 1e-8),
            MomentValue::Divergent => assert!(e.value.is_divergent()),
        }
    }
    let csv = report.to_csv();
    assert!(csv.lines().any(|l| l == "6,-1,+inf,1,0"));
    let json = serde_json::to_string(&report).unwrap();
    let back: ConcentrationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn homogeneous_lower_bound_is_gradient_norm() {
    let problem =
        MacroProblem::uniform(&[1.0, 1.0], &[16, 16], common::diag(&[1.0, 1.0]), 1.0, common::dirichlet_strip(2, 0.0, 0.0))
            .unwrap();
    let sol = solve_homogenized(&problem, 1e-12).unwrap();
    let cell_sol = solve_corrector(build_homogeneous(Tensor2::identity(2), 8).unwrap(), SolverOptions::default()).unwrap();
    let m = FieldMoments::of_solution(&cell_sol);
    let cells: BTreeMap<usize, &dyn CellMoments> = BTreeMap::from([(0, &m as &dyn CellMoments)]);
    let region = Region::centered_half(&[1.0, 1.0]);
    let vol = sol.mesh().element_volume();
    for p in [2.0, 3.0, 4.0] {
        let lb = lower_bound_lp(&sol, &cells, p, &region, None).unwrap().as_f64();
        let direct: f64 = region
            .elements(sol.mesh())
            .iter()
            .map(|&e| vol * sol.grad(e).iter().map(|g| g * g).sum::<f64>().sqrt().powf(p))
            .sum::<f64>()
            .powf(1.0 / p);
        assert!((lb - direct).abs() < 1e-12);
    }
    let recon = two_scale_reconstruction(&sol, &BTreeMap::from([(0, cell_sol.clone())]), 40).unwrap();
    for v in recon.chunks(2) {
        assert!((v[0] - sol.grad(40)[0]).abs() < 1e-14 && (v[1] - sol.grad(40)[1]).abs() < 1e-14);
    }
    let empty: BTreeMap<usize, &dyn CellMoments> = BTreeMap::new();
    assert!(matches!(lower_bound_lp(&sol, &empty, 2.0, &region, None), Err(Error::Config(_))));
}

#[test]
fn dispersion_lower_bound_scales_the_gradient_norm() {
    let cell = SchulgasserCell::centered_with_fraction(0.5, 0.75).unwrap();
    let problem = MacroProblem::uniform(
        &[1.0, 1.0, 1.0],
        &[6, 6, 6],
        EffectiveTensor::identity(3),
        1.0,
        common::dirichlet_strip(3, 0.0, 0.0),
    )
    .unwrap();
    let sol = solve_homogenized(&problem, 1e-12).unwrap();
    let a = AnalyticMoments { cell: cell.clone(), integrand: AnalyticIntegrand::Lambda };
    let cells: BTreeMap<usize, &dyn CellMoments> = BTreeMap::from([(0, &a as &dyn CellMoments)]);
    let region = Region::centered_half(&[1.0, 1.0, 1.0]);
    let vol = sol.mesh().element_volume();
    for p in [2.0, 3.0, 5.0] {
        let norm: f64 = region
            .elements(sol.mesh())
            .iter()
            .map(|&e| vol * sol.grad(e).iter().map(|g| g * g).sum::<f64>().sqrt().powf(p))
            .sum::<f64>()
            .powf(1.0 / p);
        let lb = lower_bound_lp(&sol, &cells, p, &region, None).unwrap().as_f64();
        let factor = lb_factor(&cell, p).unwrap().as_f64();
        assert!((lb - factor * norm).abs() < 1e-12 * lb);
        let _ = lambda_moment(&cell, p).unwrap();
    }
    for p in [6.0, 8.0] {
        assert!(lower_bound_lp(&sol, &cells, p, &region, None).unwrap().is_divergent());
    }
}

#[test]
fn numeric_dispersion_supremum_grows_with_resolution() {
    let cell = SchulgasserCell::centered(0.35, 0.75).unwrap();
    let xi = [1.0, 0.0, 0.0];
    let sups: Vec<f64> = [16, 32]
        .iter()
        .map(|&n| {
            let sol = solve_corrector(rasterize_schulgasser(&cell, n).unwrap(), SolverOptions::default()).unwrap();
            FieldMoments::of_solution(&sol).sup_norm(&xi, None).unwrap().as_f64()
        })
        .collect();
    assert!(sups[1] > 1.2 * sups[0]);
}

proptest! {
    #[test]
    fn moments_are_homogeneous_and_above_jensen_floor(c in -3.0f64..3.0, a in 0.0f64..6.28, p in 2.0f64..8.0) {
        let values = [4.0 / 3.0, 0.1, -0.2, 1.0, 2.0 / 3.0, -0.1, 0.2, 1.0];
        let field = MatrixField::uniform(2, values.to_vec()).unwrap();
        let xi = [a.cos(), a.sin()];
        let scaled = [c * xi[0], c * xi[1]];
        let base = moment_fp(&field, &xi, p).unwrap();
        prop_assert!((moment_fp(&field, &scaled, p).unwrap() - c.abs() * base).abs() <= 1e-12 * (1.0 + base));
        // mean of P is I, so f_2 ≥ |ξ|
        prop_assert!(moment_fp(&field, &xi, 2.0).unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn chebyshev_tail_is_monotone_and_clamped(b in 0.0f64..5.0, t in 0.01f64..10.0, dt in 0.0f64..5.0, p in 2.0f64..6.0) {
        let v = MomentValue::Finite(b);
        let lo = chebyshev_tail(v, p, t, 0.25).unwrap();
        let hi = chebyshev_tail(v, p, t + dt, 0.25).unwrap();
        prop_assert!(hi <= lo && lo <= 0.25);
    }
}
