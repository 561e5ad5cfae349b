mod common;

use std::f64::consts::PI;

use gauss_quad::legendre::GaussLegendre;
use homconc::concentration::{moment_fp, phase_moment_fp, MomentValue};
use homconc::schulgasser::*;
use homconc::SchulgasserCell;
use nalgebra::{Matrix3, Vector3};
use rand::Rng;

fn cell() -> SchulgasserCell {
    SchulgasserCell::centered(0.35, 0.75).unwrap()
}

fn half_cell() -> SchulgasserCell {
    SchulgasserCell::centered_with_fraction(0.5, 0.75).unwrap()
}

/// Random points of the unit cell at least `gap` away from every ball
/// center and sphere.
fn random_points(seed: u64, count: usize, cell: &SchulgasserCell, gap: f64) -> Vec<[f64; 3]> {
    let mut rng = common::rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let y = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let ok = cell.crystallites().iter().all(|c| {
            let s = (0..3).map(|k| (y[k] - c.center[k]).powi(2)).sum::<f64>().sqrt();
            s > gap && (s - c.radius).abs() > gap
        });
        if ok {
            out.push(y);
        }
    }
    out
}

fn matrix(m: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(m)
}

#[test]
fn lambda_moment_matches_adaptive_radial_quadrature() {
    let c = half_cell();
    let ball = &c.crystallites()[0];
    // closer to p_c the integrand's mass sits within rounding distance of the
    // center, where |y − c| is no longer resolved in double precision
    for p in [2.0, 3.0, 4.0, 5.0] {
        // integrate λ(y)^{p/2} over spherical shells along a ray, s = r u²
        let dir = [0.48, -0.6, 0.64];
        let f = |u: f64| {
            let s = ball.radius * u * u;
            let y = [ball.center[0] + s * dir[0], ball.center[1] + s * dir[1], ball.center[2] + s * dir[2]];
            // points that round onto the center carry no weight
            let Ok(lam) = analytic_lambda(&c, &y) else { return 0.0 };
            4.0 * PI * s * s * lam.powf(0.5 * p) * 2.0 * ball.radius * u
        };
        let inside = quadrature::double_exponential::integrate(f, 0.0, 1.0, 1e-12).integral;
        let numeric = (1.0 - c.theta()) + inside;
        let closed = lambda_moment(&c, p).unwrap().finite().unwrap();
        assert!((numeric - closed).abs() < 1e-8, "p = {p}: {numeric} vs {closed}");
    }
    let m2 = lambda_moment(&c, 2.0).unwrap().finite().unwrap();
    assert!((m2 - 0.6875).abs() < 1e-12);
}

#[test]
fn lambda_moment_diverges_at_critical_exponent() {
    let c = half_cell();
    let grid = [2.0, 3.0, 4.0, 5.0, 5.5, 5.9];
    let values: Vec<f64> = grid.iter().map(|&p| lambda_moment(&c, p).unwrap().finite().unwrap()).collect();
    // α^p decays faster than the pole grows at first: the raw moment dips
    // before diverging, while its p-th root is increasing
    let expect = [0.6875, 0.625, 0.59375, 0.59375];
    for (v, e) in values.iter().zip(expect) {
        assert!((v - e).abs() < 1e-14);
    }
    assert!(values[5] > values[4] && values[4] > values[3]);
    let roots: Vec<f64> = grid.iter().map(|&p| lb_factor(&c, p).unwrap().finite().unwrap()).collect();
    assert!(roots.windows(2).all(|w| w[1] > w[0]));
    assert!(lambda_moment(&c, 5.9999).unwrap().as_f64() > 400.0);
    for p in [6.0, 6.5, 20.0] {
        assert_eq!(lambda_moment(&c, p).unwrap(), MomentValue::Divergent);
        assert_eq!(lb_factor(&c, p).unwrap(), MomentValue::Divergent);
    }
}

#[test]
fn lb_factor_values() {
    let f = lb_factor(&half_cell(), 2.0).unwrap().finite().unwrap();
    assert!((f - 0.829156197588849962).abs() < 1e-12);
    let tiny = SchulgasserCell::centered_with_fraction(1e-12, 0.75).unwrap();
    assert!((lb_factor(&tiny, 3.0).unwrap().finite().unwrap() - 1.0).abs() < 1e-10);
}

#[test]
fn temperature_gradient_matches_corrector_columns() {
    let c = cell();
    let h = 1e-6;
    for y in random_points(11, 100, &c, 0.02) {
        let p = analytic_corrector(&c, &y).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let (mut a, mut b) = (y, y);
                a[j] += h;
                b[j] -= h;
                let fd = (analytic_temperature(&c, i, &a).unwrap() - analytic_temperature(&c, i, &b).unwrap()) / (2.0 * h);
                // column i holds ∇Φ^i
                assert!((fd - p[j * 3 + i]).abs() < 1e-5, "y = {y:?}, i = {i}, j = {j}");
            }
        }
    }
}

#[test]
fn analytic_flux_is_divergence_free() {
    let c = cell();
    let h = 1e-5;
    let flux = |y: &[f64; 3], i: usize| -> Vector3<f64> {
        let a = c.conductivity(y).unwrap();
        let p = analytic_corrector(&c, y).unwrap();
        let col = Vector3::new(p[i], p[3 + i], p[6 + i]);
        let am = Matrix3::from_fn(|r, s| a.get(r, s));
        am * col
    };
    for y in random_points(12, 100, &c, 0.05) {
        for i in 0..3 {
            let mut div = 0.0;
            for k in 0..3 {
                let (mut a, mut b) = (y, y);
                a[k] += h;
                b[k] -= h;
                div += (flux(&a, i)[k] - flux(&b, i)[k]) / (2.0 * h);
            }
            assert!(div.abs() < 1e-4, "div = {div} at {y:?}");
        }
    }
}

#[test]
fn lambda_is_smallest_eigenvalue_of_ptp() {
    let c = cell();
    for y in random_points(13, 100, &c, 0.01) {
        let p = matrix(&analytic_corrector(&c, &y).unwrap());
        let ev = (p.transpose() * p).symmetric_eigenvalues();
        let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min - analytic_lambda(&c, &y).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn lambda_minorizes_the_corrector() {
    let c = cell();
    let mut rng = common::rng(14);
    for y in random_points(15, 200, &c, 0.01) {
        let eta = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let p = matrix(&analytic_corrector(&c, &y).unwrap());
        let lhs = analytic_lambda(&c, &y).unwrap() * eta.norm_squared();
        assert!(lhs <= (p * eta).norm_squared() * (1.0 + 1e-12));
    }
}

#[test]
fn radial_direction_is_an_eigenvector() {
    let c = cell();
    let ball = &c.crystallites()[0];
    let mut rng = common::rng(16);
    for _ in 0..10 {
        let s = rng.random_range(0.01..ball.radius);
        let n = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let y = [ball.center[0] + s * n[0], ball.center[1] + s * n[1], ball.center[2] + s * n[2]];
        let p = matrix(&analytic_corrector(&c, &y).unwrap());
        let a = c.alpha();
        let expect = n * (a * ball.radius.powf(1.0 - a) * s.powf(a - 1.0));
        assert!((p * n - expect).norm() < 1e-12);
    }
}

/// `∫_Q A P` by a product rule in `(s = r u², cos φ, azimuth)` inside the ball.
fn quadrature_effective(c: &SchulgasserCell, n: usize) -> Matrix3<f64> {
    let rule = GaussLegendre::new(n).unwrap();
    let ball = &c.crystallites()[0];
    let mut total = Matrix3::identity() * (1.0 - c.theta());
    let naz = 2 * n;
    for (u, wu) in rule.as_node_weight_pairs() {
        let u = 0.5 * (u + 1.0);
        let s = ball.radius * u * u;
        let jac = 0.5 * wu * 2.0 * ball.radius.powi(3) * u.powi(5);
        for (t, wt) in rule.as_node_weight_pairs() {
            let st = (1.0 - t * t).sqrt();
            for k in 0..naz {
                let phi = 2.0 * PI * (k as f64 + 0.5) / naz as f64;
                let y = [
                    ball.center[0] + s * st * phi.cos(),
                    ball.center[1] + s * st * phi.sin(),
                    ball.center[2] + s * t,
                ];
                let a = c.conductivity(&y).unwrap();
                let am = Matrix3::from_fn(|r, q| a.get(r, q));
                let p = matrix(&analytic_corrector(c, &y).unwrap());
                total += am * p * (jac * wt * 2.0 * PI / naz as f64);
            }
        }
    }
    total
}

#[test]
fn effective_tensor_is_identity_by_quadrature() {
    for c in [cell(), half_cell(), SchulgasserCell::centered(0.3, 0.625).unwrap()] {
        let ae = quadrature_effective(&c, 16);
        assert!((ae - Matrix3::identity()).abs().max() < 1e-8, "{ae}");
        assert_eq!(analytic_effective(&c).entries, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    }
    let empty = SchulgasserCell::new(vec![], 0.75).unwrap();
    assert_eq!(analytic_effective(&empty).max_abs_diff(&homconc::EffectiveTensor::identity(3)), 0.0);
}

#[test]
fn sampled_field_reproduces_direct_moment() {
    let c = cell();
    let (field, labels) = sampled_field(&c, 16, 12, 12).unwrap();
    let direct = direct_moment(&c, 2.0, None).unwrap().finite().unwrap().sqrt();
    assert!((moment_fp(&field, &[1.0, 0.0, 0.0], 2.0).unwrap() - direct).abs() < 1e-6);
    // matrix phase: P = I, so f_p^0 = (1 − θ)^{1/p}
    for p in [2.0, 3.0, 7.0] {
        let f0 = phase_moment_fp(&field, &labels, 0, &[1.0, 0.0, 0.0], p).unwrap();
        assert!((f0 - (1.0 - c.theta()).powf(1.0 / p)).abs() < 1e-12);
    }
}

#[test]
fn direct_moment_is_isotropic_and_finite_below_threshold() {
    let c = cell();
    let (field, _) = sampled_field(&c, 24, 16, 16).unwrap();
    let xi = [0.6, 0.0, 0.8];
    for p in [2.0, 3.0, 4.0] {
        let direct = direct_moment(&c, p, None).unwrap().finite().unwrap().powf(1.0 / p);
        let sampled = moment_fp(&field, &xi, p).unwrap();
        assert!((direct - sampled).abs() < 1e-6, "p = {p}");
    }
    assert!(direct_moment(&c, 6.0, None).unwrap().is_divergent());
    assert!(direct_moment(&c, 6.0, Some(0)).unwrap().finite().is_some());
}

#[test]
fn invariant_suite_passes_and_detects_perturbation() {
    let c = cell();
    let checks = verify_invariants(&c, c.lambda1(), 100);
    assert!(checks.iter().all(|k| k.passed), "{checks:#?}");
    let bad = verify_invariants(&c, c.lambda1() * 1.05, 100);
    let failed: Vec<&str> = bad.iter().filter(|k| !k.passed).map(|k| k.name.as_str()).collect();
    assert!(failed.contains(&"lambda1_identity"));
    assert!(failed.contains(&"flux_divergence"));
    assert!(failed.contains(&"effective_identity"));
}
