//! Closed-form solution of the crystallite dispersion.
//!
//! With `λ1 = 1/(2λ2 − 1)` and `α = 2λ2 − 1`, the cell temperature inside
//! crystallite `ℓ` is the radial power law
//! `Φ^i(y) = r^{1−α} |y − c|^{α−1} (y_i − c_i) + c_i`, which matches `y_i`
//! on the sphere, so the matrix never sees the inclusions and `A^E = I`.
//! Near a center `|∇Φ| ~ |y − c|^{α−1}` and the `p`-th moment of the
//! corrector is finite only below `p_c = 3/(2(1 − λ2))`.
//!
//! Moment integrals over a ball reduce to the radial factor
//! `∫_0^r s^{p(α−1)} s² ds = r^{3+p(α−1)} / (3 + p(α−1))` times an angular
//! average; `3 + p(α−1) = 2(1 − λ2)(p_c − p)`, which gives the pole at `p_c`.

use std::f64::consts::PI;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::cell_solver::EffectiveTensor;
use crate::concentration::MomentValue;
use crate::error::{invalid, Error, Result};
use crate::field::MatrixField;
use crate::geometry::{distance, SchulgasserCell};

/// Nodes of the polar-angle rule used for angular averages.
const ANGULAR_NODES: usize = 48;

/// Derived constants of a crystallite dispersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchulgasserAnalytics {
    pub cell: SchulgasserCell,
    pub alpha: f64,
    pub p_c: f64,
}

impl SchulgasserAnalytics {
    pub fn new(cell: SchulgasserCell) -> Result<Self> {
        cell.validate()?;
        let p_c = critical_exponent(cell.lambda2())?;
        Ok(Self { alpha: cell.alpha(), p_c, cell })
    }
}

/// `p_c = 3 / (2 (1 − λ2))` for `λ2 ∈ (1/2, 1)`.
pub fn critical_exponent(lambda2: f64) -> Result<f64> {
    if !(lambda2 > 0.5 && lambda2 < 1.0) {
        return invalid(format!("lambda2 must lie in (1/2, 1), got {lambda2}"));
    }
    Ok(3.0 / (2.0 * (1.0 - lambda2)))
}

/// Crystallite containing `y` and the distance to its center, rejecting
/// the center itself.
fn locate(cell: &SchulgasserCell, y: &[f64; 3]) -> Result<Option<(usize, f64)>> {
    match cell.locate(y) {
        None => Ok(None),
        Some(l) => {
            let s = distance(y, &cell.crystallites()[l].center);
            if s == 0.0 {
                Err(Error::SingularPoint(l))
            } else {
                Ok(Some((l, s)))
            }
        }
    }
}

/// Cell temperature `Φ^i(y) = w^i(y) + y_i`.
pub fn analytic_temperature(cell: &SchulgasserCell, i: usize, y: &[f64; 3]) -> Result<f64> {
    if i >= 3 {
        return invalid(format!("direction {i} out of range"));
    }
    match locate(cell, y)? {
        None => Ok(y[i]),
        Some((l, s)) => {
            let c = &cell.crystallites()[l];
            let a = cell.alpha();
            Ok(c.radius.powf(1.0 - a) * s.powf(a - 1.0) * (y[i] - c.center[i]) + c.center[i])
        }
    }
}

/// Corrector matrix `P(y)` (row-major 3×3); column `i` is `∇Φ^i`.
pub fn analytic_corrector(cell: &SchulgasserCell, y: &[f64; 3]) -> Result<[f64; 9]> {
    let mut m = [0.0; 9];
    match locate(cell, y)? {
        None => {
            m[0] = 1.0;
            m[4] = 1.0;
            m[8] = 1.0;
        }
        Some((l, s)) => {
            let c = &cell.crystallites()[l];
            let a = cell.alpha();
            let amp = c.radius.powf(1.0 - a) * s.powf(a - 1.0);
            let n: Vec<f64> = (0..3).map(|k| (y[k] - c.center[k]) / s).collect();
            for i in 0..3 {
                for j in 0..3 {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    m[i * 3 + j] = amp * (delta + (a - 1.0) * n[i] * n[j]);
                }
            }
        }
    }
    Ok(m)
}

/// Smallest eigenvalue of `Pᵀ(y) P(y)`: `α² r^{2(1−α)} |y − c|^{2(α−1)}` in a
/// crystallite, 1 in the matrix.
pub fn analytic_lambda(cell: &SchulgasserCell, y: &[f64; 3]) -> Result<f64> {
    match locate(cell, y)? {
        None => Ok(1.0),
        Some((l, s)) => {
            let r = cell.crystallites()[l].radius;
            let a = cell.alpha();
            Ok(a * a * r.powf(2.0 * (1.0 - a)) * s.powf(2.0 * (a - 1.0)))
        }
    }
}

/// Effective tensor of the dispersion: exactly the identity.
pub fn analytic_effective(_cell: &SchulgasserCell) -> EffectiveTensor {
    EffectiveTensor::identity(3)
}

/// `∫_B (s/r)^{p(α−1)} dy / |B|` for a ball, i.e. `p_c / (p_c − p)`.
fn radial_factor(cell: &SchulgasserCell, p: f64) -> MomentValue {
    let p_c = 3.0 / (2.0 * (1.0 - cell.lambda2()));
    if p >= p_c {
        MomentValue::Divergent
    } else {
        MomentValue::Finite(p_c / (p_c - p))
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 2.0) || !p.is_finite() {
        return invalid(format!("moment order must be finite and >= 2, got {p}"));
    }
    Ok(())
}

/// Cell factor `∫_Q λ(y)^{p/2} dy`: `(1 − θ) + Σ_ℓ θ_ℓ α^p p_c/(p_c − p)`
/// below `p_c`, divergent at and above it.
pub fn lambda_moment(cell: &SchulgasserCell, p: f64) -> Result<MomentValue> {
    check_p(p)?;
    let theta = cell.theta();
    Ok(radial_factor(cell, p).map(|f| (1.0 - theta) + theta * cell.alpha().powf(p) * f))
}

/// Multiplicative lower-bound factor `lambda_moment^{1/p}` on `‖∇u^H‖_{L^p(D)}`.
pub fn lb_factor(cell: &SchulgasserCell, p: f64) -> Result<MomentValue> {
    Ok(lambda_moment(cell, p)?.map(|m| m.powf(1.0 / p)))
}

/// Angular average `½ ∫_{−1}^{1} (1 + (α² − 1) t²)^{p/2} dt` of `|P n_ξ|^p`
/// over directions, with the radial amplitude factored out.
fn angular_average(alpha: f64, p: f64) -> f64 {
    let rule = GaussLegendre::new(ANGULAR_NODES).expect("rule degree is at least 2");
    0.5 * rule.integrate(-1.0, 1.0, |t| (1.0 + (alpha * alpha - 1.0) * t * t).powf(0.5 * p))
}

/// Exact `∫_Q χ |P(y) ξ|^p dy / |ξ|^p` for the dispersion (independent of the
/// direction of `ξ`), optionally restricted to the matrix (`0`) or the
/// crystallite aggregate (`1`).
pub fn direct_moment(cell: &SchulgasserCell, p: f64, phase: Option<u8>) -> Result<MomentValue> {
    check_p(p)?;
    let theta = cell.theta();
    let matrix = 1.0 - theta;
    let balls = radial_factor(cell, p).map(|f| theta * f * angular_average(cell.alpha(), p));
    Ok(match phase {
        Some(0) => MomentValue::Finite(matrix),
        Some(1) => balls,
        None => balls.map(|b| b + matrix),
        Some(i) => return invalid(format!("phase {i} does not exist in a two-phase dispersion")),
    })
}

/// Same restriction as [`direct_moment`] applied to the λ-based lower bound.
pub fn lambda_moment_phase(cell: &SchulgasserCell, p: f64, phase: Option<u8>) -> Result<MomentValue> {
    check_p(p)?;
    let theta = cell.theta();
    let balls = radial_factor(cell, p).map(|f| theta * cell.alpha().powf(p) * f);
    Ok(match phase {
        Some(0) => MomentValue::Finite(1.0 - theta),
        Some(1) => balls,
        None => balls.map(|b| b + 1.0 - theta),
        Some(i) => return invalid(format!("phase {i} does not exist in a two-phase dispersion")),
    })
}

/// Analytic corrector sampled on a product rule inside each crystallite plus
/// one matrix point of weight `1 − θ` (where `P = I`).
///
/// The radius is mapped as `s = r u²` with Gauss–Legendre nodes in `u`, the
/// polar angle uses Gauss–Legendre in `cos φ` and the azimuth a uniform rule.
/// Returns the weighted field and the phase label of each sample.
pub fn sampled_field(
    cell: &SchulgasserCell,
    radial: usize,
    polar: usize,
    azimuthal: usize,
) -> Result<(MatrixField, Vec<u8>)> {
    if radial < 2 || polar < 2 || azimuthal < 1 {
        return invalid("quadrature needs at least 2 radial, 2 polar and 1 azimuthal nodes");
    }
    let ur = GaussLegendre::new(radial).expect("degree checked");
    let tr = GaussLegendre::new(polar).expect("degree checked");
    let mut values = Vec::new();
    let mut weights = Vec::new();
    let mut labels = Vec::new();
    let dphi = 2.0 * PI / azimuthal as f64;
    for c in cell.crystallites() {
        for &(u, wu) in ur.as_node_weight_pairs() {
            // map [−1, 1] → [0, 1]
            let u = 0.5 * (u + 1.0);
            let wu = 0.5 * wu;
            let s = c.radius * u * u;
            let jac = 2.0 * c.radius.powi(3) * u.powi(5);
            for &(t, wt) in tr.as_node_weight_pairs() {
                let sin = (1.0 - t * t).sqrt();
                for k in 0..azimuthal {
                    let phi = (k as f64 + 0.5) * dphi;
                    let y = [
                        c.center[0] + s * sin * phi.cos(),
                        c.center[1] + s * sin * phi.sin(),
                        c.center[2] + s * t,
                    ];
                    values.extend_from_slice(&analytic_corrector(cell, &y)?);
                    weights.push(jac * wu * wt * dphi);
                    labels.push(1);
                }
            }
        }
    }
    values.extend_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    weights.push(1.0 - cell.theta());
    labels.push(0);
    Ok((MatrixField::weighted(3, values, weights)?, labels))
}

/// Outcome of one oracle self-consistency check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    /// Worst deviation observed.
    pub value: f64,
    pub tolerance: f64,
}

impl OracleCheck {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), passed: value <= tolerance, value, tolerance }
    }
}

/// Deterministic points of the unit cell (additive recurrence with the
/// plastic-number generator) kept `gap` away from centers and spheres.
fn sample_points(cell: &SchulgasserCell, count: usize, gap: f64) -> Vec<[f64; 3]> {
    let g = 1.220_744_084_605_759_5_f64;
    let step = [1.0 / g, 1.0 / (g * g), 1.0 / (g * g * g)];
    let mut out = Vec::with_capacity(count);
    let mut k = 0u64;
    while out.len() < count {
        k += 1;
        let y: [f64; 3] = std::array::from_fn(|i| (0.5 + k as f64 * step[i]).fract());
        let clear = cell.crystallites().iter().all(|c| {
            let s = distance(&y, &c.center);
            s > gap && (s - c.radius).abs() > gap
        });
        if clear {
            out.push(y);
        }
    }
    out
}

/// Flux `A(y) P(y) e^i` with crystallite conductivity `λ1 n⊗n + λ2 (I − n⊗n)`.
fn flux(cell: &SchulgasserCell, lambda1: f64, y: &[f64; 3], i: usize) -> Result<[f64; 3]> {
    let p = analytic_corrector(cell, y)?;
    let col = [p[i], p[3 + i], p[6 + i]];
    let a = match cell.locate(y) {
        None => return Ok(col),
        Some(l) => {
            let c = &cell.crystallites()[l];
            let s = distance(y, &c.center);
            let n: Vec<f64> = (0..3).map(|k| (y[k] - c.center[k]) / s).collect();
            crate::tensor::Tensor2::uniaxial(&n, lambda1, cell.lambda2())
        }
    };
    let mut out = [0.0; 3];
    a.apply(&col, &mut out);
    Ok(out)
}

fn smallest_eigenvalue_ptp(p: &[f64; 9]) -> f64 {
    let m = nalgebra::Matrix3::from_row_slice(p);
    (m.transpose() * m).symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Self-consistency checks of the closed forms, with the crystallite
/// conductivity `λ1` supplied separately so that a perturbed value is caught.
pub fn verify_invariants(cell: &SchulgasserCell, lambda1: f64, points: usize) -> Vec<OracleCheck> {
    let mut checks = vec![OracleCheck::new(
        "lambda1_identity",
        (lambda1 * (2.0 * cell.lambda2() - 1.0) - 1.0).abs(),
        1e-12,
    )];
    let worst = |f: &dyn Fn(&[f64; 3]) -> Result<f64>, gap: f64| -> f64 {
        sample_points(cell, points, gap)
            .iter()
            .map(|y| f(y).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    };

    let h = 1e-6;
    checks.push(OracleCheck::new(
        "temperature_gradient",
        worst(
            &|y| {
                let p = analytic_corrector(cell, y)?;
                let mut err: f64 = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        let (mut a, mut b) = (*y, *y);
                        a[j] += h;
                        b[j] -= h;
                        let fd = (analytic_temperature(cell, i, &a)? - analytic_temperature(cell, i, &b)?) / (2.0 * h);
                        err = err.max((fd - p[j * 3 + i]).abs());
                    }
                }
                Ok(err)
            },
            0.02,
        ),
        1e-5,
    ));

    let h = 1e-5;
    checks.push(OracleCheck::new(
        "flux_divergence",
        worst(
            &|y| {
                let mut err: f64 = 0.0;
                for i in 0..3 {
                    let mut div = 0.0;
                    for k in 0..3 {
                        let (mut a, mut b) = (*y, *y);
                        a[k] += h;
                        b[k] -= h;
                        div += (flux(cell, lambda1, &a, i)?[k] - flux(cell, lambda1, &b, i)?[k]) / (2.0 * h);
                    }
                    err = err.max(div.abs());
                }
                Ok(err)
            },
            0.05,
        ),
        1e-4,
    ));

    checks.push(OracleCheck::new(
        "lambda_eigenvalue",
        worst(&|y| Ok((smallest_eigenvalue_ptp(&analytic_corrector(cell, y)?) - analytic_lambda(cell, y)?).abs()), 0.01),
        1e-12,
    ));

    // λ|η|² ≤ |Pη|² on the coordinate and diagonal directions
    checks.push(OracleCheck::new(
        "lambda_minorant",
        worst(
            &|y| {
                let p = analytic_corrector(cell, y)?;
                let lam = analytic_lambda(cell, y)?;
                let dirs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0], [1.0, -2.0, 0.5]];
                let mut excess: f64 = 0.0;
                for e in dirs {
                    let pe: Vec<f64> = (0..3).map(|i| (0..3).map(|j| p[i * 3 + j] * e[j]).sum()).collect();
                    let lhs = lam * e.iter().map(|x| x * x).sum::<f64>();
                    let rhs: f64 = pe.iter().map(|x| x * x).sum();
                    excess = excess.max((lhs - rhs) / rhs);
                }
                Ok(excess.max(0.0))
            },
            0.01,
        ),
        1e-12,
    ));

    checks.push(OracleCheck::new("effective_identity", effective_by_quadrature(cell, lambda1, 16), 1e-8));

    checks.push(OracleCheck::new("lambda_moment_quadrature", lambda_moment_by_quadrature(cell), 1e-8));
    checks
}

/// `max |∫_Q A P − I|` by a radial–angular product rule.
fn effective_by_quadrature(cell: &SchulgasserCell, lambda1: f64, n: usize) -> f64 {
    let rule = GaussLegendre::new(n).expect("degree checked");
    let mut total = [[0.0; 3]; 3];
    for (i, row) in total.iter_mut().enumerate() {
        row[i] = 1.0 - cell.theta();
    }
    let naz = 2 * n;
    let dphi = 2.0 * PI / naz as f64;
    for c in cell.crystallites() {
        for &(u, wu) in rule.as_node_weight_pairs() {
            let u = 0.5 * (u + 1.0);
            let s = c.radius * u * u;
            let w_r = wu * c.radius.powi(3) * u.powi(5);
            for &(t, wt) in rule.as_node_weight_pairs() {
                let st = (1.0 - t * t).sqrt();
                for k in 0..naz {
                    let phi = (k as f64 + 0.5) * dphi;
                    let y = [c.center[0] + s * st * phi.cos(), c.center[1] + s * st * phi.sin(), c.center[2] + s * t];
                    for i in 0..3 {
                        let f = flux(cell, lambda1, &y, i).unwrap_or([f64::NAN; 3]);
                        for j in 0..3 {
                            total[j][i] += f[j] * w_r * wt * dphi;
                        }
                    }
                }
            }
        }
    }
    let mut err: f64 = 0.0;
    for (i, row) in total.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((v - target).abs());
        }
    }
    if err.is_nan() { f64::INFINITY } else { err }
}

/// `|∫_Q λ^{p/2} − lambda_moment|` at `p = 2, 3, 4` (when below the
/// threshold) by composite Gauss–Legendre along a ray, on radial shells
/// graded geometrically toward the center.
fn lambda_moment_by_quadrature(cell: &SchulgasserCell) -> f64 {
    let rule = GaussLegendre::new(16).expect("degree checked");
    let mut err: f64 = 0.0;
    for p in [2.0, 3.0, 4.0] {
        let Ok(MomentValue::Finite(closed)) = lambda_moment(cell, p) else { continue };
        let mut numeric = 1.0 - cell.theta();
        for c in cell.crystallites() {
            let f = |s: f64| {
                let y = [c.center[0] + s, c.center[1], c.center[2]];
                4.0 * PI * s * s * analytic_lambda(cell, &y).unwrap_or(f64::NAN).powf(0.5 * p)
            };
            let mut shells = Vec::with_capacity(80);
            let mut hi = c.radius;
            for _ in 0..80 {
                let lo = 0.5 * hi;
                shells.push(rule.integrate(lo, hi, f));
                hi = lo;
            }
            numeric += crate::reduce::sum(&shells);
        }
        err = err.max((numeric - closed).abs());
    }
    if err.is_nan() { f64::INFINITY } else { err }
}
