//! Field-concentration moments of corrector fields and the bounds built on them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cell_solver::CorrectorSolution;
use crate::error::{invalid, Error, Result};
use crate::fem::Region;
use crate::field::MatrixField;
use crate::geometry::SchulgasserCell;
use crate::macro_solver::MacroSolution;
use crate::reduce::{sum, tree_max, tree_sum};
use crate::schulgasser;

/// A moment that is either finite or flagged as divergent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentValue {
    Finite(f64),
    Divergent,
}

impl MomentValue {
    pub fn is_divergent(&self) -> bool {
        matches!(self, MomentValue::Divergent)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            MomentValue::Finite(v) => Some(v),
            MomentValue::Divergent => None,
        }
    }

    /// `+∞` for divergent values.
    pub fn as_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    pub fn map(self, f: impl FnOnce(f64) -> f64) -> Self {
        match self {
            MomentValue::Finite(v) => MomentValue::Finite(f(v)),
            MomentValue::Divergent => MomentValue::Divergent,
        }
    }

    /// CSV cell: the number, or the literal `+inf`.
    pub fn csv_cell(&self) -> String {
        match self {
            MomentValue::Finite(v) => format!("{v:.17e}"),
            MomentValue::Divergent => "+inf".to_string(),
        }
    }
}

/// Cell-level moment integrals `∫_Q χ_i |P(y) ξ|^p dy` of a corrector field.
pub trait CellMoments: Sync {
    fn dim(&self) -> usize;

    fn num_phases(&self) -> usize;

    /// `∫_Q χ |P ξ|^p dy` (the `p`-th power, not its root); `phase = None`
    /// integrates over the whole cell.
    fn moment_power(&self, xi: &[f64], p: f64, phase: Option<u8>) -> Result<MomentValue>;

    /// Supremum of `|P ξ|` over the (phase-restricted) cell.
    fn sup_norm(&self, xi: &[f64], phase: Option<u8>) -> Result<MomentValue>;

    /// Grid resolution for sampled fields, `None` for closed forms.
    fn resolution(&self) -> Option<usize> {
        None
    }

    fn source(&self) -> &'static str;
}

fn check_order(p: f64) -> Result<()> {
    if !(p >= 2.0) || !p.is_finite() {
        return invalid(format!("moment order must be finite and >= 2, got {p}"));
    }
    Ok(())
}

fn check_xi(xi: &[f64], dim: usize) -> Result<()> {
    if xi.len() != dim || xi.iter().any(|x| !x.is_finite()) {
        return invalid(format!("gradient must be a finite {dim}-vector"));
    }
    Ok(())
}

/// A sampled corrector field with optional phase labels.
#[derive(Debug, Clone, Copy)]
pub struct FieldMoments<'a> {
    pub field: &'a MatrixField,
    pub labels: Option<&'a [u8]>,
    pub num_phases: usize,
    pub resolution: Option<usize>,
}

impl<'a> FieldMoments<'a> {
    pub fn new(field: &'a MatrixField, labels: Option<&'a [u8]>) -> Result<Self> {
        let num_phases = match labels {
            Some(l) if l.len() != field.len() => {
                return invalid("one phase label per sample point is required");
            }
            Some(l) => l.iter().copied().max().map_or(1, |m| m as usize + 1),
            None => 1,
        };
        Ok(Self { field, labels, num_phases, resolution: None })
    }

    pub fn of_solution(sol: &'a CorrectorSolution) -> Self {
        Self {
            field: sol.p_field(),
            labels: Some(sol.grid().phases()),
            num_phases: sol.grid().num_phases(),
            resolution: Some(sol.grid().resolution()),
        }
    }

    fn selected(&self, k: usize, phase: Option<u8>) -> bool {
        match (phase, self.labels) {
            (None, _) => true,
            (Some(i), Some(l)) => l[k] == i,
            (Some(i), None) => i == 0,
        }
    }

    fn check_phase(&self, phase: Option<u8>) -> Result<()> {
        match phase {
            Some(i) if i as usize >= self.num_phases => {
                invalid(format!("phase {i} out of range ({} phases)", self.num_phases))
            }
            _ => Ok(()),
        }
    }
}

impl CellMoments for FieldMoments<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn num_phases(&self) -> usize {
        self.num_phases
    }

    fn moment_power(&self, xi: &[f64], p: f64, phase: Option<u8>) -> Result<MomentValue> {
        check_order(p)?;
        check_xi(xi, self.dim())?;
        self.check_phase(phase)?;
        let f = self.field;
        Ok(MomentValue::Finite(tree_sum(f.len(), |k| {
            if self.selected(k, phase) {
                f.weight(k) * f.norm_applied(k, xi).powf(p)
            } else {
                0.0
            }
        })))
    }

    fn sup_norm(&self, xi: &[f64], phase: Option<u8>) -> Result<MomentValue> {
        check_xi(xi, self.dim())?;
        self.check_phase(phase)?;
        let f = self.field;
        Ok(MomentValue::Finite(tree_max(f.len(), |k| {
            if self.selected(k, phase) && f.weight(k) > 0.0 {
                f.norm_applied(k, xi)
            } else {
                0.0
            }
        })))
    }

    fn resolution(&self) -> Option<usize> {
        self.resolution
    }

    fn source(&self) -> &'static str {
        "numeric"
    }
}

/// Which closed-form integrand to use for a crystallite dispersion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticIntegrand {
    /// `|P(y) ξ|^p` itself.
    Direct,
    /// The eigenvalue minorant `λ(y)^{p/2} |ξ|^p`.
    Lambda,
}

/// Closed-form moments of a crystallite dispersion.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticMoments {
    pub cell: SchulgasserCell,
    pub integrand: AnalyticIntegrand,
}

impl CellMoments for AnalyticMoments {
    fn dim(&self) -> usize {
        3
    }

    fn num_phases(&self) -> usize {
        2
    }

    fn moment_power(&self, xi: &[f64], p: f64, phase: Option<u8>) -> Result<MomentValue> {
        check_xi(xi, 3)?;
        let scale = xi.iter().map(|x| x * x).sum::<f64>().sqrt().powf(p);
        let m = match self.integrand {
            AnalyticIntegrand::Direct => schulgasser::direct_moment(&self.cell, p, phase)?,
            AnalyticIntegrand::Lambda => schulgasser::lambda_moment_phase(&self.cell, p, phase)?,
        };
        Ok(if scale == 0.0 { MomentValue::Finite(0.0) } else { m.map(|v| v * scale) })
    }

    fn sup_norm(&self, xi: &[f64], phase: Option<u8>) -> Result<MomentValue> {
        check_xi(xi, 3)?;
        let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let singular = !self.cell.crystallites().is_empty() && phase != Some(0);
        Ok(match phase {
            Some(i) if i > 1 => return invalid(format!("phase {i} does not exist in a two-phase dispersion")),
            _ if norm == 0.0 => MomentValue::Finite(0.0),
            _ if singular => MomentValue::Divergent,
            _ => MomentValue::Finite(norm),
        })
    }

    fn source(&self) -> &'static str {
        "analytic"
    }
}

/// `f_p = (∫_Q |P ξ|^p)^{1/p}` of a sampled field.
pub fn moment_fp(field: &MatrixField, xi: &[f64], p: f64) -> Result<f64> {
    let m = FieldMoments::new(field, None)?.moment_power(xi, p, None)?;
    Ok(m.as_f64().powf(1.0 / p))
}

/// `f_p^i = (∫_Q χ_i |P ξ|^p)^{1/p}`, normalized by `|Q|`, not by the phase volume.
pub fn phase_moment_fp(field: &MatrixField, labels: &[u8], phase: u8, xi: &[f64], p: f64) -> Result<f64> {
    let m = FieldMoments::new(field, Some(labels))?.moment_power(xi, p, Some(phase))?;
    Ok(m.as_f64().powf(1.0 / p))
}

/// Discrete `f_∞`: the largest `|P ξ|` over (phase-restricted) sample points.
pub fn moment_finf(field: &MatrixField, labels: Option<&[u8]>, phase: Option<u8>, xi: &[f64]) -> Result<f64> {
    Ok(FieldMoments::new(field, labels)?.sup_norm(xi, phase)?.as_f64())
}

/// `∫_D (f_p^i(x, ∇u^H(x)))^p dx` with element-constant macro gradients over
/// the elements whose midpoint lies in `region`.
pub fn bound_integral(
    macro_solution: &MacroSolution,
    cells: &BTreeMap<usize, &dyn CellMoments>,
    p: f64,
    region: &Region,
    phase: Option<u8>,
) -> Result<MomentValue> {
    check_order(p)?;
    let mesh = macro_solution.mesh();
    let vol = mesh.element_volume();
    let elements = region.elements(mesh);
    let mut terms = Vec::with_capacity(elements.len());
    for &e in &elements {
        let id = macro_solution.subdomain(e);
        let cell = cells
            .get(&id)
            .ok_or_else(|| Error::Config(format!("no cell data for subdomain {id}")))?;
        match cell.moment_power(macro_solution.grad(e), p, phase)? {
            MomentValue::Finite(v) => terms.push(vol * v),
            MomentValue::Divergent => return Ok(MomentValue::Divergent),
        }
    }
    Ok(MomentValue::Finite(sum(&terms)))
}

/// Lower bound `(∫_D (f_p^i)^p dx)^{1/p}` on `liminf ‖χ_i^ε ∇u^ε‖_{L^p(D)}`.
pub fn lower_bound_lp(
    macro_solution: &MacroSolution,
    cells: &BTreeMap<usize, &dyn CellMoments>,
    p: f64,
    region: &Region,
    phase: Option<u8>,
) -> Result<MomentValue> {
    Ok(bound_integral(macro_solution, cells, p, region, phase)?.map(|v| v.powf(1.0 / p)))
}

/// Chebyshev bound `t^{−p} ∫_D (f_p^i)^p` on the measure of `{|∇u^ε| > t}`,
/// clamped by `|D|`.
pub fn chebyshev_tail(bound_value: MomentValue, p: f64, t: f64, measure: f64) -> Result<f64> {
    if !(t > 0.0) {
        return invalid(format!("threshold must be positive, got {t}"));
    }
    check_order(p)?;
    Ok(match bound_value {
        MomentValue::Finite(b) => (b * t.powf(-p)).min(measure),
        MomentValue::Divergent => measure,
    })
}

/// Moment integrals `∫_Q |P e^i|^p` of one field at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentLevel {
    pub resolution: usize,
    /// `values[i][k]` for direction `e^i` and `p_scan[k]`.
    pub values: Vec<Vec<MomentValue>>,
}

impl MomentLevel {
    pub fn from_moments(m: &dyn CellMoments, p_scan: &[f64]) -> Result<Self> {
        let d = m.dim();
        let values = (0..d)
            .map(|i| {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                p_scan.iter().map(|&p| m.moment_power(&e, p, None)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { resolution: m.resolution().unwrap_or(0), values })
    }
}

/// Growth of one moment between two consecutive resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthSample {
    pub p: f64,
    pub direction: usize,
    pub coarse: usize,
    pub fine: usize,
    /// Moment ratio normalized to one doubling of the resolution.
    pub ratio_per_doubling: f64,
    pub divergent: bool,
}

/// Threshold-exponent estimate with the refinement data behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    /// `+∞` when no divergence was detected on the scan.
    pub estimate: MomentValue,
    /// First scanned order whose moment growth reached the factor.
    pub first_flagged_p: Option<f64>,
    pub factor: f64,
    pub growth: Vec<GrowthSample>,
}

pub const DEFAULT_DIVERGENCE_FACTOR: f64 = 2.0;

/// Estimates the largest `p` with finite `∫_Q |P e^i|^p` from moments at two
/// or more resolutions (coarse to fine).
///
/// A moment is flagged divergent when it grows by at least `factor` per
/// doubling of the resolution between the two finest levels, or when it is
/// already divergent in closed form. A power singularity `|P| ~ ρ^{−γ}` in
/// dimension `d` makes `∫|P|^p` grow like `N^{pγ − d}` above its threshold
/// `d/γ`, so the growth exponent `g = log2(ratio)` at the first flagged order
/// `p` gives the threshold `d p / (d + g)`. Closed-form divergence returns
/// the flagged order itself. The minimum over directions is reported.
pub fn estimate_threshold_exponent(
    dim: usize,
    p_scan: &[f64],
    levels: &[MomentLevel],
    factor: f64,
) -> Result<ThresholdEstimate> {
    if levels.len() < 2 {
        return invalid("divergence needs moments at two or more resolutions");
    }
    if !(factor > 1.0) {
        return invalid(format!("divergence factor must exceed 1, got {factor}"));
    }
    check_scan(p_scan)?;
    for l in levels {
        if l.values.len() != dim || l.values.iter().any(|v| v.len() != p_scan.len()) {
            return invalid("moment levels must cover every direction and scanned order");
        }
    }
    let mut growth = Vec::new();
    for w in levels.windows(2) {
        let (c, f) = (&w[0], &w[1]);
        let doublings = if c.resolution > 0 && f.resolution > 0 {
            (f.resolution as f64 / c.resolution as f64).log2()
        } else {
            1.0
        };
        if !(doublings > 0.0) {
            return invalid("levels must be ordered by increasing resolution");
        }
        for i in 0..dim {
            for (k, &p) in p_scan.iter().enumerate() {
                let (ratio, divergent) = match (c.values[i][k], f.values[i][k]) {
                    (_, MomentValue::Divergent) => (f64::INFINITY, true),
                    (MomentValue::Finite(a), MomentValue::Finite(b)) if a > 0.0 => {
                        let r = (b / a).powf(1.0 / doublings);
                        (r, r >= factor)
                    }
                    (MomentValue::Finite(_), MomentValue::Finite(_)) => (1.0, false),
                    (MomentValue::Divergent, MomentValue::Finite(_)) => {
                        return invalid("moment divergent at a coarse level but finite at a finer one");
                    }
                };
                growth.push(GrowthSample {
                    p,
                    direction: i,
                    coarse: c.resolution,
                    fine: f.resolution,
                    ratio_per_doubling: ratio,
                    divergent,
                });
            }
        }
    }
    let finest = &levels[levels.len() - 1];
    let mut best: Option<(f64, f64)> = None;
    for g in growth.iter().filter(|g| g.fine == finest.resolution && g.divergent) {
        // growth samples are ordered by p within each direction
        let est = if g.ratio_per_doubling.is_infinite() {
            g.p
        } else {
            let e = g.ratio_per_doubling.log2();
            dim as f64 * g.p / (dim as f64 + e)
        };
        let first_in_direction = !growth.iter().any(|h| {
            h.fine == finest.resolution && h.direction == g.direction && h.divergent && h.p < g.p
        });
        if first_in_direction && best.is_none_or(|(b, _)| est < b) {
            best = Some((est, g.p));
        }
    }
    Ok(ThresholdEstimate {
        estimate: best.map_or(MomentValue::Divergent, |(e, _)| MomentValue::Finite(e)),
        first_flagged_p: best.map(|(_, p)| p),
        factor,
        growth,
    })
}

fn check_scan(p_grid: &[f64]) -> Result<()> {
    if p_grid.is_empty() {
        return invalid("empty p grid");
    }
    for &p in p_grid {
        check_order(p)?;
    }
    if p_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("p grid must be strictly increasing");
    }
    Ok(())
}

/// Orders, phases and macroscopic gradient at which moments are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSpec {
    pub p_grid: Vec<f64>,
    /// Empty means the whole cell.
    #[serde(default)]
    pub phases: Vec<u8>,
    pub gradient: Vec<f64>,
}

impl MomentSpec {
    pub fn validate(&self) -> Result<()> {
        check_scan(&self.p_grid)?;
        if self.gradient.iter().any(|x| !x.is_finite()) || self.gradient.is_empty() {
            return invalid("gradient must be a finite vector");
        }
        Ok(())
    }
}

/// One `f_p` or `f_p^i` value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub p: f64,
    /// `None` for the whole cell.
    pub phase: Option<u8>,
    pub value: MomentValue,
}

/// Discrete supremum of `|P ξ|` for one phase selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupEntry {
    pub phase: Option<u8>,
    pub value: MomentValue,
    /// Set when refinement shows the supremum is a grid artifact of a
    /// singular field.
    pub grid_limited: bool,
}

/// Moments of one cell over a `p` grid and a set of phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub source: String,
    pub gradient: Vec<f64>,
    pub resolution: Option<usize>,
    pub entries: Vec<MomentEntry>,
    pub f_inf: Vec<SupEntry>,
    pub quadrature_note: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdEstimate>,
}

impl ConcentrationReport {
    /// Records refinement diagnostics; a finite threshold marks every
    /// numeric supremum as grid-limited.
    pub fn with_threshold(mut self, estimate: ThresholdEstimate) -> Self {
        let singular = !estimate.estimate.is_divergent();
        for s in &mut self.f_inf {
            s.grid_limited |= singular && !s.value.is_divergent();
        }
        match estimate.estimate {
            MomentValue::Finite(p) => self.quadrature_note.push_str(&format!(
                "; moments grow under refinement, integrability threshold estimated at p = {p:.4}"
            )),
            MomentValue::Divergent => {
                self.quadrature_note.push_str("; no moment growth detected under refinement")
            }
        }
        self.threshold = Some(estimate);
        self
    }

    pub fn value(&self, p: f64, phase: Option<u8>) -> Option<MomentValue> {
        self.entries.iter().find(|e| e.p == p && e.phase == phase).map(|e| e.value)
    }

    /// Columns `p,phase,value,divergent_flag,resolution`; the whole cell is
    /// phase `-1`, closed forms have resolution `0`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("p,phase,value,divergent_flag,resolution\n");
        let res = self.resolution.unwrap_or(0);
        for e in &self.entries {
            let phase = e.phase.map_or(-1, |i| i as i64);
            let flag = u8::from(e.value.is_divergent());
            s.push_str(&format!("{},{phase},{},{flag},{res}\n", e.p, e.value.csv_cell()));
        }
        s
    }
}

/// Evaluates `f_p` (or `f_p^i` for each listed phase) over the grid.
pub fn concentration_report(moments: &dyn CellMoments, spec: &MomentSpec) -> Result<ConcentrationReport> {
    spec.validate()?;
    check_xi(&spec.gradient, moments.dim())?;
    let selections: Vec<Option<u8>> =
        if spec.phases.is_empty() { vec![None] } else { spec.phases.iter().map(|&i| Some(i)).collect() };
    let mut entries = Vec::new();
    for &phase in &selections {
        for &p in &spec.p_grid {
            let value = moments.moment_power(&spec.gradient, p, phase)?.map(|v| v.powf(1.0 / p));
            entries.push(MomentEntry { p, phase, value });
        }
    }
    let f_inf = selections
        .iter()
        .map(|&phase| {
            let value = moments.sup_norm(&spec.gradient, phase)?;
            Ok(SupEntry { phase, value, grid_limited: false })
        })
        .collect::<Result<Vec<_>>>()?;
    let quadrature_note = match moments.resolution() {
        Some(n) => format!("voxel midpoint rule at resolution {n}"),
        None => "closed form".to_string(),
    };
    Ok(ConcentrationReport {
        source: moments.source().to_string(),
        gradient: spec.gradient.clone(),
        resolution: moments.resolution(),
        entries,
        f_inf,
        quadrature_note,
        threshold: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laminate_field() -> (MatrixField, Vec<u8>) {
        let a = [4.0 / 3.0, 0.0, 0.0, 1.0];
        let b = [2.0 / 3.0, 0.0, 0.0, 1.0];
        (MatrixField::uniform(2, [a, b].concat()).unwrap(), vec![0, 1])
    }

    #[test]
    fn laminate_moments() {
        let (f, l) = laminate_field();
        let fp = moment_fp(&f, &[1.0, 0.0], 2.0).unwrap();
        assert!((fp - (10.0f64 / 9.0).sqrt()).abs() < 1e-14);
        let f0 = phase_moment_fp(&f, &l, 0, &[1.0, 0.0], 2.0).unwrap();
        assert!((f0 - (8.0f64 / 9.0).sqrt()).abs() < 1e-14);
        assert_eq!(moment_finf(&f, Some(&l), None, &[1.0, 0.0]).unwrap(), 4.0 / 3.0);
        assert!(phase_moment_fp(&f, &l, 2, &[1.0, 0.0], 2.0).is_err());
        assert!(moment_fp(&f, &[1.0, 0.0], 1.5).is_err());
    }

    #[test]
    fn identity_field_moments_are_one() {
        let f = MatrixField::identity(3, 10);
        for p in [2.0, 3.5, 9.0] {
            assert!((moment_fp(&f, &[1.0, 0.0, 0.0], p).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn chebyshev_values() {
        let one = MomentValue::Finite(1.0);
        assert!((chebyshev_tail(one, 2.0, 10.0, 1.0).unwrap() - 0.01).abs() < 1e-15);
        assert!((chebyshev_tail(one, 2.0, 2.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(chebyshev_tail(one, 2.0, 0.1, 0.5).unwrap(), 0.5);
        assert_eq!(chebyshev_tail(MomentValue::Divergent, 2.0, 3.0, 0.7).unwrap(), 0.7);
        assert!(chebyshev_tail(one, 2.0, 1e300, 1.0).unwrap() < 1e-300);
        assert!(chebyshev_tail(one, 2.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn threshold_from_synthetic_power_law() {
        // ∫|P|^p ~ 1 + N^{p/p_c·3 − 3} above p_c = 5 in three dimensions
        let p_scan: Vec<f64> = (4..=20).map(|k| k as f64 * 0.5).collect();
        let level = |n: usize| MomentLevel {
            resolution: n,
            values: vec![
                p_scan.iter().map(|&p| MomentValue::Finite(1.0 + (n as f64).powf(3.0 * (p / 5.0 - 1.0)))).collect();
                3
            ],
        };
        let est = estimate_threshold_exponent(3, &p_scan, &[level(64), level(128)], 2.0).unwrap();
        let v = est.estimate.finite().unwrap();
        assert!((v - 5.0).abs() < 0.2, "{v}");
        assert!(estimate_threshold_exponent(3, &p_scan, &[level(64)], 2.0).is_err());
    }

    #[test]
    fn bounded_field_has_no_threshold() {
        let (f, _) = laminate_field();
        let p_scan = [2.0, 4.0, 8.0];
        let m = FieldMoments::new(&f, None).unwrap();
        let mut a = MomentLevel::from_moments(&m, &p_scan).unwrap();
        a.resolution = 32;
        let mut b = a.clone();
        b.resolution = 64;
        let est = estimate_threshold_exponent(2, &p_scan, &[a, b], 2.0).unwrap();
        assert!(est.estimate.is_divergent());
        assert!(est.first_flagged_p.is_none());
    }

    #[test]
    fn report_csv_layout() {
        let (f, l) = laminate_field();
        let m = FieldMoments::new(&f, Some(&l)).unwrap();
        let spec = MomentSpec { p_grid: vec![2.0, 3.0], phases: vec![0, 1], gradient: vec![1.0, 0.0] };
        let r = concentration_report(&m, &spec).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("p,phase,value,divergent_flag,resolution\n2,0,"));
        let bad = MomentSpec { p_grid: vec![3.0, 2.0], ..spec };
        assert!(concentration_report(&m, &bad).is_err());
    }
}
