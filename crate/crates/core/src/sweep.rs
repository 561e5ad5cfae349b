//! Fine-scale solves of the oscillatory problem `−div(A(x/ε)∇u^ε) = f` in
//! 2D and their comparison with two-scale predictions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cell_solver::{effective_tensor, solve_corrector, CorrectorSolution, SolverOptions};
use crate::concentration::{bound_integral, chebyshev_tail, CellMoments, FieldMoments, MomentValue};
use crate::error::{invalid, Error, Result};
use crate::fem::{solve_structured, FemSolution, Region, StructuredMesh};
use crate::geometry::CellGrid;
use crate::macro_solver::{solve_homogenized, MacroProblem, MacroSolution};
use crate::reduce::{sum, tree_sum};

pub const MIN_ELEMENTS_PER_PERIOD: usize = 8;

/// Fine solution on a mesh that resolves every period of the cell.
#[derive(Debug, Clone)]
pub struct FineSolution {
    pub epsilon: f64,
    pub fem: FemSolution,
    /// Phase label of each fine element.
    pub phases: Vec<u8>,
}

impl FineSolution {
    pub fn mesh(&self) -> &StructuredMesh {
        &self.fem.mesh
    }

    pub fn gradient_norm(&self, e: usize) -> f64 {
        self.fem.element_gradient(e).iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Fine mesh with `elements_per_period` elements across each period.
pub fn fine_mesh(problem: &MacroProblem, epsilon: f64, elements_per_period: usize) -> Result<StructuredMesh> {
    if elements_per_period < MIN_ELEMENTS_PER_PERIOD {
        return invalid(format!(
            "{elements_per_period} elements per period under-resolve the cell (need {MIN_ELEMENTS_PER_PERIOD})"
        ));
    }
    if !(epsilon > 0.0) || ((1.0 / epsilon) - (1.0 / epsilon).round()).abs() > 1e-9 {
        return invalid(format!("epsilon {epsilon} is not of the form 1/k"));
    }
    let mut cells = Vec::with_capacity(problem.dim());
    for &ext in &problem.extents {
        let periods = ext / epsilon;
        if (periods - periods.round()).abs() > 1e-9 {
            return invalid(format!("extent {ext} is not a whole number of periods at epsilon {epsilon}"));
        }
        cells.push(periods.round() as usize * elements_per_period);
    }
    StructuredMesh::new(&problem.extents, &cells)
}

fn cell_coordinate(x: &[f64], epsilon: f64) -> Vec<f64> {
    x.iter().map(|&xk| (xk / epsilon).rem_euclid(1.0)).collect()
}

/// Solves the oscillatory problem with coefficients `A(x/ε)` sampled at fine
/// element midpoints, the macro source and the macro boundary data.
pub fn solve_fine(
    cell: &CellGrid,
    problem: &MacroProblem,
    epsilon: f64,
    elements_per_period: usize,
    tol: f64,
) -> Result<FineSolution> {
    if cell.dim() != 2 || problem.dim() != 2 {
        return invalid("fine solves are two-dimensional");
    }
    problem.validate()?;
    let mesh = fine_mesh(problem, epsilon, elements_per_period)?;
    let macro_mesh = problem.mesh()?;
    let ne = mesh.num_elements();
    let mut coeffs = Vec::with_capacity(ne * 3);
    let mut phases = Vec::with_capacity(ne);
    let mut source = Vec::with_capacity(ne);
    for e in 0..ne {
        let x = mesh.element_midpoint(e);
        let v = cell.voxel_containing(&cell_coordinate(&x[..2], epsilon));
        coeffs.extend_from_slice(cell.packed_tensor(v));
        phases.push(cell.phase(v));
        let (me, _) = macro_mesh.locate(&x[..2]).expect("fine midpoints lie inside the domain");
        source.push(problem.source[me]);
    }
    let max_iter = 20 * mesh.num_nodes() + 100;
    let fem = solve_structured(mesh, &coeffs, &source, &problem.boundary, tol, max_iter)?;
    Ok(FineSolution { epsilon, fem, phases })
}

/// Homogenized problem re-solved on the fine mesh, so both solutions share
/// their discretization error.
pub fn solve_homogenized_on(problem: &MacroProblem, mesh: &StructuredMesh, tol: f64) -> Result<MacroSolution> {
    let macro_mesh = problem.mesh()?;
    let ne = mesh.num_elements();
    let mut partition = Vec::with_capacity(ne);
    let mut source = Vec::with_capacity(ne);
    for e in 0..ne {
        let x = mesh.element_midpoint(e);
        let (me, _) = macro_mesh.locate(&x[..mesh.dim()]).expect("midpoints lie inside the domain");
        partition.push(problem.partition[me]);
        source.push(problem.source[me]);
    }
    let refined = MacroProblem {
        extents: problem.extents.clone(),
        cells: mesh.cells().to_vec(),
        partition,
        tensors: problem.tensors.clone(),
        source,
        boundary: problem.boundary.clone(),
    };
    solve_homogenized(&refined, tol)
}

/// `(Σ_{e ⊂ D} |e| |∇u^ε|^p)^{1/p}` with element-midpoint gradients.
pub fn lp_norm_gradient(fine: &FineSolution, p: f64, region: &Region) -> Result<f64> {
    if !(p >= 2.0) || !p.is_finite() {
        return invalid(format!("p must be finite and >= 2, got {p}"));
    }
    let vol = fine.mesh().element_volume();
    let elements = region.elements(fine.mesh());
    let s = tree_sum(elements.len(), |k| vol * fine.gradient_norm(elements[k]).powf(p));
    Ok(s.powf(1.0 / p))
}

/// `λ_i^ε(D, t)`: volume of elements in `D` (and in `phase`, if given) with
/// `|∇u^ε| > t`, for each `t`.
pub fn empirical_distribution(fine: &FineSolution, phase: Option<u8>, region: &Region, t_grid: &[f64]) -> Vec<f64> {
    let vol = fine.mesh().element_volume();
    let norms: Vec<f64> = region
        .elements(fine.mesh())
        .into_iter()
        .filter(|&e| phase.is_none_or(|i| fine.phases[e] == i))
        .map(|e| fine.gradient_norm(e))
        .collect();
    t_grid
        .iter()
        .map(|&t| norms.iter().filter(|&&g| g > t).count() as f64 * vol)
        .collect()
}

/// Median of `|∇u^ε|` over the elements of `D`.
pub fn median_gradient(fine: &FineSolution, region: &Region) -> f64 {
    let mut norms: Vec<f64> = region.elements(fine.mesh()).into_iter().map(|e| fine.gradient_norm(e)).collect();
    if norms.is_empty() {
        return 0.0;
    }
    norms.sort_by(f64::total_cmp);
    let n = norms.len();
    if n % 2 == 1 { norms[n / 2] } else { 0.5 * (norms[n / 2 - 1] + norms[n / 2]) }
}

/// Weight `q(x, y)` in the localization identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    One,
    PhaseIndicator { phase: u8 },
}

impl TestFunction {
    fn weight(&self, phase: u8) -> f64 {
        match *self {
            TestFunction::One => 1.0,
            TestFunction::PhaseIndicator { phase: i } => f64::from(u8::from(phase == i)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            TestFunction::One => "q=1".into(),
            TestFunction::PhaseIndicator { phase } => format!("q=chi_{phase}"),
        }
    }
}

/// Integrand `ψ(η)` in the Carathéodory limit, with `|ψ(η)| ≤ |η|^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Integrand {
    Zero,
    Power { p: f64 },
    /// `min(|η|^p, cap)`.
    ClippedPower { p: f64, cap: f64 },
}

impl Integrand {
    pub fn eval(&self, eta_norm: f64) -> f64 {
        match *self {
            Integrand::Zero => 0.0,
            Integrand::Power { p } => eta_norm.powf(p),
            Integrand::ClippedPower { p, cap } => eta_norm.powf(p).min(cap),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Integrand::Zero => "psi=0".into(),
            Integrand::Power { p } => format!("psi=|eta|^{p}"),
            Integrand::ClippedPower { p, cap } => format!("psi=min(|eta|^{p};{cap})"),
        }
    }
}

/// Residual of one two-scale limit at one `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitResidual {
    pub epsilon: f64,
    pub fine: f64,
    pub prediction: f64,
    pub residual: f64,
    pub relative: f64,
}

impl LimitResidual {
    fn new(epsilon: f64, fine: f64, prediction: f64) -> Self {
        let residual = (fine - prediction).abs();
        let relative = if prediction != 0.0 { residual / prediction.abs() } else { residual };
        Self { epsilon, fine, prediction, residual, relative }
    }
}

/// `∫_D ∫_Q w(x, y) g(|P(y) ∇u^H(x)|) dy dx` over macro elements in `D`.
fn two_scale_integral<F>(macro_solution: &MacroSolution, cell: &CorrectorSolution, region: &Region, g: F) -> f64
where
    F: Fn(u8, f64) -> f64 + Sync,
{
    let mesh = macro_solution.mesh();
    let vol = mesh.element_volume();
    let p = cell.p_field();
    let phases = cell.grid().phases();
    let elements = region.elements(mesh);
    let terms: Vec<f64> = elements
        .iter()
        .map(|&e| {
            let xi = macro_solution.grad(e);
            vol * tree_sum(p.len(), |k| p.weight(k) * g(phases[k], p.norm_applied(k, xi)))
        })
        .collect();
    sum(&terms)
}

fn fine_integral<F>(fine: &FineSolution, region: &Region, g: F) -> f64
where
    F: Fn(u8, f64) -> f64 + Sync,
{
    let vol = fine.mesh().element_volume();
    let elements = region.elements(fine.mesh());
    tree_sum(elements.len(), |k| {
        let e = elements[k];
        vol * g(fine.phases[e], fine.gradient_norm(e))
    })
}

/// `|∫_D q |∇u^ε|² − ∫_D ∫_Q q |P ∇u^H|²|` per `ε`, in the order given.
pub fn localization_check(
    fines: &[FineSolution],
    q: TestFunction,
    macro_solution: &MacroSolution,
    cell: &CorrectorSolution,
    region: &Region,
) -> Vec<LimitResidual> {
    let prediction = two_scale_integral(macro_solution, cell, region, |ph, g| q.weight(ph) * g * g);
    fines
        .iter()
        .map(|f| LimitResidual::new(f.epsilon, fine_integral(f, region, |ph, g| q.weight(ph) * g * g), prediction))
        .collect()
}

/// `|∫_D ψ(∇u^ε) − ∫_D ∫_Q ψ(P ∇u^H)|` per `ε`; rejects `ψ` exceeding
/// `|η|^p` at any evaluated gradient.
pub fn caratheodory_check(
    fines: &[FineSolution],
    psi: Integrand,
    p: f64,
    macro_solution: &MacroSolution,
    cell: &CorrectorSolution,
    region: &Region,
) -> Result<Vec<LimitResidual>> {
    let violates = |g: f64| psi.eval(g).abs() > g.powf(p) * (1.0 + 1e-12);
    let mut samples: Vec<f64> = Vec::new();
    for f in fines {
        samples.extend(region.elements(f.mesh()).into_iter().map(|e| f.gradient_norm(e)));
    }
    for &s in samples.iter().chain(&[0.5, 1.0, 2.0]) {
        if violates(s) {
            return invalid(format!("{} exceeds |eta|^{p} at |eta| = {s}", psi.label()));
        }
    }
    let prediction = two_scale_integral(macro_solution, cell, region, |_, g| psi.eval(g));
    Ok(fines
        .iter()
        .map(|f| LimitResidual::new(f.epsilon, fine_integral(f, region, |_, g| psi.eval(g)), prediction))
        .collect())
}

/// `‖∇u^ε − P(x/ε) ∇u^H‖_{L^r(D)}` with `u^H` solved on the fine mesh.
pub fn corrector_mismatch(
    fine: &FineSolution,
    homogenized: &MacroSolution,
    cell: &CorrectorSolution,
    r: f64,
    region: &Region,
) -> Result<f64> {
    if homogenized.mesh() != fine.mesh() {
        return invalid("homogenized solution must live on the fine mesh");
    }
    if !(r >= 1.0) {
        return invalid("mismatch exponent must be at least 1");
    }
    let mesh = fine.mesh();
    let d = mesh.dim();
    let vol = mesh.element_volume();
    let p = cell.p_field();
    let grid = cell.grid();
    let elements = region.elements(mesh);
    let s = tree_sum(elements.len(), |k| {
        let e = elements[k];
        let x = mesh.element_midpoint(e);
        let m = p.matrix(grid.voxel_containing(&cell_coordinate(&x[..d], fine.epsilon)));
        let xi = homogenized.grad(e);
        let ge = fine.fem.element_gradient(e);
        let diff2: f64 = (0..d)
            .map(|i| {
                let pxi: f64 = (0..d).map(|j| m[i * d + j] * xi[j]).sum();
                (ge[i] - pxi).powi(2)
            })
            .sum();
        vol * diff2.sqrt().powf(r)
    });
    Ok(s.powf(1.0 / r))
}

/// Nodal `‖u^ε − u^H‖_{L²(Ω)}` by the lumped (trapezoidal) rule on a shared mesh.
pub fn solution_gap(fine: &FineSolution, homogenized: &MacroSolution) -> Result<f64> {
    let mesh = fine.mesh();
    if homogenized.mesh() != mesh {
        return invalid("homogenized solution must live on the fine mesh");
    }
    let d = mesh.dim();
    let vol = mesh.element_volume();
    let u = &fine.fem.u;
    let uh = homogenized.u_h();
    let s = tree_sum(mesh.num_elements(), |e| {
        let m = 1 << d;
        (0..m)
            .map(|a| {
                let n = mesh.element_node(e, a);
                (u[n] - uh[n]).powi(2)
            })
            .sum::<f64>()
            * vol
            / m as f64
    });
    Ok(s.sqrt())
}

/// Inputs of a sweep over `ε`.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub cell: CellGrid,
    /// Geometry, source and boundary data; every subdomain tensor is
    /// replaced by the effective tensor of `cell`.
    pub problem: MacroProblem,
    pub epsilons: Vec<f64>,
    pub p_list: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub region: Region,
    pub elements_per_period: usize,
    pub test_functions: Vec<TestFunction>,
    pub integrands: Vec<Integrand>,
    /// Growth exponent checked for the integrands.
    pub integrand_growth: f64,
    pub mismatch_exponents: Vec<f64>,
    pub cell_tol: f64,
    pub tol: f64,
}

impl SweepConfig {
    pub fn new(cell: CellGrid, problem: MacroProblem, epsilons: Vec<f64>) -> Self {
        let region = Region::centered_half(&problem.extents);
        Self {
            cell,
            problem,
            epsilons,
            p_list: vec![2.0, 3.0, 4.0],
            t_grid: Vec::new(),
            region,
            elements_per_period: MIN_ELEMENTS_PER_PERIOD,
            test_functions: vec![TestFunction::One],
            integrands: vec![Integrand::Power { p: 2.0 }],
            integrand_growth: 2.0,
            mismatch_exponents: vec![1.0, 2.0],
            cell_tol: 1e-10,
            tol: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell.dim() != 2 || self.problem.dim() != 2 {
            return invalid("sweeps are two-dimensional");
        }
        if self.epsilons.is_empty() {
            return invalid("no epsilon values given");
        }
        for &eps in &self.epsilons {
            fine_mesh(&self.problem, eps, self.elements_per_period)?;
        }
        let r = &self.region;
        if r.lo.len() != 2 || r.hi.len() != 2 {
            return invalid("measurement region must be two-dimensional");
        }
        if r.lo.iter().any(|&l| l <= 0.0) || r.hi.iter().zip(&self.problem.extents).any(|(h, e)| h >= e) {
            return invalid("measurement region must lie strictly inside the domain");
        }
        if self.p_list.iter().any(|&p| !(p >= 2.0) || !p.is_finite()) {
            return invalid("tracked moments need finite p >= 2");
        }
        if self.t_grid.iter().any(|&t| !(t > 0.0)) {
            return invalid("thresholds must be positive");
        }
        Ok(())
    }
}

/// `‖∇u^ε‖_{L^p(D)}` against its lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub epsilon: f64,
    pub p: f64,
    pub norm: f64,
    pub lower_bound: MomentValue,
}

/// `λ_i^ε(D, t)` against the Chebyshev bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub epsilon: f64,
    pub phase: u8,
    pub t: f64,
    pub measure: f64,
    /// `t^{−2} ∫_D (f_2^i)^2`, clamped by `|D|`.
    pub chebyshev: f64,
    /// `t` lies above the median gradient on `D`.
    pub tail: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedResiduals {
    pub label: String,
    pub rows: Vec<LimitResidual>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchRow {
    pub epsilon: f64,
    pub r: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub epsilon: f64,
    pub value: f64,
}

/// Pass/fail verdicts of the trend and sandwich checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    /// Norms at the smallest `ε` reach 95% of the lower bound.
    pub lower_bound_sandwich: bool,
    /// Tail measures at the smallest `ε` stay within 110% of the Chebyshev bound.
    pub chebyshev_sandwich: bool,
    /// Every localization residual decreases strictly along the ladder.
    pub localization_decreasing: bool,
    pub mismatch_decreasing: bool,
    pub solution_gap_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Decreasing.
    pub epsilons: Vec<f64>,
    pub region: Region,
    pub region_measure: f64,
    pub norms: Vec<NormRow>,
    pub distribution: Vec<DistributionRow>,
    pub localization: Vec<NamedResiduals>,
    pub caratheodory: Vec<NamedResiduals>,
    pub mismatch: Vec<MismatchRow>,
    pub solution_gap: Vec<GapRow>,
    pub median_gradient: Vec<f64>,
    pub summary: SweepSummary,
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

impl SweepReport {
    /// Long format: `epsilon,quantity,p_or_t,phase,value`; the whole domain
    /// is phase `-1` and quantities without an order use `0`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,quantity,p_or_t,phase,value\n");
        let mut row = |eps: f64, q: &str, pt: f64, phase: i64, value: String| {
            s.push_str(&format!("{eps},{q},{pt},{phase},{value}\n"));
        };
        for n in &self.norms {
            row(n.epsilon, "grad_norm", n.p, -1, format!("{:.17e}", n.norm));
            row(n.epsilon, "lower_bound", n.p, -1, n.lower_bound.csv_cell());
        }
        for d in &self.distribution {
            row(d.epsilon, "distribution", d.t, d.phase as i64, format!("{:.17e}", d.measure));
            row(d.epsilon, "chebyshev_bound", d.t, d.phase as i64, format!("{:.17e}", d.chebyshev));
        }
        for (kind, sets) in [("localization", &self.localization), ("caratheodory", &self.caratheodory)] {
            for set in sets {
                for r in &set.rows {
                    let q = format!("{kind}_residual[{}]", set.label);
                    row(r.epsilon, &q, 0.0, -1, format!("{:.17e}", r.residual));
                }
            }
        }
        for m in &self.mismatch {
            row(m.epsilon, "corrector_mismatch", m.r, -1, format!("{:.17e}", m.value));
        }
        for g in &self.solution_gap {
            row(g.epsilon, "solution_gap_l2", 2.0, -1, format!("{:.17e}", g.value));
        }
        s
    }
}

/// Runs the full sweep: cell solve, homogenized solve, and one fine solve
/// per `ε` in decreasing order.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    let cell = solve_corrector(config.cell.clone(), SolverOptions::with_tol(config.cell_tol))?;
    let ae = effective_tensor(&cell);
    let mut problem = config.problem.clone();
    for t in problem.tensors.values_mut() {
        *t = ae.clone();
    }
    let macro_solution = solve_homogenized(&problem, config.tol)?;
    let moments = FieldMoments::of_solution(&cell);
    let cells: BTreeMap<usize, &dyn CellMoments> =
        problem.tensors.keys().map(|&id| (id, &moments as &dyn CellMoments)).collect();
    let region = &config.region;
    let measure = region.measure();

    let mut epsilons = config.epsilons.clone();
    epsilons.sort_by(|a, b| b.total_cmp(a));
    epsilons.dedup();

    let mut fines = Vec::with_capacity(epsilons.len());
    let mut mismatch = Vec::new();
    let mut gaps = Vec::new();
    for &eps in &epsilons {
        let fine = solve_fine(&config.cell, &problem, eps, config.elements_per_period, config.tol)?;
        let hom = solve_homogenized_on(&problem, fine.mesh(), config.tol)?;
        for &r in &config.mismatch_exponents {
            mismatch.push(MismatchRow { epsilon: eps, r, value: corrector_mismatch(&fine, &hom, &cell, r, region)? });
        }
        gaps.push(GapRow { epsilon: eps, value: solution_gap(&fine, &hom)? });
        fines.push(fine);
    }

    let mut norms = Vec::new();
    for &p in &config.p_list {
        let lower_bound = crate::concentration::lower_bound_lp(&macro_solution, &cells, p, region, None)?;
        for f in &fines {
            norms.push(NormRow { epsilon: f.epsilon, p, norm: lp_norm_gradient(f, p, region)?, lower_bound });
        }
    }

    let median: Vec<f64> = fines.iter().map(|f| median_gradient(f, region)).collect();
    let mut distribution = Vec::new();
    for phase in 0..config.cell.num_phases() as u8 {
        let bound = bound_integral(&macro_solution, &cells, 2.0, region, Some(phase))?;
        for (f, med) in fines.iter().zip(&median) {
            let measures = empirical_distribution(f, Some(phase), region, &config.t_grid);
            for (&t, &m) in config.t_grid.iter().zip(&measures) {
                distribution.push(DistributionRow {
                    epsilon: f.epsilon,
                    phase,
                    t,
                    measure: m,
                    chebyshev: chebyshev_tail(bound, 2.0, t, measure)?,
                    tail: t > *med,
                });
            }
        }
    }

    let localization: Vec<NamedResiduals> = config
        .test_functions
        .iter()
        .map(|&q| NamedResiduals { label: q.label(), rows: localization_check(&fines, q, &macro_solution, &cell, region) })
        .collect();
    let caratheodory = config
        .integrands
        .iter()
        .map(|&psi| {
            Ok(NamedResiduals {
                label: psi.label(),
                rows: caratheodory_check(&fines, psi, config.integrand_growth, &macro_solution, &cell, region)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let smallest = *epsilons.last().expect("validated non-empty");
    let summary = SweepSummary {
        lower_bound_sandwich: norms
            .iter()
            .filter(|n| n.epsilon == smallest)
            .all(|n| n.lower_bound.finite().is_some_and(|b| n.norm >= 0.95 * b)),
        chebyshev_sandwich: distribution
            .iter()
            .filter(|d| d.epsilon == smallest && d.tail)
            .all(|d| d.measure <= 1.10 * d.chebyshev),
        localization_decreasing: localization
            .iter()
            .all(|l| strictly_decreasing(&l.rows.iter().map(|r| r.residual).collect::<Vec<_>>())),
        mismatch_decreasing: config.mismatch_exponents.iter().all(|&r| {
            strictly_decreasing(&mismatch.iter().filter(|m| m.r == r).map(|m| m.value).collect::<Vec<_>>())
        }),
        solution_gap_decreasing: strictly_decreasing(&gaps.iter().map(|g| g.value).collect::<Vec<_>>()),
    };
    if norms.iter().any(|n| !n.norm.is_finite()) {
        return Err(Error::InvalidInput("non-finite gradient norm on a finite grid".into()));
    }
    Ok(SweepReport {
        epsilons,
        region: region.clone(),
        region_measure: measure,
        norms,
        distribution,
        localization,
        caratheodory,
        mismatch,
        solution_gap: gaps,
        median_gradient: median,
        summary,
    })
}
