use std::collections::BTreeMap;

use homconc::cell_solver::voigt_reuss_bounds;
use homconc::concentration::{
    bound_integral, chebyshev_tail, concentration_report, estimate_threshold_exponent, AnalyticMoments, CellMoments,
    FieldMoments, MomentLevel, MomentSpec, MomentValue,
};
use homconc::fem::Region;
use homconc::geometry::rasterize_schulgasser;
use homconc::macro_solver::{solve_homogenized, DEFAULT_MACRO_TOL};
use homconc::schulgasser::{analytic_effective, verify_invariants, OracleCheck};
use homconc::sweep::{run_sweep, SweepConfig};
use homconc::voxel_io::{read_voxels, write_corrector, write_grid, MATRIX_LAYOUT};
use homconc::{
    effective_tensor, solve_corrector, CellGrid, CorrectorSolution, EffectiveTensor, MatrixField, SchulgasserCell,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Geometry, LoadedConfig, MomentMode};
use crate::{CliError, Output};

type CmdResult = Result<Value, CliError>;

fn solve(cfg: &LoadedConfig, grid: CellGrid) -> Result<CorrectorSolution, CliError> {
    Ok(solve_corrector(grid, cfg.run.solver.options())?)
}

pub fn solve_cell(cfg: &LoadedConfig, out: &mut Output) -> CmdResult {
    let geometry = cfg.geometry()?;
    let grid = geometry.build(cfg, cfg.run.solver.resolution)?;
    let sol = solve(cfg, grid)?;
    let ae = effective_tensor(&sol);
    let (reuss, voigt) = voigt_reuss_bounds(sol.grid());
    let mut notes = Vec::new();
    if geometry.schulgasser().is_some() {
        let dev = ae.max_abs_diff(&EffectiveTensor::identity(3));
        notes.push(format!(
            "staircase rasterization at resolution {}: |A^E - I|_max = {dev:.3e}; the exact tensor is I and the \
             deviation shrinks under refinement",
            sol.grid().resolution()
        ));
    }
    let corrector_dir = out.path("corrector");
    write_corrector(&corrector_dir, &sol)?;
    write_grid(&out.path("cell.vox"), sol.grid())?;
    out.always_json(
        "effective_tensor.json",
        &json!({
            "effective_tensor": ae,
            "eigenvalues": ae.eigenvalues(),
            "reuss": reuss.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "voigt": voigt.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "resolution": sol.grid().resolution(),
            "residual": sol.residual(),
            "iterations": sol.iterations(),
            "reference_medium": sol.reference_medium(),
            "notes": notes,
        }),
    )?;
    Ok(json!({ "cell_tol": sol.tol() }))
}

/// Corrector field read back from a `solve-cell` output directory.
struct StoredField {
    field: MatrixField,
    labels: Vec<u8>,
    num_phases: usize,
    resolution: usize,
}

fn load_field(cfg: &LoadedConfig, dir: &std::path::Path) -> Result<StoredField, CliError> {
    let data = read_voxels(&cfg.resolve(dir).join("P.vox"))?;
    let h = &data.header;
    if h.tensor_layout != MATRIX_LAYOUT || h.components != h.dim * h.dim {
        return Err(CliError::Config(format!("{} does not hold a corrector matrix field", dir.display())));
    }
    Ok(StoredField {
        field: MatrixField::uniform(h.dim, data.values.clone())?,
        labels: data.phases,
        num_phases: h.num_phases,
        resolution: h.resolution,
    })
}

fn schulgasser_cell(geometry: &Geometry) -> Result<SchulgasserCell, CliError> {
    geometry.schulgasser().unwrap_or_else(|| Err(CliError::Config("analytic mode needs a schulgasser geometry".into())))
}

pub fn moments(cfg: &LoadedConfig, out: &mut Output) -> CmdResult {
    let analysis = &cfg.run.analysis;
    let mut tolerances = json!({});
    let stored;
    let solved;
    let analytic;
    let moments: &dyn CellMoments = match (analysis.mode, &analysis.corrector) {
        (MomentMode::Analytic, _) => {
            analytic = AnalyticMoments { cell: schulgasser_cell(cfg.geometry()?)?, integrand: analysis.integrand };
            &analytic
        }
        (MomentMode::Numeric, Some(dir)) => {
            stored = load_field(cfg, dir)?;
            solved = FieldMoments {
                field: &stored.field,
                labels: Some(&stored.labels),
                num_phases: stored.num_phases,
                resolution: Some(stored.resolution),
            };
            &solved
        }
        (MomentMode::Numeric, None) => {
            let sol = solve(cfg, cfg.geometry()?.build(cfg, cfg.run.solver.resolution)?)?;
            tolerances["cell_tol"] = json!(sol.tol());
            stored = StoredField {
                field: sol.p_field().clone(),
                labels: sol.grid().phases().to_vec(),
                num_phases: sol.grid().num_phases(),
                resolution: sol.grid().resolution(),
            };
            solved = FieldMoments {
                field: &stored.field,
                labels: Some(&stored.labels),
                num_phases: stored.num_phases,
                resolution: Some(stored.resolution),
            };
            &solved
        }
    };
    let spec = MomentSpec {
        p_grid: analysis.p_grid.clone(),
        phases: analysis.phases.clone(),
        gradient: analysis.gradient(moments.dim()),
    };
    let mut report = concentration_report(moments, &spec)?;
    if let Some(t) = &analysis.threshold {
        let geometry = cfg.geometry()?;
        let mut levels = Vec::with_capacity(t.resolutions.len());
        for &n in &t.resolutions {
            let sol = solve(cfg, geometry.build(cfg, Some(n))?)?;
            levels.push(MomentLevel::from_moments(&FieldMoments::of_solution(&sol), &t.p_scan)?);
        }
        let estimate = estimate_threshold_exponent(moments.dim(), &t.p_scan, &levels, t.factor)?;
        tolerances["divergence_factor"] = json!(t.factor);
        report = report.with_threshold(estimate);
    }
    out.csv("concentration.csv", &report.to_csv())?;
    out.json("concentration.json", &report)?;
    Ok(tolerances)
}

#[derive(Serialize)]
struct BoundRow {
    region: usize,
    p: f64,
    phase: Option<u8>,
    lower_bound: MomentValue,
    /// `‖∇u^H‖_{L^p(D)}` for comparison.
    macro_gradient_norm: f64,
}

#[derive(Serialize)]
struct TailRow {
    region: usize,
    p: f64,
    phase: Option<u8>,
    t: f64,
    bound: f64,
}

fn phase_cell(phase: Option<u8>) -> i64 {
    phase.map_or(-1, i64::from)
}

pub fn bound(cfg: &LoadedConfig, out: &mut Output) -> CmdResult {
    let section = cfg.macro_section()?;
    let analysis = &cfg.run.analysis;
    let dim = section.extents.len();
    let subdomains = section.subdomains()?;
    let mut solutions = BTreeMap::new();
    let mut analytic = BTreeMap::new();
    let mut tensors = BTreeMap::new();
    for &k in &subdomains {
        let geometry = match section.subdomain_geometry.get(&k) {
            Some(g) => g,
            None => cfg.geometry()?,
        };
        match analysis.mode {
            MomentMode::Analytic => {
                let cell = schulgasser_cell(geometry)?;
                tensors.insert(k, analytic_effective(&cell));
                analytic.insert(k, AnalyticMoments { cell, integrand: analysis.integrand });
            }
            MomentMode::Numeric => {
                let sol = solve(cfg, geometry.build(cfg, cfg.run.solver.resolution)?)?;
                tensors.insert(k, effective_tensor(&sol));
                solutions.insert(k, sol);
            }
        }
    }
    if let Some((k, t)) = tensors.iter().find(|(_, t)| t.dim != dim) {
        return Err(CliError::Config(format!("cell of subdomain {k} is {}-dimensional, macro domain is {dim}", t.dim)));
    }
    let problem = section.problem_with(tensors.clone())?;
    let macro_solution = solve_homogenized(&problem, DEFAULT_MACRO_TOL)?;

    let field_moments: BTreeMap<usize, FieldMoments> =
        solutions.iter().map(|(&k, s)| (k, FieldMoments::of_solution(s))).collect();
    let mut cells: BTreeMap<usize, &dyn CellMoments> = BTreeMap::new();
    for (&k, m) in &field_moments {
        cells.insert(k, m);
    }
    for (&k, m) in &analytic {
        cells.insert(k, m);
    }
    let unit = MatrixField::identity(dim, 1);
    let unit_moments = FieldMoments::new(&unit, None)?;
    let plain: BTreeMap<usize, &dyn CellMoments> =
        subdomains.iter().map(|&k| (k, &unit_moments as &dyn CellMoments)).collect();

    let regions = if analysis.regions.is_empty() { vec![Region::centered_half(&section.extents)] } else { analysis.regions.clone() };
    let mut selections = vec![None];
    selections.extend(analysis.phases.iter().map(|&i| Some(i)));
    let mut rows = Vec::new();
    let mut tails = Vec::new();
    for (r, region) in regions.iter().enumerate() {
        for &phase in &selections {
            for &p in &analysis.p_grid {
                let integral = bound_integral(&macro_solution, &cells, p, region, phase)?;
                let norm = bound_integral(&macro_solution, &plain, p, region, None)?.as_f64().powf(1.0 / p);
                rows.push(BoundRow {
                    region: r,
                    p,
                    phase,
                    lower_bound: integral.map(|v| v.powf(1.0 / p)),
                    macro_gradient_norm: norm,
                });
                for &t in &analysis.t_grid {
                    tails.push(TailRow { region: r, p, phase, t, bound: chebyshev_tail(integral, p, t, region.measure())? });
                }
            }
        }
    }

    let mut csv = String::from("region,p,phase,value,divergent_flag,macro_gradient_norm\n");
    for b in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.17e}\n",
            b.region,
            b.p,
            phase_cell(b.phase),
            b.lower_bound.csv_cell(),
            u8::from(b.lower_bound.is_divergent()),
            b.macro_gradient_norm
        ));
    }
    out.csv("bound.csv", &csv)?;
    let mut csv = String::from("region,p,phase,t,value\n");
    for t in &tails {
        csv.push_str(&format!("{},{},{},{},{:.17e}\n", t.region, t.p, phase_cell(t.phase), t.t, t.bound));
    }
    out.csv("chebyshev.csv", &csv)?;
    out.csv("macro_nodal.csv", &macro_solution.nodal_csv())?;
    out.csv("macro_gradient.csv", &macro_solution.gradient_csv())?;
    out.json(
        "bound.json",
        &json!({
            "regions": regions,
            "effective_tensors": tensors,
            "macro_residual": macro_solution.residual(),
            "bounds": rows,
            "chebyshev": tails,
        }),
    )?;
    Ok(json!({ "cell_tol": cfg.run.solver.tol, "macro_tol": DEFAULT_MACRO_TOL }))
}

#[derive(Serialize)]
struct LadderRow {
    resolution: usize,
    error: f64,
}

/// Largest admitted `|A^E − I|_max` at the finest ladder level.
const LADDER_TOLERANCE: f64 = 5e-2;

pub fn verify_oracle(cfg: &LoadedConfig, out: &mut Output) -> CmdResult {
    let cell = match &cfg.run.geometry {
        Some(g) => schulgasser_cell(g)?,
        None => SchulgasserCell::centered(0.35, 0.75)?,
    };
    let oracle = &cfg.run.oracle;
    let lambda1 = oracle.lambda1.unwrap_or(cell.lambda1());
    let mut checks = verify_invariants(&cell, lambda1, oracle.points);
    let mut ladder = Vec::new();
    for &n in &oracle.ladder {
        let sol = solve(cfg, rasterize_schulgasser(&cell, n)?)?;
        ladder.push(LadderRow { resolution: n, error: effective_tensor(&sol).max_abs_diff(&EffectiveTensor::identity(3)) });
    }
    if !ladder.is_empty() {
        let growth = ladder.windows(2).map(|w| w[1].error - w[0].error).fold(f64::NEG_INFINITY, f64::max);
        checks.push(OracleCheck {
            name: "ladder_strictly_decreasing".into(),
            passed: ladder.len() < 2 || growth < 0.0,
            value: if ladder.len() < 2 { 0.0 } else { growth },
            tolerance: 0.0,
        });
        let finest = ladder.last().unwrap().error;
        checks.push(OracleCheck {
            name: "ladder_finest_error".into(),
            passed: finest <= LADDER_TOLERANCE,
            value: finest,
            tolerance: LADDER_TOLERANCE,
        });
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let mut csv = String::from("check,passed,value,tolerance\n");
    for c in &checks {
        csv.push_str(&format!("{},{},{:.17e},{:e}\n", c.name, u8::from(c.passed), c.value, c.tolerance));
    }
    out.csv("oracle.csv", &csv)?;
    let mut csv = String::from("resolution,error\n");
    for l in &ladder {
        csv.push_str(&format!("{},{:.17e}\n", l.resolution, l.error));
    }
    out.csv("ladder.csv", &csv)?;
    out.always_json(
        "oracle.json",
        &json!({ "passed": failed.is_empty(), "lambda1": lambda1, "checks": checks, "ladder": ladder }),
    )?;
    if !failed.is_empty() {
        return Err(CliError::Check(format!("oracle checks failed: {}", failed.join(", "))));
    }
    Ok(json!({ "cell_tol": cfg.run.solver.tol }))
}

pub fn sweep(cfg: &LoadedConfig, out: &mut Output) -> CmdResult {
    let s = cfg.run.sweep.as_ref().ok_or_else(|| CliError::Config("missing sweep section".into()))?;
    let section = cfg.macro_section()?;
    let cell = cfg.geometry()?.build(cfg, cfg.run.solver.resolution)?;
    let placeholders = section
        .subdomains()?
        .into_iter()
        .map(|k| (k, EffectiveTensor::identity(section.extents.len())))
        .collect();
    let problem = section.problem_with(placeholders)?;
    let mut sc = SweepConfig::new(cell, problem, s.epsilons.clone());
    if let Some(v) = &s.p_list {
        sc.p_list = v.clone();
    }
    if let Some(v) = &s.t_grid {
        sc.t_grid = v.clone();
    }
    if let Some(v) = &s.region {
        sc.region = v.clone();
    }
    if let Some(v) = s.elements_per_period {
        sc.elements_per_period = v;
    }
    if let Some(v) = &s.test_functions {
        sc.test_functions = v.clone();
    }
    if let Some(v) = &s.integrands {
        sc.integrands = v.clone();
    }
    if let Some(v) = s.integrand_growth {
        sc.integrand_growth = v;
    }
    if let Some(v) = &s.mismatch_exponents {
        sc.mismatch_exponents = v.clone();
    }
    if let Some(v) = s.tol {
        sc.tol = v;
    }
    sc.cell_tol = cfg.run.solver.tol;
    let report = run_sweep(&sc)?;
    out.csv("sweep.csv", &report.to_csv())?;
    out.json("sweep.json", &report)?;
    out.always_json("summary.json", &report.summary)?;
    let summary = &report.summary;
    let verdicts = [
        ("lower_bound_sandwich", summary.lower_bound_sandwich),
        ("chebyshev_sandwich", summary.chebyshev_sandwich),
        ("localization_decreasing", summary.localization_decreasing),
        ("mismatch_decreasing", summary.mismatch_decreasing),
        ("solution_gap_decreasing", summary.solution_gap_decreasing),
    ];
    let failed: Vec<&str> = verdicts.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    if s.strict && !failed.is_empty() {
        return Err(CliError::Check(format!("sweep verdicts failed: {}", failed.join(", "))));
    }
    Ok(json!({ "cell_tol": sc.cell_tol, "fine_tol": sc.tol }))
}
