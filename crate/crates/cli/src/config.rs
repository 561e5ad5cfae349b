use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use homconc::concentration::{AnalyticIntegrand, DEFAULT_DIVERGENCE_FACTOR};
use homconc::fem::{BoundaryCondition, Region};
use homconc::geometry::{build_homogeneous, build_laminate, rasterize_schulgasser};
use homconc::macro_solver::MacroProblem;
use homconc::sweep::{Integrand, TestFunction};
use homconc::voxel_io::read_grid;
use homconc::{CellGrid, Crystallite, EffectiveTensor, SchulgasserCell, SolverOptions, Tensor2};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub geometry: Option<Geometry>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, rename = "macro")]
    pub macro_problem: Option<MacroSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    Homogeneous {
        tensor: Vec<Vec<f64>>,
    },
    Laminate {
        #[serde(default)]
        normal_axis: usize,
        fractions: Vec<f64>,
        tensors: Vec<Vec<Vec<f64>>>,
    },
    /// Voxel grid file written by `solve-cell` or by hand.
    Multiphase {
        file: PathBuf,
    },
    Schulgasser {
        crystallites: Vec<CrystalliteSpec>,
        lambda2: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalliteSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub resolution: Option<usize>,
    #[serde(default = "default_cell_tol")]
    pub tol: f64,
    #[serde(default)]
    pub max_iter: Option<usize>,
}

fn default_cell_tol() -> f64 {
    homconc::cell_solver::DEFAULT_TOL
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { resolution: None, tol: default_cell_tol(), max_iter: None }
    }
}

impl SolverSection {
    pub fn options(&self) -> SolverOptions {
        SolverOptions { tol: self.tol, max_iter: self.max_iter }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMode {
    #[default]
    Numeric,
    Analytic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_p_grid")]
    pub p_grid: Vec<f64>,
    #[serde(default)]
    pub phases: Vec<u8>,
    #[serde(default)]
    pub t_grid: Vec<f64>,
    /// Defaults to the first unit vector.
    #[serde(default)]
    pub gradient: Option<Vec<f64>>,
    #[serde(default)]
    pub mode: MomentMode,
    #[serde(default = "default_integrand")]
    pub integrand: AnalyticIntegrand,
    /// Directory holding `P.vox` from an earlier `solve-cell` run.
    #[serde(default)]
    pub corrector: Option<PathBuf>,
    #[serde(default)]
    pub threshold: Option<ThresholdSection>,
    /// Measurement boxes; defaults to the centered half of the domain.
    #[serde(default)]
    pub regions: Vec<Region>,
}

fn default_p_grid() -> Vec<f64> {
    vec![2.0, 3.0, 4.0]
}

fn default_integrand() -> AnalyticIntegrand {
    AnalyticIntegrand::Direct
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            p_grid: default_p_grid(),
            phases: Vec::new(),
            t_grid: Vec::new(),
            gradient: None,
            mode: MomentMode::Numeric,
            integrand: default_integrand(),
            corrector: None,
            threshold: None,
            regions: Vec::new(),
        }
    }
}

impl AnalysisSection {
    pub fn gradient(&self, dim: usize) -> Vec<f64> {
        self.gradient.clone().unwrap_or_else(|| {
            let mut e = vec![0.0; dim];
            e[0] = 1.0;
            e
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    pub resolutions: Vec<usize>,
    pub p_scan: Vec<f64>,
    #[serde(default = "default_factor")]
    pub factor: f64,
}

fn default_factor() -> f64 {
    DEFAULT_DIVERGENCE_FACTOR
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceSpec {
    Uniform(f64),
    PerElement(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slabs {
    pub axis: usize,
    pub cuts: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroSection {
    pub extents: Vec<f64>,
    pub cells: Vec<usize>,
    /// Subdomain label per element; `slabs` is the shorthand for layers.
    #[serde(default)]
    pub partition: Option<Vec<usize>>,
    #[serde(default)]
    pub slabs: Option<Slabs>,
    #[serde(default = "default_source")]
    pub source: SourceSpec,
    pub boundary: Vec<BoundaryCondition>,
    /// Cell geometry per subdomain, overriding the top-level geometry.
    #[serde(default)]
    pub subdomain_geometry: BTreeMap<usize, Geometry>,
}

fn default_source() -> SourceSpec {
    SourceSpec::Uniform(0.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub p_list: Option<Vec<f64>>,
    #[serde(default)]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub region: Option<Region>,
    #[serde(default)]
    pub elements_per_period: Option<usize>,
    #[serde(default)]
    pub test_functions: Option<Vec<TestFunction>>,
    #[serde(default)]
    pub integrands: Option<Vec<Integrand>>,
    #[serde(default)]
    pub integrand_growth: Option<f64>,
    #[serde(default)]
    pub mismatch_exponents: Option<Vec<f64>>,
    #[serde(default)]
    pub tol: Option<f64>,
    /// Exit with a check failure when a trend or sandwich verdict is false.
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    /// Overrides `1/(2λ₂ − 1)`; used to confirm the checks can fail.
    #[serde(default)]
    pub lambda1: Option<f64>,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_ladder")]
    pub ladder: Vec<usize>,
}

fn default_points() -> usize {
    100
}

fn default_ladder() -> Vec<usize> {
    vec![16, 32, 64]
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { lambda1: None, points: default_points(), ladder: default_ladder() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub directory: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: None, formats: default_formats() }
    }
}

/// Parsed config plus the raw bytes and the directory relative paths refer to.
pub struct LoadedConfig {
    pub run: RunConfig,
    pub path: PathBuf,
    pub base: PathBuf,
    pub bytes: Vec<u8>,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let run: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { run, path: path.to_path_buf(), base, bytes })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base.join(p) }
    }

    pub fn geometry(&self) -> Result<&Geometry, CliError> {
        self.run.geometry.as_ref().ok_or_else(|| CliError::Config("missing geometry section".into()))
    }

    pub fn macro_section(&self) -> Result<&MacroSection, CliError> {
        self.run.macro_problem.as_ref().ok_or_else(|| CliError::Config("missing macro section".into()))
    }
}

fn tensor(rows: &[Vec<f64>]) -> Result<Tensor2, CliError> {
    Ok(Tensor2::from_rows(rows)?)
}

impl Geometry {
    pub fn schulgasser(&self) -> Option<Result<SchulgasserCell, CliError>> {
        match self {
            Geometry::Schulgasser { crystallites, lambda2 } => {
                let balls = crystallites.iter().map(|c| Crystallite { center: c.center, radius: c.radius }).collect();
                Some(SchulgasserCell::new(balls, *lambda2).map_err(CliError::from))
            }
            _ => None,
        }
    }

    /// Voxel grid at `resolution`; grid files carry their own resolution,
    /// which must agree when both are given.
    pub fn build(&self, cfg: &LoadedConfig, resolution: Option<usize>) -> Result<CellGrid, CliError> {
        let need = || resolution.ok_or_else(|| CliError::Config("solver.resolution is required".into()));
        match self {
            Geometry::Homogeneous { tensor: t } => Ok(build_homogeneous(tensor(t)?, need()?)?),
            Geometry::Laminate { normal_axis, fractions, tensors } => {
                let ts = tensors.iter().map(|t| tensor(t)).collect::<Result<Vec<_>, _>>()?;
                Ok(build_laminate(*normal_axis, fractions, &ts, need()?)?)
            }
            Geometry::Multiphase { file } => {
                let grid = read_grid(&cfg.resolve(file))?;
                if let Some(n) = resolution {
                    if n != grid.resolution() {
                        return Err(CliError::Config(format!(
                            "solver.resolution {n} disagrees with the grid file ({})",
                            grid.resolution()
                        )));
                    }
                }
                Ok(grid)
            }
            Geometry::Schulgasser { .. } => Ok(rasterize_schulgasser(&self.schulgasser().unwrap()?, need()?)?),
        }
    }
}

impl MacroSection {
    /// Macro problem with the given subdomain tensors.
    pub fn problem_with(&self, tensors: BTreeMap<usize, EffectiveTensor>) -> Result<MacroProblem, CliError> {
        let mut problem = MacroProblem::uniform(
            &self.extents,
            &self.cells,
            EffectiveTensor::identity(self.extents.len()),
            0.0,
            self.boundary.clone(),
        )?;
        if let Some(s) = &self.slabs {
            if self.partition.is_some() {
                return Err(CliError::Config("give either macro.partition or macro.slabs".into()));
            }
            problem = problem.with_slabs(s.axis, &s.cuts)?;
        }
        if let Some(p) = &self.partition {
            problem.partition = p.clone();
        }
        problem.source = match &self.source {
            SourceSpec::Uniform(f) => vec![*f; problem.partition.len()],
            SourceSpec::PerElement(v) => v.clone(),
        };
        problem.tensors = tensors;
        problem.validate()?;
        Ok(problem)
    }

    pub fn subdomains(&self) -> Result<Vec<usize>, CliError> {
        let probe = self.problem_with_any()?;
        let mut ids = probe.partition.clone();
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }

    fn problem_with_any(&self) -> Result<MacroProblem, CliError> {
        let d = self.extents.len();
        let mut ids: Vec<usize> = self.partition.clone().unwrap_or_default();
        ids.extend(0..=self.slabs.as_ref().map_or(0, |s| s.cuts.len()));
        let tensors = ids.into_iter().map(|i| (i, EffectiveTensor::identity(d))).collect();
        self.problem_with(tensors)
    }
}
