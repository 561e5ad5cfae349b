//! Homogenized boundary-value problem `−div(A^E ∇u^H) = f` on a box with
//! subdomain-wise constant effective tensors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cell_solver::{CorrectorSolution, EffectiveTensor};
use crate::error::{invalid, Error, Result};
use crate::fem::{solve_structured, BoundaryCondition, FemSolution, StructuredMesh};
use crate::tensor::packed_len;

pub const DEFAULT_MACRO_TOL: f64 = 1e-10;

/// Homogenized problem on a structured box mesh.
///
/// `partition[e]` is the subdomain of element `e`; `boundary[2·axis]` and
/// `boundary[2·axis + 1]` are the low and high sides along `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroProblem {
    pub extents: Vec<f64>,
    pub cells: Vec<usize>,
    pub partition: Vec<usize>,
    pub tensors: BTreeMap<usize, EffectiveTensor>,
    pub source: Vec<f64>,
    pub boundary: Vec<BoundaryCondition>,
}

impl MacroProblem {
    /// Single subdomain `0` with tensor `a` and uniform source `f`.
    pub fn uniform(
        extents: &[f64],
        cells: &[usize],
        a: EffectiveTensor,
        f: f64,
        boundary: Vec<BoundaryCondition>,
    ) -> Result<Self> {
        let mesh = StructuredMesh::new(extents, cells)?;
        let ne = mesh.num_elements();
        let problem = Self {
            extents: extents.to_vec(),
            cells: cells.to_vec(),
            partition: vec![0; ne],
            tensors: BTreeMap::from([(0, a)]),
            source: vec![f; ne],
            boundary,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn mesh(&self) -> Result<StructuredMesh> {
        StructuredMesh::new(&self.extents, &self.cells)
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    /// Reassigns subdomains so that elements with midpoint coordinate along
    /// `axis` above each entry of `cuts` move to the next subdomain id.
    pub fn with_slabs(mut self, axis: usize, cuts: &[f64]) -> Result<Self> {
        let mesh = self.mesh()?;
        if axis >= mesh.dim() {
            return invalid(format!("axis {axis} out of range"));
        }
        let h = mesh.spacing(axis);
        for &c in cuts {
            let k = c / h;
            if (k - k.round()).abs() > 1e-9 {
                return invalid(format!("subdomain cut at {c} does not align with element faces"));
            }
        }
        self.partition = (0..mesh.num_elements())
            .map(|e| {
                let x = mesh.element_midpoint(e)[axis];
                cuts.iter().filter(|&&c| x > c).count()
            })
            .collect();
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let mesh = self.mesh()?;
        let d = mesh.dim();
        let ne = mesh.num_elements();
        if self.partition.len() != ne || self.source.len() != ne {
            return invalid(format!("partition and source need one entry per element ({ne})"));
        }
        if self.boundary.len() != 2 * d {
            return invalid(format!("boundary table needs {} sides", 2 * d));
        }
        if let Some(f) = self.source.iter().find(|f| !f.is_finite()) {
            return invalid(format!("non-finite source value {f}"));
        }
        for bc in &self.boundary {
            let v = match *bc {
                BoundaryCondition::Dirichlet { value } => value,
                BoundaryCondition::Neumann { flux } => flux,
            };
            if !v.is_finite() {
                return invalid("non-finite boundary data");
            }
        }
        for id in &self.partition {
            if !self.tensors.contains_key(id) {
                return Err(Error::Config(format!("subdomain {id} has no effective tensor")));
            }
        }
        for (id, t) in &self.tensors {
            if t.dim != d {
                return invalid(format!("tensor of subdomain {id} has dimension {}", t.dim));
            }
            if t.asymmetry() > 1e-6 * t.entries.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())) {
                return Err(Error::NotSymmetric { row: 0, col: 1, gap: t.asymmetry() });
            }
            let ev = t.eigenvalues();
            if ev.iter().any(|&e| !(e > 0.0)) {
                return Err(Error::PhaseCoercivity {
                    phase: *id,
                    eigenvalue: ev.iter().cloned().fold(f64::INFINITY, f64::min),
                });
            }
        }
        Ok(())
    }

    /// Packed symmetric tensor per element, symmetrized from the stored entries.
    fn element_coefficients(&self) -> Vec<f64> {
        let d = self.dim();
        let packed: BTreeMap<usize, Vec<f64>> = self
            .tensors
            .iter()
            .map(|(id, t)| {
                let mut v = Vec::with_capacity(packed_len(d));
                for i in 0..d {
                    for j in i..d {
                        v.push(0.5 * (t.get(i, j) + t.get(j, i)));
                    }
                }
                (*id, v)
            })
            .collect();
        self.partition.iter().flat_map(|id| packed[id].iter().copied()).collect()
    }
}

/// Solution of the homogenized problem.
#[derive(Debug, Clone)]
pub struct MacroSolution {
    pub fem: FemSolution,
    pub partition: Vec<usize>,
}

impl MacroSolution {
    pub fn mesh(&self) -> &StructuredMesh {
        &self.fem.mesh
    }

    /// Nodal values of `u^H`.
    pub fn u_h(&self) -> &[f64] {
        &self.fem.u
    }

    /// Element-constant `∇u^H`.
    pub fn grad(&self, e: usize) -> &[f64] {
        self.fem.element_gradient(e)
    }

    pub fn subdomain(&self, e: usize) -> usize {
        self.partition[e]
    }

    pub fn residual(&self) -> f64 {
        self.fem.residual
    }

    /// CSV of nodal values: coordinates then `u`.
    pub fn nodal_csv(&self) -> String {
        let mesh = self.mesh();
        let d = mesh.dim();
        let mut s: String = (0..d).map(|k| format!("x{},", k + 1)).collect();
        s.push_str("u\n");
        for (n, u) in self.fem.u.iter().enumerate() {
            let x = mesh.node_position(n);
            for xk in &x[..d] {
                s.push_str(&format!("{xk:.17e},"));
            }
            s.push_str(&format!("{u:.17e}\n"));
        }
        s
    }

    /// CSV of element gradients: element, subdomain, midpoint, gradient.
    pub fn gradient_csv(&self) -> String {
        let mesh = self.mesh();
        let d = mesh.dim();
        let mut s = String::from("element,subdomain");
        for k in 0..d {
            s.push_str(&format!(",x{}", k + 1));
        }
        for k in 0..d {
            s.push_str(&format!(",du_dx{}", k + 1));
        }
        s.push('\n');
        for e in 0..mesh.num_elements() {
            s.push_str(&format!("{e},{}", self.partition[e]));
            for xk in &mesh.element_midpoint(e)[..d] {
                s.push_str(&format!(",{xk:.17e}"));
            }
            for g in self.grad(e) {
                s.push_str(&format!(",{g:.17e}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Solves the homogenized problem with Jacobi-preconditioned conjugate
/// gradients to relative residual `tol`.
pub fn solve_homogenized(problem: &MacroProblem, tol: f64) -> Result<MacroSolution> {
    problem.validate()?;
    let mesh = problem.mesh()?;
    let max_iter = 20 * mesh.num_nodes() + 100;
    let fem = solve_structured(
        mesh,
        &problem.element_coefficients(),
        &problem.source,
        &problem.boundary,
        tol,
        max_iter,
    )?;
    Ok(MacroSolution { fem, partition: problem.partition.clone() })
}

/// Local two-scale gradient `y ↦ P(y) ∇u^H(x_e)` on the cell grid of the
/// element's subdomain, `dim` values per voxel.
pub fn two_scale_reconstruction(
    macro_solution: &MacroSolution,
    cells: &BTreeMap<usize, CorrectorSolution>,
    element: usize,
) -> Result<Vec<f64>> {
    if element >= macro_solution.mesh().num_elements() {
        return invalid(format!("element {element} out of range"));
    }
    let id = macro_solution.subdomain(element);
    let sol = cells
        .get(&id)
        .ok_or_else(|| Error::Config(format!("no cell data for subdomain {id}")))?;
    Ok(apply_field(sol, macro_solution.grad(element)))
}

/// `P(y) ξ` at every voxel.
pub fn apply_field(sol: &CorrectorSolution, xi: &[f64]) -> Vec<f64> {
    let p = sol.p_field();
    let d = p.dim();
    let mut out = vec![0.0; p.len() * d];
    for (k, o) in out.chunks_mut(d).enumerate() {
        let m = p.matrix(k);
        for i in 0..d {
            o[i] = (0..d).map(|j| m[i * d + j] * xi[j]).sum();
        }
    }
    out
}
