//! Continuous multilinear (Q1) finite elements on structured box meshes.
//!
//! Nodes and elements are numbered row-major with axis 0 slowest. Local
//! node `a` of an element sits at the corner whose offset along axis `k` is
//! bit `k` of `a`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::reduce::{dot, tree_sum};
use crate::tensor::{apply_upper, packed_len};

/// Axis-aligned box `[0, extents]` split into `cells` elements per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredMesh {
    dim: usize,
    extents: [f64; 3],
    cells: [usize; 3],
}

impl StructuredMesh {
    pub fn new(extents: &[f64], cells: &[usize]) -> Result<Self> {
        let dim = extents.len();
        if !(dim == 2 || dim == 3) || cells.len() != dim {
            return invalid("mesh needs matching extents and cell counts in 2 or 3 dimensions");
        }
        if extents.iter().any(|&e| !(e > 0.0) || !e.is_finite()) || cells.contains(&0) {
            return invalid("mesh extents and cell counts must be positive");
        }
        let mut e = [1.0; 3];
        let mut c = [1; 3];
        e[..dim].copy_from_slice(extents);
        c[..dim].copy_from_slice(cells);
        Ok(Self { dim, extents: e, cells: c })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extents[axis] / self.cells[axis] as f64
    }

    pub fn num_elements(&self) -> usize {
        self.cells().iter().product()
    }

    pub fn num_nodes(&self) -> usize {
        self.cells().iter().map(|c| c + 1).product()
    }

    pub fn element_volume(&self) -> f64 {
        (0..self.dim).map(|k| self.spacing(k)).product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.extents().iter().product()
    }

    fn nodes_per_element(&self) -> usize {
        1 << self.dim
    }

    pub fn element_index(&self, e: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        let mut rest = e;
        for k in (0..self.dim).rev() {
            idx[k] = rest % self.cells[k];
            rest /= self.cells[k];
        }
        idx
    }

    pub fn node_index(&self, n: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        let mut rest = n;
        for k in (0..self.dim).rev() {
            idx[k] = rest % (self.cells[k] + 1);
            rest /= self.cells[k] + 1;
        }
        idx
    }

    fn node_at(&self, idx: &[usize; 3]) -> usize {
        (0..self.dim).fold(0, |acc, k| acc * (self.cells[k] + 1) + idx[k])
    }

    fn element_at(&self, idx: &[usize; 3]) -> usize {
        (0..self.dim).fold(0, |acc, k| acc * self.cells[k] + idx[k])
    }

    /// Global node of local corner `a` of element `e`.
    pub fn element_node(&self, e: usize, a: usize) -> usize {
        let mut idx = self.element_index(e);
        for (k, i) in idx.iter_mut().enumerate().take(self.dim) {
            *i += (a >> k) & 1;
        }
        self.node_at(&idx)
    }

    pub fn node_position(&self, n: usize) -> [f64; 3] {
        let idx = self.node_index(n);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = idx[k] as f64 * self.spacing(k);
        }
        x
    }

    pub fn element_midpoint(&self, e: usize) -> [f64; 3] {
        let idx = self.element_index(e);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = (idx[k] as f64 + 0.5) * self.spacing(k);
        }
        x
    }

    /// Element containing `x` and the local coordinates of `x` in `[0, 1]^d`.
    pub fn locate(&self, x: &[f64]) -> Option<(usize, [f64; 3])> {
        let mut idx = [0; 3];
        let mut t = [0.0; 3];
        for k in 0..self.dim {
            if !(x[k] >= 0.0 && x[k] <= self.extents[k]) {
                return None;
            }
            let s = x[k] / self.spacing(k);
            let i = (s.floor() as usize).min(self.cells[k] - 1);
            idx[k] = i;
            t[k] = s - i as f64;
        }
        Some((self.element_at(&idx), t))
    }

    /// Nodes lying on boundary side `side` (`2·axis` low, `2·axis + 1` high).
    fn side_nodes(&self, side: usize) -> Vec<usize> {
        let (axis, high) = (side / 2, side % 2 == 1);
        let target = if high { self.cells[axis] } else { 0 };
        (0..self.num_nodes()).filter(|&n| self.node_index(n)[axis] == target).collect()
    }

    /// Elements adjacent to boundary side `side`.
    fn side_elements(&self, side: usize) -> Vec<usize> {
        let (axis, high) = (side / 2, side % 2 == 1);
        let target = if high { self.cells[axis] - 1 } else { 0 };
        (0..self.num_elements()).filter(|&e| self.element_index(e)[axis] == target).collect()
    }
}

/// Boundary condition on one side of the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryCondition {
    /// Prescribed value (zero unless stated).
    Dirichlet {
        #[serde(default)]
        value: f64,
    },
    /// Prescribed outward normal flux `n · A ∇u = flux`.
    Neumann { flux: f64 },
}

impl BoundaryCondition {
    pub fn is_dirichlet(&self) -> bool {
        matches!(self, BoundaryCondition::Dirichlet { .. })
    }
}

/// Axis-aligned measurement box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return invalid("region needs lo < hi on every axis");
        }
        Ok(Self { lo, hi })
    }

    /// Centered box with half the domain extent along every axis.
    pub fn centered_half(extents: &[f64]) -> Self {
        Self {
            lo: extents.iter().map(|e| 0.25 * e).collect(),
            hi: extents.iter().map(|e| 0.75 * e).collect(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.lo.iter().zip(&self.hi).zip(x).all(|((lo, hi), x)| *x >= *lo && *x <= *hi)
    }

    pub fn measure(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    /// Elements whose midpoint lies inside the box.
    pub fn elements(&self, mesh: &StructuredMesh) -> Vec<usize> {
        (0..mesh.num_elements()).filter(|&e| self.contains(&mesh.element_midpoint(e))).collect()
    }
}

/// Products of 1D shape-function integrals on `[0, 1]`.
fn mass1d(a: usize, b: usize) -> f64 {
    if a == b { 1.0 / 3.0 } else { 1.0 / 6.0 }
}

fn sign(bit: usize) -> f64 {
    if bit == 1 { 1.0 } else { -1.0 }
}

/// `∫_e ∂_j N_a ∂_l N_b`, indexed `[(j·d + l)·m² + a·m + b]` with `m = 2^d`.
fn gradient_products(mesh: &StructuredMesh) -> Vec<f64> {
    let d = mesh.dim();
    let m = mesh.nodes_per_element();
    let vol = mesh.element_volume();
    let mut g = vec![0.0; d * d * m * m];
    for j in 0..d {
        for l in 0..d {
            for a in 0..m {
                for b in 0..m {
                    let mut v = vol / (mesh.spacing(j) * mesh.spacing(l));
                    for k in 0..d {
                        let (ak, bk) = ((a >> k) & 1, (b >> k) & 1);
                        v *= if k == j && k == l {
                            sign(ak) * sign(bk)
                        } else if k == j {
                            0.5 * sign(ak)
                        } else if k == l {
                            0.5 * sign(bk)
                        } else {
                            mass1d(ak, bk)
                        };
                    }
                    g[(j * d + l) * m * m + a * m + b] = v;
                }
            }
        }
    }
    g
}

/// Assembled element stiffness matrices for a structured mesh with one
/// conductivity tensor per element.
#[derive(Debug, Clone)]
pub struct StiffnessOperator {
    mesh: StructuredMesh,
    /// `m × m` per element.
    ke: Vec<f64>,
    diag: Vec<f64>,
}

impl StiffnessOperator {
    /// `coeffs` holds packed symmetric tensors, one per element.
    pub fn new(mesh: StructuredMesh, coeffs: &[f64]) -> Result<Self> {
        let d = mesh.dim();
        let k = packed_len(d);
        if coeffs.len() != mesh.num_elements() * k {
            return invalid(format!(
                "expected {} coefficient entries, got {}",
                mesh.num_elements() * k,
                coeffs.len()
            ));
        }
        let m = mesh.nodes_per_element();
        let g = gradient_products(&mesh);
        let mut ke = vec![0.0; mesh.num_elements() * m * m];
        ke.par_chunks_mut(m * m).zip(coeffs.par_chunks(k)).for_each(|(out, a)| {
            for j in 0..d {
                for l in 0..d {
                    let mut col = [0.0; 3];
                    col[l] = 1.0;
                    let mut ac = [0.0; 3];
                    apply_upper(d, a, &col, &mut ac);
                    let ajl = ac[j];
                    if ajl == 0.0 {
                        continue;
                    }
                    let gjl = &g[(j * d + l) * m * m..(j * d + l + 1) * m * m];
                    for (o, gv) in out.iter_mut().zip(gjl) {
                        *o += ajl * gv;
                    }
                }
            }
        });
        let mut op = Self { mesh, ke, diag: Vec::new() };
        op.diag = (0..op.mesh.num_nodes()).into_par_iter().map(|n| op.node_row(n, |_, a, b| if a == b { 1.0 } else { 0.0 })).collect();
        Ok(op)
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    /// Sums `K_e[a][b] · weight(node_b, a, b)` over the elements around node `n`,
    /// in a fixed element order.
    fn node_row<F>(&self, n: usize, weight: F) -> f64
    where
        F: Fn(usize, usize, usize) -> f64,
    {
        let d = self.mesh.dim();
        let m = self.mesh.nodes_per_element();
        let idx = self.mesh.node_index(n);
        let mut acc = 0.0;
        'corners: for a in 0..m {
            // node n is local corner a of the element at idx − bits(a)
            let mut eidx = [0; 3];
            for k in 0..d {
                let bit = (a >> k) & 1;
                if idx[k] < bit || idx[k] - bit >= self.mesh.cells[k] {
                    continue 'corners;
                }
                eidx[k] = idx[k] - bit;
            }
            let e = self.mesh.element_at(&eidx);
            let row = &self.ke[(e * m + a) * m..(e * m + a + 1) * m];
            for (b, kab) in row.iter().enumerate() {
                acc += kab * weight(self.mesh.element_node(e, b), a, b);
            }
        }
        acc
    }

    /// `y = K x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(n, yn)| {
            *yn = self.node_row(n, |nb, _, _| x[nb]);
        });
    }

    /// `Σ_e u_eᵀ K_e u_e`, the discrete energy `∫ A ∇u·∇u`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let m = self.mesh.nodes_per_element();
        tree_sum(self.mesh.num_elements(), |e| {
            let ue: Vec<f64> = (0..m).map(|a| u[self.mesh.element_node(e, a)]).collect();
            let ke = &self.ke[e * m * m..(e + 1) * m * m];
            (0..m).map(|a| (0..m).map(|b| ue[a] * ke[a * m + b] * ue[b]).sum::<f64>()).sum()
        })
    }
}

/// Consistent load vector for an element-wise constant source and
/// side-wise constant Neumann fluxes.
pub fn load_vector(mesh: &StructuredMesh, source: &[f64], boundary: &[BoundaryCondition]) -> Vec<f64> {
    let d = mesh.dim();
    let m = mesh.nodes_per_element();
    let share = mesh.element_volume() / m as f64;
    let mut f = vec![0.0; mesh.num_nodes()];
    // gather per node in fixed element order
    f.par_iter_mut().enumerate().for_each(|(n, fn_)| {
        let idx = mesh.node_index(n);
        'corners: for a in 0..m {
            let mut eidx = [0; 3];
            for k in 0..d {
                let bit = (a >> k) & 1;
                if idx[k] < bit || idx[k] - bit >= mesh.cells[k] {
                    continue 'corners;
                }
                eidx[k] = idx[k] - bit;
            }
            *fn_ += source[mesh.element_at(&eidx)] * share;
        }
    });
    for (side, bc) in boundary.iter().enumerate() {
        if let BoundaryCondition::Neumann { flux } = *bc {
            let axis = side / 2;
            let face_area = mesh.element_volume() / mesh.spacing(axis);
            let per_node = flux * face_area / (m / 2) as f64;
            let high = side % 2;
            for e in mesh.side_elements(side) {
                for a in 0..m {
                    if (a >> axis) & 1 == high {
                        f[mesh.element_node(e, a)] += per_node;
                    }
                }
            }
        }
    }
    f
}

/// Nodal solution of a structured Q1 problem.
#[derive(Debug, Clone)]
pub struct FemSolution {
    pub mesh: StructuredMesh,
    pub u: Vec<f64>,
    /// Element-midpoint gradients, `dim` per element.
    pub grad: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Outward heat flux `∫ −n·A∇u` through the Dirichlet sides, from the
    /// nodal reactions.
    pub dirichlet_outflow: f64,
    /// `∫ A ∇u·∇u`.
    pub energy: f64,
    /// `∫ f u + ∫ g u` with the consistent load.
    pub load_work: f64,
}

impl FemSolution {
    pub fn element_gradient(&self, e: usize) -> &[f64] {
        let d = self.mesh.dim();
        &self.grad[e * d..(e + 1) * d]
    }

    /// Gradient of the multilinear interpolant at `x`.
    pub fn gradient_at(&self, x: &[f64]) -> Option<Vec<f64>> {
        let (e, t) = self.mesh.locate(x)?;
        Some(multilinear_gradient(&self.mesh, &self.u, e, &t))
    }

    pub fn value_at(&self, x: &[f64]) -> Option<f64> {
        let (e, t) = self.mesh.locate(x)?;
        let d = self.mesh.dim();
        let m = 1 << d;
        Some(
            (0..m)
                .map(|a| {
                    let shape: f64 = (0..d)
                        .map(|k| if (a >> k) & 1 == 1 { t[k] } else { 1.0 - t[k] })
                        .product();
                    shape * self.u[self.mesh.element_node(e, a)]
                })
                .sum(),
        )
    }
}

fn multilinear_gradient(mesh: &StructuredMesh, u: &[f64], e: usize, t: &[f64; 3]) -> Vec<f64> {
    let d = mesh.dim();
    let m = 1 << d;
    (0..d)
        .map(|j| {
            (0..m)
                .map(|a| {
                    let mut v = sign((a >> j) & 1) / mesh.spacing(j);
                    for k in 0..d {
                        if k != j {
                            v *= if (a >> k) & 1 == 1 { t[k] } else { 1.0 - t[k] };
                        }
                    }
                    v * u[mesh.element_node(e, a)]
                })
                .sum()
        })
        .collect()
}

/// Solves `K u = F` with the boundary conditions of each side.
///
/// Nodes shared by several Dirichlet sides take the value of the first such
/// side in side order. With no Dirichlet side the data must be compatible
/// (`∫f + ∫g = 0`); the solution is then normalized to zero nodal mean.
pub fn solve_structured(
    mesh: StructuredMesh,
    coeffs: &[f64],
    source: &[f64],
    boundary: &[BoundaryCondition],
    tol: f64,
    max_iter: usize,
) -> Result<FemSolution> {
    let d = mesh.dim();
    if boundary.len() != 2 * d {
        return invalid(format!("expected {} boundary sides, got {}", 2 * d, boundary.len()));
    }
    if source.len() != mesh.num_elements() {
        return invalid("one source value per element is required");
    }
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let op = StiffnessOperator::new(mesh.clone(), coeffs)?;
    let nn = mesh.num_nodes();
    let load = load_vector(&mesh, source, boundary);

    let mut fixed = vec![false; nn];
    let mut u = vec![0.0; nn];
    for (side, bc) in boundary.iter().enumerate() {
        if let BoundaryCondition::Dirichlet { value } = *bc {
            for n in mesh.side_nodes(side) {
                if !fixed[n] {
                    fixed[n] = true;
                    u[n] = value;
                }
            }
        }
    }
    let pure_neumann = !fixed.iter().any(|&f| f);
    if pure_neumann {
        let total = tree_sum(nn, |n| load[n]);
        let scale = tree_sum(nn, |n| load[n].abs()).max(1e-300);
        if total.abs() > 1e-10 * scale {
            return Err(Error::InvalidInput(format!(
                "pure Neumann problem is singular: ∫f + ∫g = {total:e} ≠ 0"
            )));
        }
        fixed[0] = true;
    }

    // b = F − K u_D on free nodes
    let mut ku = vec![0.0; nn];
    op.apply(&u, &mut ku);
    let b: Vec<f64> = (0..nn).map(|n| if fixed[n] { 0.0 } else { load[n] - ku[n] }).collect();
    let (x, iterations, residual) = pcg(&op, &fixed, &b, tol, max_iter)?;
    for n in 0..nn {
        if !fixed[n] {
            u[n] += x[n];
        }
    }
    if pure_neumann {
        let mean = tree_sum(nn, |n| u[n]) / nn as f64;
        u.iter_mut().for_each(|v| *v -= mean);
    }

    op.apply(&u, &mut ku);
    let dirichlet_outflow = if pure_neumann { 0.0 } else { -tree_sum(nn, |n| if fixed[n] { ku[n] - load[n] } else { 0.0 }) };
    let center = [0.5; 3];
    let grad: Vec<f64> = (0..mesh.num_elements())
        .into_par_iter()
        .flat_map_iter(|e| multilinear_gradient(&mesh, &u, e, &center))
        .collect();
    let energy = op.energy(&u);
    let load_work = dot(&load, &u);
    Ok(FemSolution { mesh, u, grad, residual, iterations, dirichlet_outflow, energy, load_work })
}

/// Jacobi-preconditioned conjugate gradients on the free nodes.
fn pcg(op: &StiffnessOperator, fixed: &[bool], b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize, f64)> {
    let nn = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; nn];
    if bnorm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let inv_diag: Vec<f64> = (0..nn).map(|n| if fixed[n] { 0.0 } else { 1.0 / op.diag[n] }).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; nn];
    let mut rz = dot(&r, &z);
    let mut iters = 0;
    let mut res = 1.0;
    while iters < max_iter {
        op.apply(&p, &mut q);
        q.par_iter_mut().zip(fixed).for_each(|(q, &f)| if f { *q = 0.0 });
        let pq = dot(&p, &q);
        let step = rz / pq;
        x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += step * p);
        r.par_iter_mut().zip(&q).for_each(|(r, q)| *r -= step * q);
        iters += 1;
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= tol {
            break;
        }
        z.par_iter_mut().zip(&r).zip(&inv_diag).for_each(|((z, r), d)| *z = r * d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    // true residual
    let mut kx = vec![0.0; nn];
    op.apply(&x, &mut kx);
    let true_res = tree_sum(nn, |n| if fixed[n] { 0.0 } else { (b[n] - kx[n]).powi(2) }).sqrt() / bnorm;
    let res = res.max(true_res);
    if res <= tol * 10.0 && iters <= max_iter && (res <= tol || true_res <= tol) {
        Ok((x, iters, true_res))
    } else {
        Err(Error::NonConvergence { iterations: iters, residual: res })
    }
}
