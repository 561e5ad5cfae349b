//! Periodic corrector problem on a voxel cell.
//!
//! For each unit macroscopic gradient `e^i` the local gradient field
//! `e^i + ∇w^i` is found as the fixed point of the periodic
//! Lippmann–Schwinger equation with an isotropic reference medium `κ0 I`.
//! Restricted to compatible (curl-free, zero-mean) fluctuations the
//! Lippmann–Schwinger operator equals `κ0⁻¹ Γ A`, with `Γ` the orthogonal
//! projection onto gradient fields computed in Fourier space. That operator
//! is symmetric positive definite, so the fluctuation is solved for with
//! conjugate gradients.

use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft::SpectralGrid;
use crate::field::MatrixField;
use crate::geometry::{validate_coercivity, CellGrid};
use crate::reduce::{dot, tree_sum, tree_sum_vec};
use crate::tensor::{apply_upper, packed_len};

pub const DEFAULT_TOL: f64 = 1e-8;

/// Restarts of conjugate gradients when the recursively updated residual
/// drifts from the true one.
const MAX_RESTARTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    /// Defaults to `10 · resolution`.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: None }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, max_iter: None }
    }
}

/// Correctors `w^i` and the corrector matrix field `P` of one cell.
#[derive(Clone)]
pub struct CorrectorSolution {
    grid: Arc<CellGrid>,
    w: Vec<Vec<f64>>,
    p: MatrixField,
    residual: f64,
    iterations: Vec<usize>,
    tol: f64,
    reference_medium: f64,
}

impl CorrectorSolution {
    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<CellGrid> {
        &self.grid
    }

    /// Mean-zero corrector for direction `i`, one value per voxel.
    pub fn corrector(&self, i: usize) -> &[f64] {
        &self.w[i]
    }

    pub fn p_field(&self) -> &MatrixField {
        &self.p
    }

    /// Largest relative equilibrium residual over directions.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Conjugate-gradient iterations per direction.
    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn reference_medium(&self) -> f64 {
        self.reference_medium
    }

    /// Metadata record exported alongside the fields.
    pub fn metadata(&self) -> SolveMetadata {
        SolveMetadata {
            tol: self.tol,
            iterations: self.iterations.clone(),
            residual: self.residual,
            reference_medium: self.reference_medium,
        }
    }
}

impl std::fmt::Debug for CorrectorSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorrectorSolution")
            .field("grid", &self.grid)
            .field("residual", &self.residual)
            .field("iterations", &self.iterations)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveMetadata {
    pub tol: f64,
    pub iterations: Vec<usize>,
    pub residual: f64,
    pub reference_medium: f64,
}

/// Homogenized conductivity of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTensor {
    pub dim: usize,
    pub entries: Vec<Vec<f64>>,
}

impl EffectiveTensor {
    pub fn identity(dim: usize) -> Self {
        let entries = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { dim, entries }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.entries[i][j])
    }

    /// Largest entry-wise deviation from `other`.
    pub fn max_abs_diff(&self, other: &EffectiveTensor) -> f64 {
        self.entries
            .iter()
            .flatten()
            .zip(other.entries.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn asymmetry(&self) -> f64 {
        let mut gap: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                gap = gap.max((self.entries[i][j] - self.entries[j][i]).abs());
            }
        }
        gap
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = self.to_matrix();
        let sym = (&m + m.transpose()) * 0.5;
        let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// Scratch buffers for repeated operator applications.
struct Workspace {
    spectral: SpectralGrid,
    dim: usize,
    spec: Vec<Vec<Complex64>>,
    flux: Vec<f64>,
}

impl Workspace {
    fn new(grid: &CellGrid) -> Self {
        let spectral = SpectralGrid::new(grid.dim(), grid.resolution());
        let spec = (0..grid.dim()).map(|_| vec![Complex64::default(); spectral.spec_len()]).collect();
        let flux = vec![0.0; grid.num_voxels() * grid.dim()];
        Self { spectral, dim: grid.dim(), spec, flux }
    }

    /// `out = Γ[A (mean + x)]`, with `x` interleaved (`dim` values per voxel)
    /// and `mean` a constant vector added pointwise.
    fn project_flux(&mut self, grid: &CellGrid, mean: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let k = packed_len(d);
        let a = grid.packed_tensors();
        self.flux
            .par_chunks_mut(d)
            .zip(x.par_chunks(d))
            .zip(a.par_chunks(k))
            .for_each(|((f, e), a)| {
                let mut g = [0.0; 3];
                for c in 0..d {
                    g[c] = mean[c] + e[c];
                }
                apply_upper(d, a, &g, f);
            });
        self.gradient_projection(out);
    }

    /// Projects `self.flux` onto compatible gradient fields.
    fn gradient_projection(&mut self, out: &mut [f64]) {
        let d = self.dim;
        for c in 0..d {
            self.spectral.forward_component(&self.flux, d, c, &mut self.spec[c]);
        }
        let spectral = &self.spectral;
        let spec_len = spectral.spec_len();
        // Γ(ξ) σ = ξ (ξ·σ) / |ξ|²
        let (first, rest) = self.spec.split_at_mut(1);
        let s0 = &mut first[0];
        let (s1, s2) = match rest {
            [a] => (a, None),
            [a, b] => (a, Some(b)),
            _ => unreachable!("dimension is 2 or 3"),
        };
        match s2 {
            None => s0
                .par_iter_mut()
                .zip(s1.par_iter_mut())
                .enumerate()
                .for_each(|(s, (a, b))| {
                    let k = spectral.wavenumber(s);
                    let k2 = k[0] * k[0] + k[1] * k[1];
                    if k2 == 0.0 {
                        *a = Complex64::default();
                        *b = Complex64::default();
                        return;
                    }
                    let proj = (*a * k[0] + *b * k[1]) / k2;
                    *a = proj * k[0];
                    *b = proj * k[1];
                }),
            Some(s2) => s0
                .par_iter_mut()
                .zip(s1.par_iter_mut())
                .zip(s2.par_iter_mut())
                .enumerate()
                .for_each(|(s, ((a, b), c))| {
                    let k = spectral.wavenumber(s);
                    let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                    if k2 == 0.0 {
                        *a = Complex64::default();
                        *b = Complex64::default();
                        *c = Complex64::default();
                        return;
                    }
                    let proj = (*a * k[0] + *b * k[1] + *c * k[2]) / k2;
                    *a = proj * k[0];
                    *b = proj * k[1];
                    *c = proj * k[2];
                }),
        }
        debug_assert_eq!(self.spec[0].len(), spec_len);
        for c in 0..d {
            self.spectral.inverse_component(&mut self.spec[c], out, d, c);
        }
    }

    /// Mean-zero potential whose gradient is the compatible field `x`.
    fn potential(&mut self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        for c in 0..d {
            self.spectral.forward_component(x, d, c, &mut self.spec[c]);
        }
        let spectral = &self.spectral;
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut acc = vec![Complex64::default(); spectral.spec_len()];
        acc.par_iter_mut().enumerate().for_each(|(s, out)| {
            let k = spectral.wavenumber(s);
            let k2: f64 = k.iter().map(|v| v * v).sum();
            if k2 == 0.0 {
                return;
            }
            // x̂ = 2πi k ŵ  ⇒  ŵ = −i (k·x̂) / (2π |k|²)
            let mut kx = Complex64::default();
            for c in 0..d {
                kx += self.spec[c][s] * k[c];
            }
            *out = Complex64::new(kx.im, -kx.re) / (two_pi * k2);
        });
        let mut w = vec![0.0; spectral.real_len()];
        spectral.inverse_component(&mut acc, &mut w, 1, 0);
        w
    }
}

fn flux_norm(grid: &CellGrid, mean: &[f64]) -> f64 {
    let d = grid.dim();
    tree_sum(grid.num_voxels(), |v| {
        let mut f = [0.0; 3];
        apply_upper(d, grid.packed_tensor(v), mean, &mut f);
        f[..d].iter().map(|x| x * x).sum()
    })
    .sqrt()
}

fn unit(d: usize, i: usize) -> [f64; 3] {
    let mut e = [0.0; 3];
    e[i] = 1.0;
    debug_assert!(i < d);
    e
}

/// Solves the corrector problem for every unit direction.
pub fn solve_corrector(grid: impl Into<Arc<CellGrid>>, opts: SolverOptions) -> Result<CorrectorSolution> {
    let grid: Arc<CellGrid> = grid.into();
    if !(opts.tol > 0.0) {
        return invalid(format!("tolerance must be positive, got {}", opts.tol));
    }
    let (alpha_min, beta_max) = validate_coercivity(&grid)?;
    let kappa0 = 0.5 * (alpha_min + beta_max);
    let max_iter = opts.max_iter.unwrap_or(10 * grid.resolution());
    let d = grid.dim();
    let nvox = grid.num_voxels();
    let mut ws = Workspace::new(&grid);

    let mut w = Vec::with_capacity(d);
    let mut columns = Vec::with_capacity(d);
    let mut iterations = Vec::with_capacity(d);
    let mut residual: f64 = 0.0;
    for i in 0..d {
        let e = unit(d, i);
        let (x, iters, res) = solve_direction(&grid, &mut ws, &e[..d], kappa0, opts.tol, max_iter)?;
        w.push(ws.potential(&x));
        columns.push(x);
        iterations.push(iters);
        residual = residual.max(res);
    }

    let mut values = vec![0.0; nvox * d * d];
    values.par_chunks_mut(d * d).enumerate().for_each(|(v, m)| {
        for (i, col) in columns.iter().enumerate() {
            for j in 0..d {
                m[j * d + i] = col[v * d + j] + if i == j { 1.0 } else { 0.0 };
            }
        }
    });
    Ok(CorrectorSolution {
        grid,
        w,
        p: MatrixField::uniform(d, values)?,
        residual,
        iterations,
        tol: opts.tol,
        reference_medium: kappa0,
    })
}

/// Conjugate gradients for the fluctuation of one direction. Returns the
/// fluctuation, the iteration count and the true relative residual.
fn solve_direction(
    grid: &CellGrid,
    ws: &mut Workspace,
    mean: &[f64],
    kappa0: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = grid.num_voxels() * grid.dim();
    let zeros = vec![0.0; grid.dim()];
    let scale = flux_norm(grid, mean);
    let mut x = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut iters = 0;

    for _ in 0..=MAX_RESTARTS {
        // r = −Γ[A(E + x)] / κ0
        ws.project_flux(grid, mean, &x, &mut r);
        r.par_iter_mut().for_each(|v| *v = -*v / kappa0);
        let mut rr = dot(&r, &r);
        let true_res = kappa0 * rr.sqrt() / scale;
        if true_res <= tol {
            return Ok((x, iters, true_res));
        }
        if iters >= max_iter {
            return Err(Error::NonConvergence { iterations: iters, residual: true_res });
        }
        p.copy_from_slice(&r);
        while iters < max_iter {
            ws.project_flux(grid, &zeros, &p, &mut q);
            q.par_iter_mut().for_each(|v| *v /= kappa0);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                break;
            }
            let step = rr / pq;
            x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += step * p);
            r.par_iter_mut().zip(&q).for_each(|(r, q)| *r -= step * q);
            iters += 1;
            let rr_new = dot(&r, &r);
            if kappa0 * rr_new.sqrt() / scale <= tol {
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            p.par_iter_mut().zip(&r).for_each(|(p, r)| *p = r + beta * *p);
        }
    }
    ws.project_flux(grid, mean, &x, &mut r);
    let res = dot(&r, &r).sqrt() / scale;
    if res <= tol {
        Ok((x, iters, res))
    } else {
        Err(Error::NonConvergence { iterations: iters, residual: res })
    }
}

/// Cell average of `A P`.
pub fn effective_tensor(solution: &CorrectorSolution) -> EffectiveTensor {
    let grid = solution.grid();
    let d = grid.dim();
    let p = solution.p_field();
    let sums = tree_sum_vec(grid.num_voxels(), d * d, |v, out| {
        let m = p.matrix(v);
        let a = grid.packed_tensor(v);
        for i in 0..d {
            let col: Vec<f64> = (0..d).map(|j| m[j * d + i]).collect();
            let mut f = [0.0; 3];
            apply_upper(d, a, &col, &mut f);
            for j in 0..d {
                out[j * d + i] = f[j];
            }
        }
    });
    let nv = grid.num_voxels() as f64;
    let entries = (0..d).map(|j| (0..d).map(|i| sums[j * d + i] / nv).collect()).collect();
    EffectiveTensor { dim: d, entries }
}

/// Relative equilibrium residual `‖Γ[A P e^i]‖ / ‖A e^i‖`, maximized over `i`.
///
/// `Γ σ` has Fourier symbol `ξ (ξ·σ̂)/|ξ|²`, so its L² norm is the dual
/// (H⁻¹-type) norm of `div σ`.
pub fn equilibrium_residual(grid: &CellGrid, solution: &CorrectorSolution) -> f64 {
    let d = grid.dim();
    let mut ws = Workspace::new(grid);
    let p = solution.p_field();
    let mut out = vec![0.0; grid.num_voxels() * d];
    let zeros = [0.0; 3];
    (0..d)
        .map(|i| {
            let mut col = vec![0.0; grid.num_voxels() * d];
            col.par_chunks_mut(d).enumerate().for_each(|(v, c)| {
                let m = p.matrix(v);
                for j in 0..d {
                    c[j] = m[j * d + i];
                }
            });
            ws.project_flux(grid, &zeros[..d], &col, &mut out);
            let e = unit(d, i);
            dot(&out, &out).sqrt() / flux_norm(grid, &e[..d])
        })
        .fold(0.0, f64::max)
}

/// Arithmetic (Voigt) and harmonic (Reuss) means of the voxel tensors,
/// returned as `(harmonic, arithmetic)`.
pub fn voigt_reuss_bounds(grid: &CellGrid) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = grid.dim();
    let k = packed_len(d);
    let nv = grid.num_voxels() as f64;
    let arith = tree_sum_vec(grid.num_voxels(), k, |v, out| out.copy_from_slice(grid.packed_tensor(v)));
    let inv = tree_sum_vec(grid.num_voxels(), d * d, |v, out| {
        let t = grid.tensor(v);
        let m = DMatrix::from_fn(d, d, |i, j| t.get(i, j));
        let mi = m.try_inverse().expect("coercive tensors are invertible");
        out.copy_from_slice(mi.transpose().as_slice());
    });
    let mut a = DMatrix::zeros(d, d);
    let mut idx = 0;
    for i in 0..d {
        for j in i..d {
            a[(i, j)] = arith[idx] / nv;
            a[(j, i)] = arith[idx] / nv;
            idx += 1;
        }
    }
    let h = DMatrix::from_row_slice(d, d, &inv).map(|x| x / nv);
    let harmonic = h.try_inverse().expect("mean of inverses is positive definite");
    (harmonic, a)
}
