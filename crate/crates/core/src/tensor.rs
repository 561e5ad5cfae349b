use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric second-order conductivity tensor in two or three dimensions.
///
/// Unused rows/columns of the backing 3×3 array are zero when `dim == 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Tensor2 {
    dim: usize,
    m: [[f64; 3]; 3],
}

impl Tensor2 {
    /// Builds a tensor from rows, checking shape and symmetry.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        check_dim(dim)?;
        let mut m = [[0.0; 3]; 3];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return invalid(format!("row {i} has {} entries, expected {dim}", row.len()));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return invalid(format!("non-finite tensor entry at ({i},{j})"));
                }
                m[i][j] = v;
            }
        }
        for i in 0..dim {
            for j in i + 1..dim {
                let gap = (m[i][j] - m[j][i]).abs();
                if gap > SYMMETRY_TOL * (1.0 + m[i][j].abs()) {
                    return Err(Error::NotSymmetric { row: i, col: j, gap });
                }
            }
        }
        Ok(Self { dim, m })
    }

    pub fn identity(dim: usize) -> Self {
        Self::isotropic(dim, 1.0)
    }

    pub fn isotropic(dim: usize, k: f64) -> Self {
        assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate().take(dim) {
            row[i] = k;
        }
        Self { dim, m }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
        let mut m = [[0.0; 3]; 3];
        for (i, &d) in diag.iter().enumerate() {
            m[i][i] = d;
        }
        Self { dim, m }
    }

    /// Uniaxial tensor `radial n⊗n + tangential (I − n⊗n)` for a unit vector `n`.
    pub fn uniaxial(n: &[f64], radial: f64, tangential: f64) -> Self {
        let dim = n.len();
        assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
        let mut m = [[0.0; 3]; 3];
        for i in 0..dim {
            for j in 0..dim {
                let delta = if i == j { 1.0 } else { 0.0 };
                m[i][j] = radial * n[i] * n[j] + tangential * (delta - n[i] * n[j]);
            }
        }
        Self { dim, m }
    }

    /// Unchecked construction from the packed upper triangle (row-major).
    pub(crate) fn from_upper(dim: usize, upper: &[f64]) -> Self {
        let mut m = [[0.0; 3]; 3];
        let mut k = 0;
        for i in 0..dim {
            for j in i..dim {
                m[i][j] = upper[k];
                m[j][i] = upper[k];
                k += 1;
            }
        }
        Self { dim, m }
    }

    /// Row-major upper triangle: `(00, 01, 11)` in 2D, `(00, 01, 02, 11, 12, 22)` in 3D.
    pub fn upper(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(packed_len(self.dim));
        for i in 0..self.dim {
            for j in i..self.dim {
                out.push(self.m[i][j]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.m[i][..self.dim].to_vec()).collect()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = (0..self.dim).map(|j| self.m[i][j] * x[j]).sum();
        }
    }

    /// Smallest and largest eigenvalue.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        eigen_bounds_upper(self.dim, &self.upper())
    }

    pub fn is_positive_definite(&self) -> bool {
        self.eigen_bounds().0 > 0.0
    }
}

impl TryFrom<Vec<Vec<f64>>> for Tensor2 {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<Tensor2> for Vec<Vec<f64>> {
    fn from(t: Tensor2) -> Self {
        t.rows()
    }
}

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        invalid(format!("dimension must be 2 or 3, got {dim}"))
    }
}

/// Number of stored entries of a packed symmetric tensor.
pub fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// `out = A x` for a packed symmetric tensor.
#[inline]
pub(crate) fn apply_upper(dim: usize, a: &[f64], x: &[f64], out: &mut [f64]) {
    if dim == 2 {
        out[0] = a[0] * x[0] + a[1] * x[1];
        out[1] = a[1] * x[0] + a[2] * x[1];
    } else {
        out[0] = a[0] * x[0] + a[1] * x[1] + a[2] * x[2];
        out[1] = a[1] * x[0] + a[3] * x[1] + a[4] * x[2];
        out[2] = a[2] * x[0] + a[4] * x[1] + a[5] * x[2];
    }
}

pub(crate) fn eigen_bounds_upper(dim: usize, a: &[f64]) -> (f64, f64) {
    let ev: Vec<f64> = if dim == 2 {
        Matrix2::new(a[0], a[1], a[1], a[2])
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect()
    } else {
        Matrix3::new(a[0], a[1], a[2], a[1], a[3], a[4], a[2], a[4], a[5])
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect()
    };
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}
