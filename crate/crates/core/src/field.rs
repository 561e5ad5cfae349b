use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::reduce::tree_sum;

/// Quadrature weights attached to the sample points of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Weights {
    /// Every point carries weight `1/len` (voxel average over the unit cell).
    Uniform,
    /// Explicit weights, summing to the cell measure `|Q| = 1`.
    Explicit(Vec<f64>),
}

/// A `dim × dim` matrix per sample point, stored row-major.
///
/// For a corrector field, column `i` of the matrix at a point is the local
/// gradient produced by the unit macroscopic gradient `e^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    dim: usize,
    values: Vec<f64>,
    weights: Weights,
}

impl MatrixField {
    pub fn uniform(dim: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(dim, values, Weights::Uniform)
    }

    pub fn weighted(dim: usize, values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::new(dim, values, Weights::Explicit(weights))
    }

    fn new(dim: usize, values: Vec<f64>, weights: Weights) -> Result<Self> {
        if dim == 0 || values.len() % (dim * dim) != 0 || values.is_empty() {
            return invalid(format!("{} values do not form {dim}x{dim} matrices", values.len()));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite matrix entry at offset {k}"));
        }
        if let Weights::Explicit(w) = &weights {
            if w.len() != values.len() / (dim * dim) {
                return invalid("one weight per sample point is required");
            }
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return invalid("weights must be finite and non-negative");
            }
        }
        Ok(Self { dim, values, weights })
    }

    /// Constant identity field on `len` uniformly weighted points.
    pub fn identity(dim: usize, len: usize) -> Self {
        let mut values = vec![0.0; len * dim * dim];
        for m in values.chunks_mut(dim * dim) {
            for i in 0..dim {
                m[i * dim + i] = 1.0;
            }
        }
        Self { dim, values, weights: Weights::Uniform }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / (self.dim * self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn matrix(&self, k: usize) -> &[f64] {
        let d2 = self.dim * self.dim;
        &self.values[k * d2..(k + 1) * d2]
    }

    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        match &self.weights {
            Weights::Uniform => 1.0 / self.len() as f64,
            Weights::Explicit(w) => w[k],
        }
    }

    /// `|P(y_k) ξ|`.
    #[inline]
    pub fn norm_applied(&self, k: usize, xi: &[f64]) -> f64 {
        let m = self.matrix(k);
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            let row: f64 = (0..d).map(|j| m[i * d + j] * xi[j]).sum();
            s += row * row;
        }
        s.sqrt()
    }

    /// Weighted mean of every entry.
    pub fn mean(&self) -> Vec<f64> {
        let d2 = self.dim * self.dim;
        (0..d2)
            .map(|e| tree_sum(self.len(), |k| self.weight(k) * self.values[k * d2 + e]))
            .collect()
    }
}
