//! Periodic unit-cell microstructures rasterized onto voxel grids.
//!
//! Voxels are indexed row-major with axis 0 varying slowest. Voxel `(i_0, …)`
//! covers `[i_k/n, (i_k+1)/n)` along each axis and is sampled at its center
//! `((i_k + 1/2)/n)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{check_dim, eigen_bounds_upper, packed_len, Tensor2};

/// Voxel raster of symmetric conductivity tensors with phase labels.
#[derive(Clone, PartialEq)]
pub struct CellGrid {
    dim: usize,
    resolution: usize,
    num_phases: usize,
    tensors: Vec<f64>,
    phase: Vec<u8>,
}

impl CellGrid {
    /// Assembles a grid from packed tensors and labels, validating shape,
    /// labels and coercivity.
    pub fn from_parts(
        dim: usize,
        resolution: usize,
        num_phases: usize,
        tensors: Vec<f64>,
        phase: Vec<u8>,
    ) -> Result<Self> {
        check_dim(dim)?;
        check_resolution(resolution)?;
        let nvox = resolution.pow(dim as u32);
        if tensors.len() != nvox * packed_len(dim) {
            return invalid(format!(
                "expected {} tensor entries, got {}",
                nvox * packed_len(dim),
                tensors.len()
            ));
        }
        if phase.len() != nvox {
            return invalid(format!("expected {nvox} phase labels, got {}", phase.len()));
        }
        if num_phases == 0 || num_phases > 256 {
            return invalid("number of phases must be in 1..=256");
        }
        if let Some(v) = phase.iter().position(|&p| p as usize >= num_phases) {
            return invalid(format!("voxel {v} has label {} >= {num_phases}", phase[v]));
        }
        if let Some(v) = tensors.iter().position(|x| !x.is_finite()) {
            return invalid(format!("non-finite tensor entry at offset {v}"));
        }
        let grid = Self { dim, resolution, num_phases, tensors, phase };
        validate_coercivity(&grid)?;
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn num_phases(&self) -> usize {
        self.num_phases
    }

    pub fn num_voxels(&self) -> usize {
        self.phase.len()
    }

    /// Packed upper-triangle tensors, voxel-major.
    pub fn packed_tensors(&self) -> &[f64] {
        &self.tensors
    }

    pub fn packed_tensor(&self, voxel: usize) -> &[f64] {
        let k = packed_len(self.dim);
        &self.tensors[voxel * k..(voxel + 1) * k]
    }

    pub fn tensor(&self, voxel: usize) -> Tensor2 {
        Tensor2::from_upper(self.dim, self.packed_tensor(voxel))
    }

    pub fn phases(&self) -> &[u8] {
        &self.phase
    }

    pub fn phase(&self, voxel: usize) -> u8 {
        self.phase[voxel]
    }

    /// Multi-index of a voxel, axis 0 first.
    pub fn voxel_index(&self, voxel: usize) -> [usize; 3] {
        voxel_multi_index(self.dim, self.resolution, voxel)
    }

    /// Linear index of a voxel; indices wrap periodically.
    pub fn voxel_at(&self, idx: &[i64]) -> usize {
        let n = self.resolution as i64;
        idx.iter().take(self.dim).fold(0usize, |acc, &i| acc * self.resolution + i.rem_euclid(n) as usize)
    }

    pub fn voxel_center(&self, voxel: usize) -> [f64; 3] {
        let idx = self.voxel_index(voxel);
        let h = 1.0 / self.resolution as f64;
        let mut c = [0.0; 3];
        for k in 0..self.dim {
            c[k] = (idx[k] as f64 + 0.5) * h;
        }
        c
    }

    /// Voxel containing the point `y`, taken modulo the unit cell.
    pub fn voxel_containing(&self, y: &[f64]) -> usize {
        let n = self.resolution;
        y.iter().take(self.dim).fold(0usize, |acc, &c| {
            let f = c - c.floor();
            let i = ((f * n as f64) as usize).min(n - 1);
            acc * n + i
        })
    }

    /// Fraction of voxels carrying each phase label.
    pub fn phase_fractions(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.num_phases];
        for &p in &self.phase {
            counts[p as usize] += 1;
        }
        let n = self.num_voxels() as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}

impl std::fmt::Debug for CellGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CellGrid")
            .field("dim", &self.dim)
            .field("resolution", &self.resolution)
            .field("num_phases", &self.num_phases)
            .finish_non_exhaustive()
    }
}

pub(crate) fn voxel_multi_index(dim: usize, n: usize, mut voxel: usize) -> [usize; 3] {
    let mut idx = [0; 3];
    for k in (0..dim).rev() {
        idx[k] = voxel % n;
        voxel /= n;
    }
    idx
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < 2 || !resolution.is_power_of_two() {
        return invalid(format!("resolution must be an even power of two, got {resolution}"));
    }
    Ok(())
}

/// Smallest and largest voxel eigenvalue; errors if any voxel is not
/// positive definite.
pub fn validate_coercivity(grid: &CellGrid) -> Result<(f64, f64)> {
    let k = packed_len(grid.dim);
    let (lo, hi, worst) = grid
        .tensors
        .par_chunks(k)
        .enumerate()
        .map(|(v, a)| {
            let (lo, hi) = eigen_bounds_upper(grid.dim, a);
            (lo, hi, (lo, v))
        })
        .reduce(
            || (f64::INFINITY, f64::NEG_INFINITY, (f64::INFINITY, usize::MAX)),
            |a, b| {
                let worst = if b.2 .0 < a.2 .0 || (b.2 .0 == a.2 .0 && b.2 .1 < a.2 .1) { b.2 } else { a.2 };
                (a.0.min(b.0), a.1.max(b.1), worst)
            },
        );
    if lo <= 0.0 || lo.is_nan() {
        return Err(Error::Coercivity { voxel: worst.1, eigenvalue: worst.0 });
    }
    Ok((lo, hi))
}

/// Builds a grid from one indicator mask per phase.
pub fn build_multiphase(
    phase_masks: &[Vec<bool>],
    phase_tensors: &[Tensor2],
    resolution: usize,
) -> Result<CellGrid> {
    if phase_masks.is_empty() || phase_masks.len() != phase_tensors.len() {
        return invalid(format!(
            "{} masks but {} tensors",
            phase_masks.len(),
            phase_tensors.len()
        ));
    }
    let dim = phase_tensors[0].dim();
    if phase_tensors.iter().any(|t| t.dim() != dim) {
        return invalid("phase tensors have mixed dimensions");
    }
    check_dim(dim)?;
    check_resolution(resolution)?;
    for (i, t) in phase_tensors.iter().enumerate() {
        let (lo, _) = t.eigen_bounds();
        if lo <= 0.0 {
            return Err(Error::PhaseCoercivity { phase: i, eigenvalue: lo });
        }
    }
    let nvox = resolution.pow(dim as u32);
    if let Some(m) = phase_masks.iter().position(|m| m.len() != nvox) {
        return invalid(format!("mask {m} has {} voxels, expected {nvox}", phase_masks[m].len()));
    }
    let mut phase = vec![0u8; nvox];
    for (v, label) in phase.iter_mut().enumerate() {
        let mut count = 0;
        for (i, mask) in phase_masks.iter().enumerate() {
            if mask[v] {
                count += 1;
                *label = i as u8;
            }
        }
        if count != 1 {
            return Err(Error::Partition { voxel: v, count });
        }
    }
    let packed: Vec<Vec<f64>> = phase_tensors.iter().map(Tensor2::upper).collect();
    let tensors = phase.iter().flat_map(|&p| packed[p as usize].iter().copied()).collect();
    CellGrid::from_parts(dim, resolution, phase_masks.len(), tensors, phase)
}

/// Single-phase grid with a constant tensor.
pub fn build_homogeneous(tensor: Tensor2, resolution: usize) -> Result<CellGrid> {
    let nvox = resolution.pow(tensor.dim() as u32);
    build_multiphase(&[vec![true; nvox]], &[tensor], resolution)
}

/// Layered cell: phase `i` occupies the slab of thickness `fractions[i]`
/// along `normal_axis`, stacked in order from zero.
pub fn build_laminate(
    normal_axis: usize,
    fractions: &[f64],
    conductivities: &[Tensor2],
    resolution: usize,
) -> Result<CellGrid> {
    if fractions.is_empty() || fractions.len() != conductivities.len() {
        return invalid("laminate needs one fraction per conductivity");
    }
    let dim = conductivities[0].dim();
    if normal_axis >= dim {
        return invalid(format!("normal axis {normal_axis} out of range for dimension {dim}"));
    }
    check_resolution(resolution)?;
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-12 || fractions.iter().any(|&f| f <= 0.0) {
        return invalid(format!("laminate fractions must be positive and sum to 1 (sum {total})"));
    }
    // layer boundaries must land on voxel faces
    let mut bounds = Vec::with_capacity(fractions.len());
    let mut cumulative = 0.0;
    for &f in fractions {
        cumulative += f;
        let edge = cumulative * resolution as f64;
        let rounded = edge.round();
        if (edge - rounded).abs() > 1e-9 {
            return invalid(format!(
                "fraction boundary {cumulative} does not fall on a voxel face at resolution {resolution}"
            ));
        }
        bounds.push(rounded as usize);
    }
    let nvox = resolution.pow(dim as u32);
    let mut masks = vec![vec![false; nvox]; fractions.len()];
    for v in 0..nvox {
        let i = voxel_multi_index(dim, resolution, v)[normal_axis];
        let layer = bounds.iter().position(|&b| i < b).unwrap_or(fractions.len() - 1);
        masks[layer][v] = true;
    }
    build_multiphase(&masks, conductivities, resolution)
}

/// Spherical crystallite with radially oriented uniaxial conductivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crystallite {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Crystallite {
    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.radius.powi(3)
    }
}

/// Periodic dispersion of crystallites in a unit-conductivity matrix.
///
/// Inside a crystallite the conductivity is `λ1 n⊗n + λ2 (I − n⊗n)` with `n`
/// the outward radial direction and `λ1 = 1/(2λ2 − 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchulgasserCell {
    crystallites: Vec<Crystallite>,
    lambda2: f64,
}

impl SchulgasserCell {
    pub fn new(crystallites: Vec<Crystallite>, lambda2: f64) -> Result<Self> {
        let cell = Self { crystallites, lambda2 };
        cell.validate()?;
        Ok(cell)
    }

    /// A single crystallite of radius `r` centered in the cell.
    pub fn centered(radius: f64, lambda2: f64) -> Result<Self> {
        Self::new(vec![Crystallite { center: [0.5; 3], radius }], lambda2)
    }

    /// A single centered crystallite occupying volume fraction `theta`.
    pub fn centered_with_fraction(theta: f64, lambda2: f64) -> Result<Self> {
        let radius = (3.0 * theta / (4.0 * PI)).cbrt();
        Self::centered(radius, lambda2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda2 > 0.5 && self.lambda2 < 1.0) {
            return invalid(format!("lambda2 must lie in (1/2, 1), got {}", self.lambda2));
        }
        for (i, c) in self.crystallites.iter().enumerate() {
            if !(c.radius > 0.0) {
                return invalid(format!("crystallite {i} has non-positive radius"));
            }
            if c.center.iter().any(|&x| x - c.radius <= 0.0 || x + c.radius >= 1.0) {
                return invalid(format!("crystallite {i} is not contained in the open unit cell"));
            }
            for (j, d) in self.crystallites.iter().enumerate().skip(i + 1) {
                if distance(&c.center, &d.center) <= c.radius + d.radius {
                    return invalid(format!("crystallites {i} and {j} overlap"));
                }
            }
        }
        let theta = self.theta();
        if theta >= 1.0 {
            return invalid(format!("crystallite volume fraction {theta} must be below 1"));
        }
        Ok(())
    }

    pub fn crystallites(&self) -> &[Crystallite] {
        &self.crystallites
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Exponent `2λ2 − 1` of the radial power law.
    pub fn alpha(&self) -> f64 {
        2.0 * self.lambda2 - 1.0
    }

    pub fn lambda1(&self) -> f64 {
        1.0 / self.alpha()
    }

    /// Total crystallite volume fraction.
    pub fn theta(&self) -> f64 {
        self.crystallites.iter().map(Crystallite::volume).sum()
    }

    /// Index of the crystallite containing `y` (closed ball), if any.
    pub fn locate(&self, y: &[f64; 3]) -> Option<usize> {
        self.crystallites.iter().position(|c| distance(y, &c.center) <= c.radius)
    }

    /// Conductivity at `y`: the uniaxial crystallite tensor inside a ball,
    /// the identity elsewhere.
    pub fn conductivity(&self, y: &[f64; 3]) -> Result<Tensor2> {
        self.conductivity_with(y, self.lambda1())
    }

    fn conductivity_with(&self, y: &[f64; 3], lambda1: f64) -> Result<Tensor2> {
        match self.locate(y) {
            None => Ok(Tensor2::identity(3)),
            Some(l) => {
                let c = &self.crystallites[l];
                let s = distance(y, &c.center);
                if s == 0.0 {
                    return Err(Error::SingularPoint(l));
                }
                let n: Vec<f64> = (0..3).map(|k| (y[k] - c.center[k]) / s).collect();
                Ok(Tensor2::uniaxial(&n, lambda1, self.lambda2))
            }
        }
    }
}

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Rasterizes a crystallite dispersion: phase 1 inside any ball (sampled at
/// voxel centers), phase 0 in the matrix.
pub fn rasterize_schulgasser(cell: &SchulgasserCell, resolution: usize) -> Result<CellGrid> {
    cell.validate()?;
    if resolution % 2 != 0 {
        return invalid(format!("resolution must be even, got {resolution}"));
    }
    if resolution < 16 {
        return invalid(format!("crystallite rasterization needs resolution >= 16, got {resolution}"));
    }
    check_resolution(resolution)?;
    let nvox = resolution.pow(3);
    let lambda1 = cell.lambda1();
    let k = packed_len(3);
    let mut tensors = vec![0.0; nvox * k];
    let mut phase = vec![0u8; nvox];
    let h = 1.0 / resolution as f64;
    tensors
        .par_chunks_mut(k)
        .zip(phase.par_iter_mut())
        .enumerate()
        .try_for_each(|(v, (t, label))| -> Result<()> {
            let idx = voxel_multi_index(3, resolution, v);
            let y = [
                (idx[0] as f64 + 0.5) * h,
                (idx[1] as f64 + 0.5) * h,
                (idx[2] as f64 + 0.5) * h,
            ];
            let tensor = cell.conductivity_with(&y, lambda1)?;
            t.copy_from_slice(&tensor.upper());
            *label = u8::from(cell.locate(&y).is_some());
            Ok(())
        })?;
    CellGrid::from_parts(3, resolution, 2, tensors, phase)
}

/// Piecewise-periodic medium: each macro subdomain carries its own cell.
pub type MacroPartition = BTreeMap<usize, CellGrid>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_identity_phase() {
        let g = build_homogeneous(Tensor2::identity(2), 16).unwrap();
        assert_eq!(g.num_phases(), 1);
        assert_eq!(g.num_voxels(), 256);
        assert!((0..g.num_voxels()).all(|v| g.tensor(v) == Tensor2::identity(2)));
        assert_eq!(validate_coercivity(&g).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn half_cells_give_equal_fractions() {
        let n = 16;
        let left: Vec<bool> = (0..n * n).map(|v| v / n < n / 2).collect();
        let right: Vec<bool> = left.iter().map(|b| !b).collect();
        let g = build_multiphase(
            &[left, right],
            &[Tensor2::identity(2), Tensor2::isotropic(2, 2.0)],
            n,
        )
        .unwrap();
        assert_eq!(g.phase_fractions(), vec![0.5, 0.5]);
        assert_eq!(validate_coercivity(&g).unwrap(), (1.0, 2.0));
    }

    #[test]
    fn overlapping_masks_are_rejected() {
        let n = 4;
        let a: Vec<bool> = (0..n * n).map(|v| v < 8).collect();
        let mut b: Vec<bool> = (0..n * n).map(|v| (8..12).contains(&v)).collect();
        let c: Vec<bool> = (0..n * n).map(|v| v >= 12).collect();
        b[3] = true;
        let t = Tensor2::identity(2);
        let err = build_multiphase(&[a, b, c], &[t, t, t], n).unwrap_err();
        assert!(matches!(err, Error::Partition { voxel: 3, count: 2 }));
    }

    #[test]
    fn missing_mask_coverage_is_rejected() {
        let n = 4;
        let a: Vec<bool> = (0..n * n).map(|v| v < 15).collect();
        let err = build_multiphase(&[a], &[Tensor2::identity(2)], n).unwrap_err();
        assert!(matches!(err, Error::Partition { voxel: 15, count: 0 }));
    }

    #[test]
    fn non_spd_phase_rejected() {
        let n = 4;
        let bad = Tensor2::diagonal(&[1.0, -1.0]);
        assert!(build_multiphase(&[vec![true; n * n]], &[bad], n).is_err());
    }

    #[test]
    fn laminate_slabs() {
        let k = [Tensor2::identity(2), Tensor2::isotropic(2, 2.0)];
        let g = build_laminate(0, &[0.5, 0.5], &k, 64).unwrap();
        for v in 0..g.num_voxels() {
            let i = g.voxel_index(v)[0];
            assert_eq!(g.phase(v), u8::from(i >= 32));
        }
        let g = build_laminate(0, &[0.25, 0.75], &k, 64).unwrap();
        assert_eq!(g.phase(g.voxel_at(&[15, 3])), 0);
        assert_eq!(g.phase(g.voxel_at(&[16, 3])), 1);
        assert!(build_laminate(0, &[1.0 / 3.0, 2.0 / 3.0], &k, 64).is_err());
    }

    #[test]
    fn resolution_must_be_power_of_two() {
        assert!(build_homogeneous(Tensor2::identity(2), 12).is_err());
        let cell = SchulgasserCell::centered(0.35, 0.75).unwrap();
        assert!(rasterize_schulgasser(&cell, 17).is_err());
        assert!(rasterize_schulgasser(&cell, 8).is_err());
    }

    #[test]
    fn schulgasser_derived_quantities() {
        let cell = SchulgasserCell::centered(0.35, 0.75).unwrap();
        assert_eq!(cell.alpha(), 0.5);
        assert_eq!(cell.lambda1(), 2.0);
        assert_eq!(cell.lambda1() * cell.alpha(), 1.0);
        assert!((cell.theta() - 4.0 / 3.0 * PI * 0.35f64.powi(3)).abs() < 1e-15);
        assert!(SchulgasserCell::centered(0.35, 0.5).is_err());
        assert!(SchulgasserCell::centered(0.35, 1.0).is_err());
        assert!(SchulgasserCell::centered(0.6, 0.75).is_err());
        let overlapping = vec![
            Crystallite { center: [0.3, 0.5, 0.5], radius: 0.15 },
            Crystallite { center: [0.55, 0.5, 0.5], radius: 0.15 },
        ];
        assert!(SchulgasserCell::new(overlapping, 0.75).is_err());
    }

    #[test]
    fn schulgasser_volume_fraction_and_bounds() {
        let cell = SchulgasserCell::centered(0.35, 0.75).unwrap();
        let g = rasterize_schulgasser(&cell, 64).unwrap();
        let frac = g.phase_fractions()[1];
        assert!((frac - cell.theta()).abs() < 2.0 / 64.0, "fraction {frac}");
        let (lo, hi) = validate_coercivity(&g).unwrap();
        assert!((lo - 0.75).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn schulgasser_voxel_on_axis_has_radial_eigenvalue() {
        let cell = SchulgasserCell::centered(0.35, 0.75).unwrap();
        let n = 64;
        let g = rasterize_schulgasser(&cell, n).unwrap();
        // voxel whose center is (0.5 + 10.5 h, 0.5 + h/2, 0.5 + h/2): nearly along e1
        let v = g.voxel_at(&[42, 32, 32]);
        let t = g.tensor(v);
        let y = g.voxel_center(v);
        let s = distance(&y, &[0.5; 3]);
        let n1 = (y[0] - 0.5) / s;
        // e1·A e1 = λ2 + (λ1 − λ2) n1²
        assert!((t.get(0, 0) - (0.75 + 1.25 * n1 * n1)).abs() < 1e-14);
        // exactly on the axis through the center the radial eigenvalue is attained
        let t_axis = cell.conductivity(&[0.7, 0.5, 0.5]).unwrap();
        assert_eq!(t_axis.get(0, 0), 2.0);
        assert_eq!(t_axis.get(1, 1), 0.75);
    }

    #[test]
    fn empty_dispersion_is_identity() {
        let cell = SchulgasserCell::new(vec![], 0.75).unwrap();
        let g = rasterize_schulgasser(&cell, 16).unwrap();
        assert!((0..g.num_voxels()).all(|v| g.tensor(v) == Tensor2::identity(3) && g.phase(v) == 0));
    }

    #[test]
    fn rasterization_is_deterministic() {
        let cell = SchulgasserCell::centered(0.3, 0.7).unwrap();
        let a = rasterize_schulgasser(&cell, 32).unwrap();
        let b = rasterize_schulgasser(&cell, 32).unwrap();
        assert!(a.packed_tensors().iter().zip(b.packed_tensors()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.phases(), b.phases());
    }

    #[test]
    fn volume_fraction_error_shrinks_with_resolution() {
        let cell = SchulgasserCell::centered(0.35, 0.75).unwrap();
        let errs: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&n| (rasterize_schulgasser(&cell, n).unwrap().phase_fractions()[1] - cell.theta()).abs())
            .collect();
        for (e, n) in errs.iter().zip([32.0, 64.0, 128.0]) {
            assert!(*e < 2.0 / n, "error {e} at {n}");
        }
    }

    #[test]
    fn coercivity_bounds_are_attained() {
        let k = [Tensor2::identity(2), Tensor2::isotropic(2, 3.0)];
        let g = build_laminate(1, &[0.25, 0.75], &k, 16).unwrap();
        let (lo, hi) = validate_coercivity(&g).unwrap();
        let attained_lo = (0..g.num_voxels()).any(|v| g.tensor(v).eigen_bounds().0 == lo);
        let attained_hi = (0..g.num_voxels()).any(|v| g.tensor(v).eigen_bounds().1 == hi);
        assert!(attained_lo && attained_hi);
    }
}
