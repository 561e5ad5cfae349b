#![allow(dead_code)]

use homconc::fem::BoundaryCondition;
use homconc::geometry::{build_laminate, build_multiphase, CellGrid};
use homconc::macro_solver::MacroProblem;
use homconc::sweep::{Integrand, SweepConfig, TestFunction};
use homconc::{EffectiveTensor, Tensor2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn laminate(resolution: usize) -> CellGrid {
    build_laminate(0, &[0.5, 0.5], &[Tensor2::identity(2), Tensor2::isotropic(2, 2.0)], resolution).unwrap()
}

pub fn diag(d: &[f64]) -> EffectiveTensor {
    EffectiveTensor {
        dim: d.len(),
        entries: (0..d.len()).map(|i| (0..d.len()).map(|j| if i == j { d[i] } else { 0.0 }).collect()).collect(),
    }
}

/// `u = 0` on the left, flux `g` on the right, insulated elsewhere.
pub fn flux_strip(dim: usize, g: f64) -> Vec<BoundaryCondition> {
    let mut bc = vec![BoundaryCondition::Neumann { flux: 0.0 }; 2 * dim];
    bc[0] = BoundaryCondition::Dirichlet { value: 0.0 };
    bc[1] = BoundaryCondition::Neumann { flux: g };
    bc
}

/// `u = left` and `u = right` on the two ends of axis 0, insulated elsewhere.
pub fn dirichlet_strip(dim: usize, left: f64, right: f64) -> Vec<BoundaryCondition> {
    let mut bc = vec![BoundaryCondition::Neumann { flux: 0.0 }; 2 * dim];
    bc[0] = BoundaryCondition::Dirichlet { value: left };
    bc[1] = BoundaryCondition::Dirichlet { value: right };
    bc
}

/// Laminate cell on the unit square with a unit source, grounded left and
/// right ends and insulated top and bottom; gradients vary across `D`.
pub fn laminate_strip_sweep() -> SweepConfig {
    let problem = MacroProblem::uniform(&[1.0, 1.0], &[64, 64], diag(&[1.0, 1.0]), 1.0, dirichlet_strip(2, 0.0, 0.0))
        .unwrap();
    let mut cfg = SweepConfig::new(laminate(8), problem, vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0]);
    cfg.t_grid = (1..=40).map(|k| k as f64 * 0.01).collect();
    cfg.test_functions = vec![TestFunction::One, TestFunction::PhaseIndicator { phase: 0 }];
    cfg.integrands = vec![Integrand::Power { p: 2.0 }, Integrand::ClippedPower { p: 2.0, cap: 0.01 }];
    cfg
}

/// Random two-phase 2D cell: phase 1 fills a random union of boxes, both
/// phases get random SPD tensors.
pub fn random_two_phase(rng: &mut ChaCha8Rng, resolution: usize) -> CellGrid {
    let n = resolution;
    let mut mask = vec![false; n * n];
    let boxes = rng.random_range(1..4);
    for _ in 0..boxes {
        let (x0, y0) = (rng.random_range(0..n), rng.random_range(0..n));
        let (w, h) = (rng.random_range(1..n / 2), rng.random_range(1..n / 2));
        for i in 0..w {
            for j in 0..h {
                mask[((x0 + i) % n) * n + (y0 + j) % n] = true;
            }
        }
    }
    let mut tensor = || {
        let (a, b) = (rng.random_range(0.2..5.0), rng.random_range(0.2..5.0));
        let c = rng.random_range(-0.9..0.9) * (a * b as f64).sqrt();
        Tensor2::from_rows(&[vec![a, c], vec![c, b]]).unwrap()
    };
    let tensors = vec![tensor(), tensor()];
    let m1: Vec<bool> = mask.iter().map(|m| !m).collect();
    build_multiphase(&[m1, mask], &tensors, n).unwrap()
}
