//! Manufactured reaction–diffusion problem for measuring estimator effectivity.
//!
//! With `u = 0` the phase-field equation reduces to
//! `G_c ε (∇φ, ∇ψ) + (G_c/ε)(φ − 1, ψ) = (f, ψ)` with natural boundary
//! conditions. The source `f = −G_c/ε` on `x < 5` and `0` elsewhere is constant
//! on every cell, so the only scale the mesh has to resolve is the layer of
//! width ε that the exact solution forms along `x = 5`:
//!
//! `φ* = ½ cosh(x/ε)/cosh(5/ε)` for `x < 5`, `1 − ½ cosh((10−x)/ε)/cosh(5/ε)` otherwise.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::estimator::{EstimatorConfig, EstimatorInput};
use crate::fespace::{gauss_legendre, ScalarSpace};
use crate::material::MaterialParams;
use crate::mesh::Mesh;
use crate::newton::{self, LinearSolver, NewtonConfig, NewtonError};
use crate::system::{CellData, Obstacle, StepProblem, TimeStepState};

const LAYER_X: f64 = 5.0;

#[derive(Debug, Clone, Copy)]
pub struct LayerProblem {
    pub g_c: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Effectivity {
    pub levels: u32,
    pub epsilon: f64,
    pub nodes: usize,
    pub eta: f64,
    pub eta_k: [f64; 4],
    pub error: f64,
}

impl Effectivity {
    pub fn ratio(&self) -> f64 {
        self.eta / self.error
    }
}

impl LayerProblem {
    /// `(cosh(d/ε)/cosh(5/ε), sinh(d/ε)/cosh(5/ε))` for `0 ≤ d ≤ 5`, without overflow.
    fn ratios(&self, d: f64) -> (f64, f64) {
        let e = self.epsilon;
        let den = 1.0 + (-10.0 / e).exp();
        let (a, b) = (((d - 5.0) / e).exp(), (-(d + 5.0) / e).exp());
        ((a + b) / den, (a - b) / den)
    }

    pub fn exact(&self, x: f64) -> f64 {
        if x < LAYER_X {
            0.5 * self.ratios(x).0
        } else {
            1.0 - 0.5 * self.ratios(10.0 - x).0
        }
    }

    pub fn exact_derivative(&self, x: f64) -> f64 {
        let d = if x < LAYER_X {
            self.ratios(x).1
        } else {
            self.ratios(10.0 - x).1
        };
        0.5 * d / self.epsilon
    }

    pub fn source(&self, x: f64) -> f64 {
        if x < LAYER_X {
            -self.g_c / self.epsilon
        } else {
            0.0
        }
    }

    fn params(&self) -> MaterialParams {
        MaterialParams {
            mu: 8.077e4,
            lambda: 1.2115e5,
            g_c: self.g_c,
            kappa: 1e-10,
            epsilon: self.epsilon,
        }
    }

    /// Solve on `levels` uniform refinements and compare estimate with the true error.
    pub fn run(&self, levels: u32) -> Result<Effectivity, NewtonError> {
        let mesh = Mesh::coarse("shear")
            .expect("known geometry")
            .uniform_refine(levels);
        let space = ScalarSpace::new(Arc::new(mesh));
        let n = space.n_dofs();
        let params = self.params();
        let c = self.g_c / self.epsilon;
        let obstacle = Obstacle::constant(n, 2.0);
        let lagged = vec![1.0; n];
        let clamp: BTreeMap<usize, f64> = (0..2 * n).map(|k| (k, 0.0)).collect();
        let me = *self;
        let source = move |p: [f64; 2]| me.source(p[0]);
        let problem =
            StepProblem::new(&space, params, c, &obstacle, &lagged, &clamp, Some(&source))
                .expect("fields built on one space");
        let x0 = TimeStepState::undamaged(&space, 0.0).pack();
        let outcome = newton::solve(
            &problem,
            x0,
            &NewtonConfig::default(),
            &mut LinearSolver::new(),
        )?;
        let state = TimeStepState::unpack(&space, 0.0, &outcome.x);
        let report = EstimatorInput {
            state: &state,
            obstacle: &obstacle,
            params,
            source: Some(&source),
        }
        .estimate(&EstimatorConfig::default());
        Ok(Effectivity {
            levels,
            epsilon: self.epsilon,
            nodes: n,
            eta: report.eta,
            eta_k: report.eta_k,
            error: self.error(&state),
        })
    }

    /// `‖φ* − φ_h‖_ε` by composite Gauss quadrature that resolves the layer.
    pub fn error(&self, state: &TimeStepState) -> f64 {
        let space = &state.space;
        let mesh = space.mesh();
        let (gx, gw) = gauss_legendre(4);
        let mut grad_sq = 0.0;
        let mut val_sq = 0.0;
        for &cell in mesh.active_cells() {
            let ([x0, _], h) = mesh.cell_geometry(cell);
            let vals = space.corner_values(cell, &state.phi);
            let data = CellData {
                h,
                u: [[0.0; 2]; 4],
                phi: vals,
                lag: vals,
            };
            let near = x0 < LAYER_X + 40.0 * self.epsilon && x0 + h > LAYER_X - 40.0 * self.epsilon;
            let pieces = if near {
                (4.0 * h / self.epsilon).ceil().clamp(1.0, 8192.0) as usize
            } else {
                1
            };
            for k in 0..pieces {
                for (tx, wx) in gx.iter().zip(&gw) {
                    let rx = (k as f64 + tx) / pieces as f64;
                    let x = x0 + rx * h;
                    for (ry, wy) in gx.iter().zip(&gw) {
                        let pv = data.at([rx, *ry]);
                        let w = wx * wy * h * h / pieces as f64;
                        let e = self.exact(x) - pv.phi;
                        let ex = self.exact_derivative(x) - pv.grad_phi[0];
                        grad_sq += w * (ex * ex + pv.grad_phi[1] * pv.grad_phi[1]);
                        val_sq += w * e * e;
                    }
                }
            }
        }
        (self.g_c * self.epsilon * grad_sq + self.g_c / self.epsilon * val_sq).sqrt()
    }
}

/// Effectivities over the grid `epsilons × levels`.
pub fn effectivity_study(
    g_c: f64,
    epsilons: &[f64],
    levels: &[u32],
) -> Result<Vec<Effectivity>, NewtonError> {
    let mut out = Vec::new();
    for &epsilon in epsilons {
        for &l in levels {
            out.push(LayerProblem { g_c, epsilon }.run(l)?);
        }
    }
    Ok(out)
}
