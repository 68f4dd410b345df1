//! Residual and semi-smooth Jacobian of the coupled displacement / phase-field /
//! multiplier system for one loading step.
//!
//! Unknowns are packed as `[u (2n, interleaved) | φ (n) | Λ (n)]` over the `n`
//! scalar DoFs of the space.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::fespace::{shape, shape_grad, FeFunction, QuadratureRule, ScalarSpace, VectorFunction};
use crate::material::{
    degradation, dstress_split, stress_minus, stress_plus, MaterialParams, Sym2,
};
use crate::mesh::CellId;
use crate::newton::{NonlinearSystem, SparseMatrix};

pub type Source = dyn Fn([f64; 2]) -> f64 + Sync;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SystemError {
    #[error("field '{field}' has {got} values, space has {expected} DoFs")]
    MeshMismatch {
        field: &'static str,
        got: usize,
        expected: usize,
    },
}

/// Converged (or trial) fields of one loading step.
#[derive(Debug, Clone)]
pub struct TimeStepState {
    pub space: Arc<ScalarSpace>,
    pub t: f64,
    pub u: Vec<[f64; 2]>,
    pub phi: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl TimeStepState {
    /// Undeformed, undamaged state with zero multiplier.
    pub fn undamaged(space: &Arc<ScalarSpace>, t: f64) -> Self {
        let n = space.n_dofs();
        TimeStepState {
            space: space.clone(),
            t,
            u: vec![[0.0; 2]; n],
            phi: vec![1.0; n],
            lambda: vec![0.0; n],
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.phi.len()
    }

    /// Size of the coupled system: two displacement components, φ and Λ per node.
    pub fn n_unknowns(&self) -> usize {
        4 * self.phi.len()
    }

    pub fn pack(&self) -> Vec<f64> {
        let n = self.n_dofs();
        let mut x = Vec::with_capacity(4 * n);
        x.extend(self.u.iter().flatten());
        x.extend(&self.phi);
        x.extend(&self.lambda);
        x
    }

    pub fn unpack(space: &Arc<ScalarSpace>, t: f64, x: &[f64]) -> Self {
        let n = space.n_dofs();
        assert_eq!(x.len(), 4 * n);
        TimeStepState {
            space: space.clone(),
            t,
            u: x[..2 * n].chunks(2).map(|c| [c[0], c[1]]).collect(),
            phi: x[2 * n..3 * n].to_vec(),
            lambda: x[3 * n..].to_vec(),
        }
    }

    pub fn displacement(&self) -> VectorFunction {
        VectorFunction {
            space: self.space.clone(),
            coeffs: self.u.clone(),
        }
    }

    pub fn phase_field(&self) -> FeFunction {
        FeFunction {
            space: self.space.clone(),
            coeffs: self.phi.clone(),
        }
    }
}

/// Nodal upper bound for the phase field.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub values: Vec<f64>,
}

impl Obstacle {
    pub fn constant(n: usize, value: f64) -> Self {
        Obstacle {
            values: vec![value; n],
        }
    }
}

/// Nodal interpolation of the previous phase field onto the current space.
pub fn obstacle_from_previous(prev_phi: &FeFunction, space: &Arc<ScalarSpace>) -> Obstacle {
    Obstacle {
        values: prev_phi.interpolate_to(space).coeffs,
    }
}

/// Corner data of one cell, with hanging values already resolved.
pub(crate) struct CellData {
    pub h: f64,
    pub u: [[f64; 2]; 4],
    pub phi: [f64; 4],
    pub lag: [f64; 4],
}

/// Field values at a point of a cell.
pub(crate) struct PointValues {
    pub n: [f64; 4],
    /// Physical gradients of the corner shape functions.
    pub dn: [[f64; 2]; 4],
    pub strain: Sym2,
    pub phi: f64,
    pub grad_phi: [f64; 2],
    pub lag: f64,
}

impl CellData {
    pub fn gather(
        space: &ScalarSpace,
        cell: CellId,
        u: &[[f64; 2]],
        phi: &[f64],
        lag: &[f64],
    ) -> Self {
        let (_, h) = space.mesh().cell_geometry(cell);
        CellData {
            h,
            u: space.corner_vectors(cell, u),
            phi: space.corner_values(cell, phi),
            lag: space.corner_values(cell, lag),
        }
    }

    pub fn at(&self, r: [f64; 2]) -> PointValues {
        let n = shape(r);
        let g = shape_grad(r);
        let dn = g.map(|d| [d[0] / self.h, d[1] / self.h]);
        let mut grad_u = [[0.0; 2]; 2];
        let (mut phi, mut lag, mut grad_phi) = (0.0, 0.0, [0.0; 2]);
        for a in 0..4 {
            for c in 0..2 {
                grad_u[c][0] += self.u[a][c] * dn[a][0];
                grad_u[c][1] += self.u[a][c] * dn[a][1];
            }
            phi += n[a] * self.phi[a];
            lag += n[a] * self.lag[a];
            grad_phi[0] += self.phi[a] * dn[a][0];
            grad_phi[1] += self.phi[a] * dn[a][1];
        }
        PointValues {
            n,
            dn,
            strain: Sym2::from_grad(grad_u),
            phi,
            grad_phi,
            lag,
        }
    }
}

/// Strain of the test field `N_a e_k`.
fn basis_strain(dn: [f64; 2], k: usize) -> Sym2 {
    if k == 0 {
        Sym2::new(dn[0], 0.0, 0.5 * dn[1])
    } else {
        Sym2::new(0.0, dn[1], 0.5 * dn[0])
    }
}

struct LocalResidual {
    u: [[f64; 2]; 4],
    phi: [f64; 4],
}

struct LocalJacobian {
    uu: [[f64; 8]; 8],
    pu: [[f64; 8]; 4],
    pp: [[f64; 4]; 4],
}

/// One loading step's nonlinear system.
pub struct StepProblem<'a> {
    pub space: &'a Arc<ScalarSpace>,
    pub params: MaterialParams,
    /// Complementarity constant.
    pub c: f64,
    pub obstacle: &'a Obstacle,
    /// Phase field of the previous step on this space; enters the degradation.
    pub lagged_phi: &'a [f64],
    /// Prescribed displacement components keyed by packed index `2·dof + k`.
    pub dirichlet: &'a BTreeMap<usize, f64>,
    pub source: Option<&'a Source>,
    quad: QuadratureRule,
}

impl<'a> StepProblem<'a> {
    pub fn new(
        space: &'a Arc<ScalarSpace>,
        params: MaterialParams,
        c: f64,
        obstacle: &'a Obstacle,
        lagged_phi: &'a [f64],
        dirichlet: &'a BTreeMap<usize, f64>,
        source: Option<&'a Source>,
    ) -> Result<Self, SystemError> {
        let n = space.n_dofs();
        for (field, got) in [
            ("obstacle", obstacle.values.len()),
            ("lagged_phi", lagged_phi.len()),
        ] {
            if got != n {
                return Err(SystemError::MeshMismatch {
                    field,
                    got,
                    expected: n,
                });
            }
        }
        Ok(StepProblem {
            space,
            params,
            c,
            obstacle,
            lagged_phi,
            dirichlet,
            source,
            quad: QuadratureRule::gauss2(),
        })
    }

    pub fn n(&self) -> usize {
        self.space.n_dofs()
    }

    /// Sets the prescribed components of a packed vector.
    pub fn impose_dirichlet(&self, x: &mut [f64]) {
        for (&i, &v) in self.dirichlet {
            x[i] = v;
        }
    }

    fn split<'x>(&self, x: &'x [f64]) -> (Vec<[f64; 2]>, &'x [f64], &'x [f64]) {
        let n = self.n();
        assert_eq!(x.len(), 4 * n, "packed vector does not match the space");
        let u = x[..2 * n].chunks(2).map(|c| [c[0], c[1]]).collect();
        (u, &x[2 * n..3 * n], &x[3 * n..])
    }

    /// `true` where the constraint is active: `Λ_p − c(obstacle − φ)_p > 0`.
    pub fn active_set(&self, x: &[f64]) -> Vec<bool> {
        let n = self.n();
        (0..n)
            .map(|p| x[3 * n + p] - self.c * (self.obstacle.values[p] - x[2 * n + p]) > 0.0)
            .collect()
    }

    fn cell_residual(&self, cell: CellId, u: &[[f64; 2]], phi: &[f64]) -> LocalResidual {
        let p = &self.params;
        let data = CellData::gather(self.space, cell, u, phi, self.lagged_phi);
        let (origin, h) = self.space.mesh().cell_geometry(cell);
        let mut out = LocalResidual {
            u: [[0.0; 2]; 4],
            phi: [0.0; 4],
        };
        for (r, w) in self.quad.points.iter().zip(&self.quad.weights) {
            let wd = w * h * h;
            let pv = data.at(*r);
            let sp = stress_plus(&pv.strain, p.mu, p.lambda);
            let sm = stress_minus(&pv.strain, p.mu, p.lambda);
            let (g, _) = degradation(pv.lag, p.kappa);
            let sigma = g * sp + sm;
            let q = sp.ddot(&pv.strain);
            let f = self
                .source
                .map_or(0.0, |f| f([origin[0] + r[0] * h, origin[1] + r[1] * h]));
            let reaction = (1.0 - p.kappa) * pv.phi * q - p.g_c / p.epsilon * (1.0 - pv.phi) - f;
            for a in 0..4 {
                let t = sigma.apply(pv.dn[a]);
                out.u[a][0] += wd * t[0];
                out.u[a][1] += wd * t[1];
                out.phi[a] += wd
                    * (reaction * pv.n[a]
                        + p.epsilon
                            * p.g_c
                            * (pv.grad_phi[0] * pv.dn[a][0] + pv.grad_phi[1] * pv.dn[a][1]));
            }
        }
        out
    }

    fn cell_jacobian(&self, cell: CellId, u: &[[f64; 2]], phi: &[f64]) -> LocalJacobian {
        let p = &self.params;
        let data = CellData::gather(self.space, cell, u, phi, self.lagged_phi);
        let h = data.h;
        let mut out = LocalJacobian {
            uu: [[0.0; 8]; 8],
            pu: [[0.0; 8]; 4],
            pp: [[0.0; 4]; 4],
        };
        for (r, w) in self.quad.points.iter().zip(&self.quad.weights) {
            let wd = w * h * h;
            let pv = data.at(*r);
            let sp = stress_plus(&pv.strain, p.mu, p.lambda);
            let (g, _) = degradation(pv.lag, p.kappa);
            let q = sp.ddot(&pv.strain);
            let strains: [Sym2; 8] = std::array::from_fn(|i| basis_strain(pv.dn[i / 2], i % 2));
            for (j, bj) in strains.iter().enumerate() {
                let (dp, dm) = dstress_split(&pv.strain, bj, p.mu, p.lambda);
                let ds = g * dp + dm;
                for (i, bi) in strains.iter().enumerate() {
                    out.uu[i][j] += wd * ds.ddot(bi);
                }
                let coupling = 2.0 * (1.0 - p.kappa) * pv.phi * sp.ddot(bj);
                for a in 0..4 {
                    out.pu[a][j] += wd * coupling * pv.n[a];
                }
            }
            let react = (1.0 - p.kappa) * q + p.g_c / p.epsilon;
            for a in 0..4 {
                for b in 0..4 {
                    let diff = pv.dn[a][0] * pv.dn[b][0] + pv.dn[a][1] * pv.dn[b][1];
                    out.pp[a][b] += wd * (react * pv.n[a] * pv.n[b] + p.epsilon * p.g_c * diff);
                }
            }
        }
        out
    }

    pub fn assemble_residual(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let (u, phi, lambda) = self.split(x);
        let mesh = self.space.mesh();
        let locals: Vec<LocalResidual> = mesh
            .active_cells()
            .par_iter()
            .map(|&c| self.cell_residual(c, &u, phi))
            .collect();
        let mut res = vec![0.0; 4 * n];
        for (&c, local) in mesh.active_cells().iter().zip(&locals) {
            for (a, &v) in mesh.cell(c).vertices.iter().enumerate() {
                for &(d, w) in self.space.expansion(v) {
                    res[2 * d] += w * local.u[a][0];
                    res[2 * d + 1] += w * local.u[a][1];
                    res[2 * n + d] += w * local.phi[a];
                }
            }
        }
        for (&i, &val) in self.dirichlet {
            res[i] = x[i] - val;
        }
        for p in 0..n {
            res[2 * n + p] += lambda[p];
            let gap = self.obstacle.values[p] - phi[p];
            res[3 * n + p] = lambda[p] - (lambda[p] - self.c * gap).max(0.0);
        }
        res
    }

    pub fn assemble_jacobian(&self, x: &[f64]) -> SparseMatrix {
        let n = self.n();
        let (u, phi, _) = self.split(x);
        let mesh = self.space.mesh();
        let space = self.space;
        let dirichlet = self.dirichlet;
        let chunks: Vec<Vec<(usize, usize, f64)>> = mesh
            .active_cells()
            .par_iter()
            .map(|&c| {
                let local = self.cell_jacobian(c, &u, phi);
                let verts = mesh.cell(c).vertices;
                let exp: [&[(usize, f64)]; 4] = verts.map(|v| space.expansion(v));
                let mut trip = Vec::with_capacity(256);
                for i in 0..8 {
                    for &(di, wi) in exp[i / 2] {
                        let row = 2 * di + i % 2;
                        let keep = !dirichlet.contains_key(&row);
                        for j in 0..8 {
                            for &(dj, wj) in exp[j / 2] {
                                let col = 2 * dj + j % 2;
                                if keep {
                                    trip.push((row, col, wi * wj * local.uu[i][j]));
                                }
                            }
                        }
                    }
                }
                for a in 0..4 {
                    for &(da, wa) in exp[a] {
                        let row = 2 * n + da;
                        for j in 0..8 {
                            for &(dj, wj) in exp[j / 2] {
                                trip.push((row, 2 * dj + j % 2, wa * wj * local.pu[a][j]));
                            }
                        }
                        for b in 0..4 {
                            for &(db, wb) in exp[b] {
                                trip.push((row, 2 * n + db, wa * wb * local.pp[a][b]));
                            }
                        }
                    }
                }
                trip
            })
            .collect();
        let total: usize = chunks.iter().map(Vec::len).sum();
        let mut trip = Vec::with_capacity(total + 4 * n);
        for chunk in chunks {
            trip.extend(chunk);
        }
        for &i in self.dirichlet.keys() {
            trip.push((i, i, 1.0));
        }
        let active = self.active_set(x);
        for p in 0..n {
            trip.push((2 * n + p, 3 * n + p, 1.0));
            let (dphi, dlam) = if active[p] {
                (-self.c, 0.0)
            } else {
                (0.0, 1.0)
            };
            trip.push((3 * n + p, 2 * n + p, dphi));
            trip.push((3 * n + p, 3 * n + p, dlam));
        }
        SparseMatrix::from_triplets(4 * n, trip)
    }
}

impl NonlinearSystem for StepProblem<'_> {
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.assemble_residual(x)
    }

    fn jacobian(&self, x: &[f64]) -> SparseMatrix {
        self.assemble_jacobian(x)
    }

    fn active_set_size(&self, x: &[f64]) -> usize {
        self.active_set(x).iter().filter(|&&a| a).count()
    }
}
