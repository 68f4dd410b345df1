//! Residual-type a posteriori estimator for the phase-field obstacle problem.
//!
//! Every non-hanging node gets a class and up to four contributions: the
//! element residual (η₁), interior jumps (η₂), the Neumann residual on the
//! boundary (η₃) and, for semi-contact nodes, the constraining-force term (η₄).

use std::sync::Arc;

use rayon::prelude::*;

use crate::fespace::{gauss_legendre, shape, QuadratureRule, ScalarSpace};
use crate::material::{stress_plus, MaterialParams};
use crate::mesh::{CellId, Mesh, Patch, SideId, VertexId, SIDE_CORNERS, SIDE_NORMALS};
use crate::system::{CellData, Obstacle, Source, TimeStepState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub tol_contact: f64,
    pub tol_sign: f64,
    /// Nodes with `y >= 10 - strip` are excluded; zero disables the strip.
    pub strip: f64,
    /// Use `|∇φ|` instead of `∇φ·n` on boundary sides.
    pub eta3_full_gradient: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            tol_contact: 1e-8,
            tol_sign: 1e-10,
            strip: 0.0,
            eta3_full_gradient: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Free,
    SemiContact,
    FullContact,
}

impl NodeClass {
    pub fn code(self) -> i32 {
        match self {
            NodeClass::Free => 0,
            NodeClass::SemiContact => 1,
            NodeClass::FullContact => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeClass::Free => "free",
            NodeClass::SemiContact => "semi_contact",
            NodeClass::FullContact => "full_contact",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeEstimate {
    pub vertex: VertexId,
    pub class: NodeClass,
    pub alpha: f64,
    pub s: f64,
    pub eta: [f64; 4],
    pub excluded: bool,
}

impl NodeEstimate {
    pub fn eta_squared(&self) -> f64 {
        self.eta.iter().map(|e| e * e).sum()
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorReport {
    /// One entry per DoF.
    pub nodes: Vec<NodeEstimate>,
    pub eta_k: [f64; 4],
    pub eta: f64,
    /// Aligned with `mesh.active_cells()`.
    pub indicators: Vec<f64>,
}

impl EstimatorReport {
    pub fn eta_squared(&self) -> f64 {
        self.eta * self.eta
    }
}

/// Everything the estimator needs about one converged step.
pub struct EstimatorInput<'a> {
    pub state: &'a TimeStepState,
    pub obstacle: &'a Obstacle,
    pub params: MaterialParams,
    pub source: Option<&'a Source>,
}

const CORNERS: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

impl EstimatorInput<'_> {
    fn space(&self) -> &Arc<ScalarSpace> {
        &self.state.space
    }

    fn mesh(&self) -> &Mesh {
        self.state.space.mesh()
    }

    fn cell_data(&self, cell: CellId) -> CellData {
        let s = self.state;
        CellData::gather(&s.space, cell, &s.u, &s.phi, &s.phi)
    }

    fn physical(&self, cell: CellId, r: [f64; 2]) -> [f64; 2] {
        let ([x0, y0], h) = self.mesh().cell_geometry(cell);
        [x0 + r[0] * h, y0 + r[1] * h]
    }

    fn driving(&self, data: &CellData, r: [f64; 2]) -> (f64, f64) {
        let p = &self.params;
        let pv = data.at(r);
        let q = stress_plus(&pv.strain, p.mu, p.lambda).ddot(&pv.strain);
        (pv.phi, q)
    }

    /// `r(φ_h) = G_c/ε (1 - φ_h) - (1-κ) σ⁺:E φ_h + f`; the Laplacian of a Q1
    /// function vanishes on rectangles.
    pub fn element_residual(&self, cell: CellId, r: [f64; 2]) -> f64 {
        self.residual_with(&self.cell_data(cell), cell, r)
    }

    fn residual_with(&self, data: &CellData, cell: CellId, r: [f64; 2]) -> f64 {
        let p = &self.params;
        let (phi, q) = self.driving(data, r);
        let f = self.source.map_or(0.0, |f| f(self.physical(cell, r)));
        p.g_c / p.epsilon * (1.0 - phi) - (1.0 - p.kappa) * q * phi + f
    }

    fn alpha_at(&self, data: &CellData, r: [f64; 2]) -> f64 {
        let p = &self.params;
        let (_, q) = self.driving(data, r);
        p.g_c / p.epsilon + (1.0 - p.kappa) * q
    }

    fn grad_phi(&self, cell: CellId, r: [f64; 2]) -> [f64; 2] {
        self.cell_data(cell).at(r).grad_phi
    }

    /// Point on a side at parameter `t ∈ [0,1]`, in physical coordinates.
    fn side_point(&self, side: SideId, t: f64) -> [f64; 2] {
        let s = self.mesh().side(side);
        let (c, k) = s.first;
        let [a, b] = SIDE_CORNERS[k];
        let (ra, rb) = (CORNERS[a], CORNERS[b]);
        self.physical(
            c,
            [ra[0] + t * (rb[0] - ra[0]), ra[1] + t * (rb[1] - ra[1])],
        )
    }

    fn reference(&self, cell: CellId, x: [f64; 2]) -> [f64; 2] {
        let ([x0, y0], h) = self.mesh().cell_geometry(cell);
        [
            ((x[0] - x0) / h).clamp(0.0, 1.0),
            ((x[1] - y0) / h).clamp(0.0, 1.0),
        ]
    }

    /// `G_c ε (∇φ|other - ∇φ|first) · n_first` at parameter `t` on an interior side.
    pub fn side_jump(&self, side: SideId, t: f64) -> Option<f64> {
        let s = self.mesh().side(side);
        let (other, _) = s.second?;
        let (first, k) = s.first;
        let x = self.side_point(side, t);
        let g1 = self.grad_phi(first, self.reference(first, x));
        let g2 = self.grad_phi(other, self.reference(other, x));
        let n = SIDE_NORMALS[k];
        let p = &self.params;
        Some(p.g_c * p.epsilon * ((g2[0] - g1[0]) * n[0] + (g2[1] - g1[1]) * n[1]))
    }

    /// Neumann residual density on a boundary side.
    fn boundary_flux(&self, side: SideId, t: f64, full_gradient: bool) -> f64 {
        let s = self.mesh().side(side);
        let (cell, k) = s.first;
        let x = self.side_point(side, t);
        let g = self.grad_phi(cell, self.reference(cell, x));
        let p = &self.params;
        let v = if full_gradient {
            g[0].hypot(g[1])
        } else {
            g[0] * SIDE_NORMALS[k][0] + g[1] * SIDE_NORMALS[k][1]
        };
        p.g_c * p.epsilon * v
    }

    fn side_length(&self, side: SideId) -> f64 {
        self.mesh().cell_geometry(self.mesh().side(side).first.0).1
    }

    /// `s_p = Λ_p / ∫ φ_p`.
    pub fn lumped_force(&self) -> Vec<f64> {
        self.space()
            .hat_masses()
            .iter()
            .zip(&self.state.lambda)
            .map(|(m, l)| l / m)
            .collect()
    }

    fn in_contact(&self, dof: usize, tol: f64) -> bool {
        self.obstacle.values[dof] - self.state.phi[dof] <= tol
    }

    /// Node classes per DoF.
    pub fn classify(&self, cfg: &EstimatorConfig) -> Vec<NodeClass> {
        let space = self.space();
        (0..space.n_dofs())
            .into_par_iter()
            .map(|d| {
                let patch = self
                    .mesh()
                    .patch_of(space.vertex_of_dof(d))
                    .expect("DoF vertex is not hanging");
                self.classify_node(d, &patch, cfg)
            })
            .collect()
    }

    fn classify_node(&self, dof: usize, patch: &Patch, cfg: &EstimatorConfig) -> NodeClass {
        if !self.in_contact(dof, cfg.tol_contact) {
            return NodeClass::Free;
        }
        let space = self.space();
        let mesh = self.mesh();
        let all_contact = patch.cells.iter().all(|&c| {
            mesh.cell(c)
                .vertices
                .iter()
                .all(|&v| match space.dof_of_vertex(v) {
                    Some(q) => self.in_contact(q, cfg.tol_contact),
                    None => true,
                })
        });
        if !all_contact {
            return NodeClass::SemiContact;
        }
        let quad = QuadratureRule::gauss2();
        let residual_ok = patch.cells.iter().all(|&c| {
            let data = self.cell_data(c);
            quad.points
                .iter()
                .all(|&r| self.residual_with(&data, c, r) >= -cfg.tol_sign)
        });
        let (gx, _) = gauss_legendre(2);
        let jumps_ok = residual_ok
            && patch.interior_sides.iter().all(|&s| {
                gx.iter()
                    .all(|&t| self.side_jump(s, t).unwrap_or(0.0) >= -cfg.tol_sign)
            });
        if jumps_ok {
            NodeClass::FullContact
        } else {
            NodeClass::SemiContact
        }
    }

    fn node_estimate(&self, dof: usize, s_p: f64, cfg: &EstimatorConfig) -> NodeEstimate {
        let space = self.space();
        let mesh = self.mesh();
        let v = space.vertex_of_dof(dof);
        let patch = mesh.patch_of(v).expect("DoF vertex is not hanging");
        let class = self.classify_node(dof, &patch, cfg);
        let quad = QuadratureRule::gauss2();
        let (gx, gw) = gauss_legendre(2);
        let p = &self.params;
        let gce = p.g_c * p.epsilon;

        let mut alpha = f64::INFINITY;
        let mut r2 = 0.0;
        for &c in &patch.cells {
            let data = self.cell_data(c);
            let h = data.h;
            for (r, w) in quad.points.iter().zip(&quad.weights) {
                alpha = alpha.min(self.alpha_at(&data, *r));
                r2 += w * h * h * self.residual_with(&data, c, *r).powi(2);
            }
            for r in CORNERS {
                alpha = alpha.min(self.alpha_at(&data, r));
            }
        }
        let excluded = cfg.strip > 0.0 && mesh.vertex(v).coords[1] >= 10.0 - cfg.strip;
        let mut eta = [0.0; 4];
        if !excluded {
            let weight = (patch.diameter / gce.sqrt()).min(alpha.powf(-0.5));
            let side_weight = weight.sqrt() * gce.powf(-0.25);
            match class {
                NodeClass::FullContact => {}
                NodeClass::Free => {
                    eta[0] = weight * r2.sqrt();
                    if mesh.is_boundary_vertex(v) {
                        let mut b2 = 0.0;
                        for &s in &patch.boundary_sides {
                            let len = self.side_length(s);
                            for (t, w) in gx.iter().zip(&gw) {
                                b2 += w
                                    * len
                                    * self.boundary_flux(s, *t, cfg.eta3_full_gradient).powi(2);
                            }
                        }
                        eta[2] = side_weight * b2.sqrt();
                    } else {
                        let mut j2 = 0.0;
                        for &s in &patch.interior_sides {
                            let len = self.side_length(s);
                            for (t, w) in gx.iter().zip(&gw) {
                                j2 += w * len * self.side_jump(s, *t).unwrap_or(0.0).powi(2);
                            }
                        }
                        eta[1] = side_weight * j2.sqrt();
                    }
                }
                NodeClass::SemiContact => {
                    let radicand = s_p * self.contact_integral(dof, &patch);
                    eta[3] = radicand.max(0.0).sqrt();
                }
            }
        }
        NodeEstimate {
            vertex: v,
            class,
            alpha,
            s: s_p,
            eta,
            excluded,
        }
    }

    /// `∫_{ω̃_p} (obstacle - φ_h) φ_p` over the corner sub-squares of side `h/4`.
    fn contact_integral(&self, dof: usize, patch: &Patch) -> f64 {
        let space = self.space();
        let mesh = self.mesh();
        let quad = QuadratureRule::gauss2();
        let mut total = 0.0;
        for &c in &patch.cells {
            let verts = mesh.cell(c).vertices;
            let Some(corner) = verts.iter().position(|&v| v == patch.node) else {
                continue;
            };
            let gap = verts.map(|v| {
                space.vertex_value(&self.obstacle.values, v)
                    - space.vertex_value(&self.state.phi, v)
            });
            let hat = verts.map(|v| {
                space
                    .expansion(v)
                    .iter()
                    .filter(|(d, _)| *d == dof)
                    .map(|(_, w)| w)
                    .sum::<f64>()
            });
            let origin = CORNERS[corner].map(|x| if x == 0.0 { 0.0 } else { 0.75 });
            let h = mesh.cell_geometry(c).1;
            for (q, w) in quad.points.iter().zip(&quad.weights) {
                let r = [origin[0] + 0.25 * q[0], origin[1] + 0.25 * q[1]];
                let n = shape(r);
                let g: f64 = (0..4).map(|a| n[a] * gap[a]).sum();
                let f: f64 = (0..4).map(|a| n[a] * hat[a]).sum();
                total += w * (0.25 * h) * (0.25 * h) * g * f;
            }
        }
        total
    }

    pub fn estimate(&self, cfg: &EstimatorConfig) -> EstimatorReport {
        let space = self.space();
        let mesh = self.mesh();
        let s = self.lumped_force();
        let nodes: Vec<NodeEstimate> = (0..space.n_dofs())
            .into_par_iter()
            .map(|d| self.node_estimate(d, s[d], cfg))
            .collect();
        let mut sums = [0.0; 4];
        for node in &nodes {
            for k in 0..4 {
                sums[k] += node.eta[k] * node.eta[k];
            }
        }
        let eta_k = sums.map(f64::sqrt);
        let indicators = mesh
            .active_cells()
            .iter()
            .map(|&c| {
                mesh.cell(c)
                    .vertices
                    .iter()
                    .filter_map(|&v| space.dof_of_vertex(v))
                    .filter(|&d| !nodes[d].excluded)
                    .map(|d| {
                        nodes[d].eta_squared() / mesh.cells_of_vertex(nodes[d].vertex).len() as f64
                    })
                    .sum()
            })
            .collect();
        EstimatorReport {
            nodes,
            eta_k,
            eta: eta_k.iter().sum(),
            indicators,
        }
    }
}

/// `(G_c ε ‖∇f‖² + ‖√weight f‖²)^{1/2}` with a caller-supplied weight.
pub fn energy_norm_weighted(
    space: &ScalarSpace,
    coeffs: &[f64],
    gc_eps: f64,
    weight: impl Fn(CellId, [f64; 2]) -> f64,
) -> f64 {
    let quad = QuadratureRule::gauss2();
    let mesh = space.mesh();
    let mut total = 0.0;
    for &c in mesh.active_cells() {
        let vals = space.corner_values(c, coeffs);
        let h = mesh.cell_geometry(c).1;
        let data = CellData {
            h,
            u: [[0.0; 2]; 4],
            phi: vals,
            lag: vals,
        };
        for (r, w) in quad.points.iter().zip(&quad.weights) {
            let pv = data.at(*r);
            let g2 = pv.grad_phi[0].powi(2) + pv.grad_phi[1].powi(2);
            total += w * h * h * (gc_eps * g2 + weight(c, *r) * pv.phi * pv.phi);
        }
    }
    total.sqrt()
}

/// Energy norm with weight `G_c/ε + (1-κ) σ⁺(u):E(u)` taken from `state`.
pub fn energy_norm(coeffs: &[f64], state: &TimeStepState, params: &MaterialParams) -> f64 {
    let space = &state.space;
    energy_norm_weighted(space, coeffs, params.g_c * params.epsilon, |c, r| {
        let data = CellData::gather(space, c, &state.u, &state.phi, &state.phi);
        let pv = data.at(r);
        params.g_c / params.epsilon
            + (1.0 - params.kappa)
                * stress_plus(&pv.strain, params.mu, params.lambda).ddot(&pv.strain)
    })
}
