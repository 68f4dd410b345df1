//! Boundary load and energies of a converged step.

use crate::fespace::{gauss_legendre, QuadratureRule};
use crate::material::{
    degradation, energy_densities, stress, stress_minus, stress_plus, MaterialParams, Sym2,
};
use crate::mesh::{BoundaryMarker, SIDE_CORNERS};
use crate::system::{CellData, TimeStepState};

#[derive(Debug, Clone, PartialEq)]
pub struct QoiRecord {
    pub cycle: usize,
    pub step: usize,
    pub t: f64,
    /// Imposed boundary displacement in mm.
    pub displacement: f64,
    pub fx: f64,
    pub fy: f64,
    pub fx_deg: f64,
    pub fy_deg: f64,
    pub eb: f64,
    pub ec: f64,
    /// Unknowns of the coupled system, `4 ×` the node count.
    pub dofs: usize,
    pub eta: f64,
}

fn cell_data(state: &TimeStepState, cell: usize) -> CellData {
    CellData::gather(&state.space, cell, &state.u, &state.phi, &state.phi)
}

/// Integrate `σ·(0,1)` over the top boundary for a stress law `law(E, φ)`.
fn top_traction(state: &TimeStepState, law: impl Fn(&Sym2, f64) -> Sym2) -> (f64, f64) {
    let mesh = state.space.mesh();
    let (gx, gw) = gauss_legendre(2);
    let mut f = [0.0; 2];
    for side in mesh
        .sides()
        .iter()
        .filter(|s| s.marker == BoundaryMarker::Top)
    {
        let (cell, k) = side.first;
        let data = cell_data(state, cell);
        let [a, b] = SIDE_CORNERS[k];
        let corners = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        for (t, w) in gx.iter().zip(&gw) {
            let r = [
                corners[a][0] + t * (corners[b][0] - corners[a][0]),
                corners[a][1] + t * (corners[b][1] - corners[a][1]),
            ];
            let pv = data.at(r);
            let traction = law(&pv.strain, pv.phi).apply([0.0, 1.0]);
            f[0] += w * data.h * traction[0];
            f[1] += w * data.h * traction[1];
        }
    }
    (f[0], f[1])
}

/// Load on the top boundary from the undegraded stress, in N.
pub fn load(state: &TimeStepState, p: &MaterialParams) -> (f64, f64) {
    top_traction(state, |e, _| stress(e, p.mu, p.lambda))
}

/// Load from the degraded stress `g(φ)σ⁺ + σ⁻`.
pub fn load_degraded(state: &TimeStepState, p: &MaterialParams) -> (f64, f64) {
    top_traction(state, |e, phi| {
        degradation(phi, p.kappa).0 * stress_plus(e, p.mu, p.lambda)
            + stress_minus(e, p.mu, p.lambda)
    })
}

fn integrate(state: &TimeStepState, p: &MaterialParams, pick: impl Fn((f64, f64)) -> f64) -> f64 {
    let mesh = state.space.mesh();
    let quad = QuadratureRule::gauss2();
    let mut total = 0.0;
    for &c in mesh.active_cells() {
        let data = cell_data(state, c);
        for (r, w) in quad.points.iter().zip(&quad.weights) {
            let pv = data.at(*r);
            total +=
                w * data.h * data.h * pick(energy_densities(pv.phi, &pv.strain, pv.grad_phi, p));
        }
    }
    total
}

/// Bulk energy in N·mm.
pub fn bulk_energy(state: &TimeStepState, p: &MaterialParams) -> f64 {
    integrate(state, p, |(b, _)| b)
}

/// Crack energy in N·mm.
pub fn crack_energy(state: &TimeStepState, p: &MaterialParams) -> f64 {
    integrate(state, p, |(_, c)| c)
}

pub fn record(
    state: &TimeStepState,
    p: &MaterialParams,
    cycle: usize,
    step: usize,
    eta: f64,
) -> QoiRecord {
    let (fx, fy) = load(state, p);
    let (fx_deg, fy_deg) = load_degraded(state, p);
    QoiRecord {
        cycle,
        step,
        t: state.t,
        displacement: state.t * 1.0,
        fx,
        fy,
        fx_deg,
        fy_deg,
        eb: bulk_energy(state, p),
        ec: crack_energy(state, p),
        dofs: state.n_unknowns(),
        eta,
    }
}
