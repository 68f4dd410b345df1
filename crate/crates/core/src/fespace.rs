//! Continuous Q1 spaces on a [`Mesh`] with hanging-node condensation.
//!
//! DoFs live on non-hanging vertices. A hanging vertex takes the mean of the
//! endpoints of the coarse edge it sits on; chains are resolved recursively so
//! every vertex expands into a list of `(dof, weight)` pairs.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::mesh::{CellId, Mesh, SlitFace, SlitSide, VertexId};
use crate::scenarios::{Scenario, ScenarioConfig};

/// Tensor Gauss rule on the reference square `[0,1]²`; weights sum to 1.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre nodes and weights on `[0,1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    let mut pairs: Vec<(f64, f64)> = nodes.into_iter().zip(weights).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

impl QuadratureRule {
    pub fn gauss(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                points.push([x[i], x[j]]);
                weights.push(w[i] * w[j]);
            }
        }
        QuadratureRule { points, weights }
    }

    /// The 2×2 rule used for all volume integrals.
    pub fn gauss2() -> Self {
        Self::gauss(2)
    }
}

/// Q1 shape functions on the reference square, corners counter-clockwise.
pub fn shape(r: [f64; 2]) -> [f64; 4] {
    let [x, y] = r;
    [(1.0 - x) * (1.0 - y), x * (1.0 - y), x * y, (1.0 - x) * y]
}

/// Reference gradients of the Q1 shape functions.
pub fn shape_grad(r: [f64; 2]) -> [[f64; 2]; 4] {
    let [x, y] = r;
    [
        [-(1.0 - y), -(1.0 - x)],
        [1.0 - y, -x],
        [y, x],
        [-y, 1.0 - x],
    ]
}

#[derive(Debug)]
pub struct ScalarSpace {
    mesh: Arc<Mesh>,
    dof_of_vertex: Vec<Option<usize>>,
    vertex_of_dof: Vec<VertexId>,
    exp_ptr: Vec<usize>,
    exp_entries: Vec<(usize, f64)>,
}

impl ScalarSpace {
    pub fn new(mesh: Arc<Mesh>) -> Arc<Self> {
        let nv = mesh.vertices().len();
        let mut dof_of_vertex = vec![None; nv];
        let mut vertex_of_dof = Vec::new();
        for v in 0..nv {
            if !mesh.is_hanging(v) && !mesh.cells_of_vertex(v).is_empty() {
                dof_of_vertex[v] = Some(vertex_of_dof.len());
                vertex_of_dof.push(v);
            }
        }
        let mut memo: Vec<Option<Vec<(usize, f64)>>> = vec![None; nv];
        fn expand(
            v: VertexId,
            mesh: &Mesh,
            dofs: &[Option<usize>],
            memo: &mut Vec<Option<Vec<(usize, f64)>>>,
        ) -> Vec<(usize, f64)> {
            if let Some(e) = &memo[v] {
                return e.clone();
            }
            let e = match (dofs[v], mesh.hanging_parents(v)) {
                (Some(d), _) => vec![(d, 1.0)],
                (None, Some([a, b])) => {
                    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
                    for p in [a, b] {
                        for (d, w) in expand(p, mesh, dofs, memo) {
                            *acc.entry(d).or_insert(0.0) += 0.5 * w;
                        }
                    }
                    acc.into_iter().collect()
                }
                (None, None) => Vec::new(),
            };
            memo[v] = Some(e.clone());
            e
        }
        let mut exp_ptr = Vec::with_capacity(nv + 1);
        let mut exp_entries = Vec::new();
        exp_ptr.push(0);
        for v in 0..nv {
            exp_entries.extend(expand(v, &mesh, &dof_of_vertex, &mut memo));
            exp_ptr.push(exp_entries.len());
        }
        Arc::new(ScalarSpace {
            mesh,
            dof_of_vertex,
            vertex_of_dof,
            exp_ptr,
            exp_entries,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn n_dofs(&self) -> usize {
        self.vertex_of_dof.len()
    }

    pub fn dof_of_vertex(&self, v: VertexId) -> Option<usize> {
        self.dof_of_vertex[v]
    }

    pub fn vertex_of_dof(&self, dof: usize) -> VertexId {
        self.vertex_of_dof[dof]
    }

    /// `(dof, weight)` pairs giving the value at vertex `v`.
    pub fn expansion(&self, v: VertexId) -> &[(usize, f64)] {
        &self.exp_entries[self.exp_ptr[v]..self.exp_ptr[v + 1]]
    }

    /// Value of a coefficient vector at every vertex (hanging ones constrained).
    pub fn vertex_value(&self, coeffs: &[f64], v: VertexId) -> f64 {
        self.expansion(v).iter().map(|&(d, w)| w * coeffs[d]).sum()
    }

    pub fn corner_values(&self, cell: CellId, coeffs: &[f64]) -> [f64; 4] {
        let verts = self.mesh.cell(cell).vertices;
        verts.map(|v| self.vertex_value(coeffs, v))
    }

    pub fn corner_vectors(&self, cell: CellId, coeffs: &[[f64; 2]]) -> [[f64; 2]; 4] {
        let verts = self.mesh.cell(cell).vertices;
        verts.map(|v| {
            let mut out = [0.0; 2];
            for &(d, w) in self.expansion(v) {
                out[0] += w * coeffs[d][0];
                out[1] += w * coeffs[d][1];
            }
            out
        })
    }

    /// Exact integral of the constrained hat function of `dof` over its support.
    pub fn mass_of_hat(&self, dof: usize) -> f64 {
        let mut total = 0.0;
        for &c in self.mesh.active_cells() {
            let area = self.mesh.cell_area(c);
            for &v in &self.mesh.cell(c).vertices {
                for &(d, w) in self.expansion(v) {
                    if d == dof {
                        total += w * area / 4.0;
                    }
                }
            }
        }
        total
    }

    /// Hat masses for every DoF in one sweep.
    pub fn hat_masses(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        for &c in self.mesh.active_cells() {
            let area = self.mesh.cell_area(c);
            for &v in &self.mesh.cell(c).vertices {
                for &(d, w) in self.expansion(v) {
                    out[d] += w * area / 4.0;
                }
            }
        }
        out
    }

    fn hint_for(&self, v: VertexId) -> SlitSide {
        match self.mesh.vertex(v).face {
            SlitFace::Lower => SlitSide::Below,
            _ => SlitSide::Above,
        }
    }

    /// Interpolate a function given per vertex position and slit side.
    pub fn interpolate_fn(&self, f: impl Fn([f64; 2], SlitSide) -> f64) -> Vec<f64> {
        self.vertex_of_dof
            .iter()
            .map(|&v| f(self.mesh.vertex(v).coords, self.hint_for(v)))
            .collect()
    }
}

/// Scalar Q1 function.
#[derive(Debug, Clone)]
pub struct FeFunction {
    pub space: Arc<ScalarSpace>,
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn constant(space: &Arc<ScalarSpace>, value: f64) -> Self {
        FeFunction {
            space: space.clone(),
            coeffs: vec![value; space.n_dofs()],
        }
    }

    pub fn from_fn(space: &Arc<ScalarSpace>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let coeffs = space.interpolate_fn(|p, _| f(p));
        FeFunction {
            space: space.clone(),
            coeffs,
        }
    }

    pub fn eval(&self, cell: CellId, r: [f64; 2]) -> f64 {
        let vals = self.space.corner_values(cell, &self.coeffs);
        let n = shape(r);
        (0..4).map(|i| n[i] * vals[i]).sum()
    }

    pub fn grad(&self, cell: CellId, r: [f64; 2]) -> [f64; 2] {
        let vals = self.space.corner_values(cell, &self.coeffs);
        let (_, h) = self.space.mesh().cell_geometry(cell);
        let g = shape_grad(r);
        let mut out = [0.0; 2];
        for i in 0..4 {
            out[0] += g[i][0] * vals[i] / h;
            out[1] += g[i][1] * vals[i] / h;
        }
        out
    }

    /// Point evaluation anywhere in the domain.
    pub fn eval_at(&self, p: [f64; 2], side: SlitSide) -> f64 {
        let (cell, r) = self
            .space
            .mesh()
            .locate(p, side)
            .expect("evaluation point inside the domain");
        self.eval(cell, r)
    }

    /// Nodal interpolation onto another space derived from the same coarse mesh.
    pub fn interpolate_to(&self, target: &Arc<ScalarSpace>) -> FeFunction {
        if Arc::ptr_eq(target, &self.space) {
            return self.clone();
        }
        let coeffs = target.interpolate_fn(|p, side| self.eval_at(p, side));
        FeFunction {
            space: target.clone(),
            coeffs,
        }
    }
}

/// Vector-valued Q1 function, two components per DoF.
#[derive(Debug, Clone)]
pub struct VectorFunction {
    pub space: Arc<ScalarSpace>,
    pub coeffs: Vec<[f64; 2]>,
}

impl VectorFunction {
    pub fn zero(space: &Arc<ScalarSpace>) -> Self {
        VectorFunction {
            space: space.clone(),
            coeffs: vec![[0.0; 2]; space.n_dofs()],
        }
    }

    pub fn from_fn(space: &Arc<ScalarSpace>, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let coeffs = (0..space.n_dofs())
            .map(|d| f(space.mesh().vertex(space.vertex_of_dof(d)).coords))
            .collect();
        VectorFunction {
            space: space.clone(),
            coeffs,
        }
    }

    pub fn eval(&self, cell: CellId, r: [f64; 2]) -> [f64; 2] {
        let vals = self.space.corner_vectors(cell, &self.coeffs);
        let n = shape(r);
        let mut out = [0.0; 2];
        for i in 0..4 {
            out[0] += n[i] * vals[i][0];
            out[1] += n[i] * vals[i][1];
        }
        out
    }

    /// Displacement gradient `∂u_i/∂x_j` at a reference point.
    pub fn grad(&self, cell: CellId, r: [f64; 2]) -> [[f64; 2]; 2] {
        let vals = self.space.corner_vectors(cell, &self.coeffs);
        let (_, h) = self.space.mesh().cell_geometry(cell);
        let g = shape_grad(r);
        let mut out = [[0.0; 2]; 2];
        for i in 0..4 {
            for c in 0..2 {
                out[c][0] += vals[i][c] * g[i][0] / h;
                out[c][1] += vals[i][c] * g[i][1] / h;
            }
        }
        out
    }

    pub fn interpolate_to(&self, target: &Arc<ScalarSpace>) -> VectorFunction {
        if Arc::ptr_eq(target, &self.space) {
            return self.clone();
        }
        let mesh = self.space.mesh();
        let coeffs = (0..target.n_dofs())
            .map(|d| {
                let v = target.vertex_of_dof(d);
                let vert = target.mesh().vertex(v);
                let (cell, r) = mesh
                    .locate(vert.coords, target.hint_for(v))
                    .expect("vertex inside the domain");
                self.eval(cell, r)
            })
            .collect();
        VectorFunction {
            space: target.clone(),
            coeffs,
        }
    }
}

/// Prescribed displacement components: key `2·dof + component`, value in mm.
pub fn dirichlet_dofs(
    space: &ScalarSpace,
    config: &ScenarioConfig,
    t: f64,
) -> BTreeMap<usize, f64> {
    let mesh = space.mesh();
    let mut out = BTreeMap::new();
    let tol = 1e-12;
    let load = t * 1.0; // 1 mm/s
    for dof in 0..space.n_dofs() {
        let v = mesh.vertex(space.vertex_of_dof(dof));
        let [x, y] = v.coords;
        let bottom = y.abs() < tol;
        let top = (y - 10.0).abs() < tol;
        let side = x.abs() < tol || (x - 10.0).abs() < tol;
        let mut set = |comp: usize, val: f64| {
            out.insert(2 * dof + comp, val);
        };
        match config.scenario {
            Scenario::Shear => {
                if side || v.face == SlitFace::Lower {
                    set(1, 0.0);
                }
                if bottom {
                    set(0, 0.0);
                    set(1, 0.0);
                }
                if top {
                    // the top edge is pulled to the left
                    set(0, -load);
                    set(1, 0.0);
                }
            }
            Scenario::Tension => {
                if bottom {
                    set(1, 0.0);
                }
                if top {
                    set(0, 0.0);
                    set(1, load);
                }
            }
        }
    }
    out
}
