//! Hierarchical rectangular mesh of the slit square.
//!
//! The domain is `[0,10]² mm` with a slit along `{y = 5, 5 ≤ x ≤ 10}`. Every
//! mesh descends from a 4×4 coarse mesh by red refinement. Positions are kept
//! on an integer lattice so that vertex identification is exact; vertices on
//! the open slit segment exist twice, once per slit face.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

pub type VertexId = usize;
pub type CellId = usize;
pub type SideId = usize;

/// Coarse cells per direction.
pub const COARSE_CELLS: u32 = 4;
/// Edge length of the square domain in mm.
pub const DOMAIN_SIZE: f64 = 10.0;
/// Deepest refinement level a cell can reach.
pub const MAX_LEVEL: u32 = 16;

const COARSE_BITS: u32 = 20;
const COARSE_SIDE: u32 = 1 << COARSE_BITS;
const LATTICE_MAX: u32 = COARSE_CELLS * COARSE_SIDE;
const SLIT_Y: u32 = LATTICE_MAX / 2;
const SLIT_X0: u32 = LATTICE_MAX / 2;
const MM_PER_UNIT: f64 = DOMAIN_SIZE / LATTICE_MAX as f64;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("unsupported geometry `{0}`")]
    UnsupportedGeometry(String),
    #[error("vertex {0} is a hanging node")]
    HangingNode(VertexId),
    #[error("vertex {0} does not exist")]
    UnknownVertex(VertexId),
    #[error("point ({0}, {1}) lies outside the domain")]
    OutsideDomain(f64, f64),
}

/// Which face of the slit a vertex belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlitFace {
    None,
    Upper,
    Lower,
}

/// Side of the slit line used to disambiguate point location on `y = 5, x > 5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlitSide {
    Above,
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct VertexKey {
    ix: u32,
    iy: u32,
    face: SlitFace,
}

/// Geometric identity of a cell, independent of how a mesh was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub level: u32,
    pub ix: u32,
    pub iy: u32,
}

impl CellKey {
    fn size(&self) -> u32 {
        COARSE_SIDE >> self.level
    }

    /// Keys of the coarse cells, row by row from the bottom.
    pub fn coarse_keys() -> Vec<CellKey> {
        (0..COARSE_CELLS)
            .flat_map(|j| {
                (0..COARSE_CELLS).map(move |i| CellKey {
                    level: 0,
                    ix: i * COARSE_SIDE,
                    iy: j * COARSE_SIDE,
                })
            })
            .collect()
    }

    /// Lower-left corner and side length in mm.
    pub fn geometry(&self) -> ([f64; 2], f64) {
        (
            [lattice_to_mm(self.ix), lattice_to_mm(self.iy)],
            lattice_to_mm(self.size()),
        )
    }

    pub fn side(&self) -> SlitSide {
        if self.above_slit() {
            SlitSide::Above
        } else {
            SlitSide::Below
        }
    }

    pub fn children(&self) -> [CellKey; 4] {
        let s = self.size() / 2;
        let level = self.level + 1;
        [
            CellKey {
                level,
                ix: self.ix,
                iy: self.iy,
            },
            CellKey {
                level,
                ix: self.ix + s,
                iy: self.iy,
            },
            CellKey {
                level,
                ix: self.ix + s,
                iy: self.iy + s,
            },
            CellKey {
                level,
                ix: self.ix,
                iy: self.iy + s,
            },
        ]
    }

    fn above_slit(&self) -> bool {
        self.iy >= SLIT_Y
    }
}

#[derive(Debug, Clone)]
pub struct Vertex {
    pub id: VertexId,
    pub coords: [f64; 2],
    pub slit_twin: Option<VertexId>,
    pub face: SlitFace,
    key: VertexKey,
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub id: CellId,
    /// Counter-clockwise starting at the lower-left corner.
    pub vertices: [VertexId; 4],
    pub level: u32,
    pub parent: Option<CellId>,
    pub children: Option<[CellId; 4]>,
    key: CellKey,
}

impl Cell {
    pub fn is_active(&self) -> bool {
        self.children.is_none()
    }

    pub fn key(&self) -> CellKey {
        self.key
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryMarker {
    Bottom,
    Top,
    Left,
    Right,
    SlitLower,
    SlitUpper,
    Interior,
}

/// A mesh side. `first` is the cell owning the whole side; on a refinement
/// interface `second` is the coarser neighbour, whose edge contains this side.
#[derive(Debug, Clone)]
pub struct Side {
    pub endpoints: [VertexId; 2],
    pub first: (CellId, usize),
    pub second: Option<(CellId, usize)>,
    pub marker: BoundaryMarker,
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub node: VertexId,
    pub cells: Vec<CellId>,
    pub interior_sides: Vec<SideId>,
    pub boundary_sides: Vec<SideId>,
    pub diameter: f64,
}

/// Local side numbering: 0 bottom, 1 right, 2 top, 3 left.
pub const SIDE_CORNERS: [[usize; 2]; 4] = [[0, 1], [1, 2], [2, 3], [3, 0]];
pub const SIDE_NORMALS: [[f64; 2]; 4] = [[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Vertex>,
    cells: Vec<Cell>,
    coarse: Vec<CellId>,
    lookup: HashMap<VertexKey, VertexId>,
    active: Vec<CellId>,
    hanging: Vec<Option<[VertexId; 2]>>,
    node_cells: Vec<Vec<CellId>>,
    sides: Vec<Side>,
    cell_sides: HashMap<CellId, Vec<SideId>>,
}

fn lattice_to_mm(i: u32) -> f64 {
    i as f64 * MM_PER_UNIT
}

impl Mesh {
    /// The 4×4 coarse mesh every other mesh is derived from.
    pub fn coarse(geometry: &str) -> Result<Mesh, MeshError> {
        match geometry {
            "shear" | "tension" | "slit_square" => {}
            other => return Err(MeshError::UnsupportedGeometry(other.to_string())),
        }
        let mut mesh = Mesh {
            vertices: Vec::new(),
            cells: Vec::new(),
            coarse: Vec::new(),
            lookup: HashMap::new(),
            active: Vec::new(),
            hanging: Vec::new(),
            node_cells: Vec::new(),
            sides: Vec::new(),
            cell_sides: HashMap::new(),
        };
        for j in 0..COARSE_CELLS {
            for i in 0..COARSE_CELLS {
                let key = CellKey {
                    level: 0,
                    ix: i * COARSE_SIDE,
                    iy: j * COARSE_SIDE,
                };
                let id = mesh.push_cell(key, None);
                mesh.coarse.push(id);
            }
        }
        mesh.finalize();
        Ok(mesh)
    }

    /// Rebuild a mesh from the set of cells that were refined.
    pub fn from_refined(geometry: &str, refined: &BTreeSet<CellKey>) -> Result<Mesh, MeshError> {
        let mut mesh = Mesh::coarse(geometry)?;
        let mut by_key: HashMap<CellKey, CellId> =
            mesh.cells.iter().map(|c| (c.key, c.id)).collect();
        let mut keys: Vec<CellKey> = refined.iter().copied().collect();
        keys.sort_by_key(|k| (k.level, k.iy, k.ix));
        for key in keys {
            if let Some(&id) = by_key.get(&key) {
                if mesh.cells[id].is_active() && key.level < MAX_LEVEL {
                    for child in mesh.split(id) {
                        by_key.insert(mesh.cells[child].key, child);
                    }
                }
            }
        }
        mesh.finalize();
        Ok(mesh)
    }

    /// Keys of every refined (inactive) cell; a compact description of the mesh.
    pub fn refined_keys(&self) -> BTreeSet<CellKey> {
        self.cells
            .iter()
            .filter(|c| !c.is_active())
            .map(|c| c.key)
            .collect()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, id: VertexId) -> &Vertex {
        &self.vertices[id]
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn active_cells(&self) -> &[CellId] {
        &self.active
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn sides(&self) -> &[Side] {
        &self.sides
    }

    pub fn side(&self, id: SideId) -> &Side {
        &self.sides[id]
    }

    /// Sides belonging to an active cell (full sides and refinement sub-sides).
    pub fn sides_of_cell(&self, cell: CellId) -> &[SideId] {
        self.cell_sides
            .get(&cell)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Endpoints of the coarse edge a hanging vertex sits on.
    pub fn hanging_parents(&self, v: VertexId) -> Option<[VertexId; 2]> {
        self.hanging[v]
    }

    pub fn is_hanging(&self, v: VertexId) -> bool {
        self.hanging[v].is_some()
    }

    /// Active cells having `v` as a corner.
    pub fn cells_of_vertex(&self, v: VertexId) -> &[CellId] {
        &self.node_cells[v]
    }

    /// Lower-left corner and edge length (mm) of a cell.
    pub fn cell_geometry(&self, id: CellId) -> ([f64; 2], f64) {
        let k = self.cells[id].key;
        (
            [lattice_to_mm(k.ix), lattice_to_mm(k.iy)],
            lattice_to_mm(k.size()),
        )
    }

    pub fn cell_area(&self, id: CellId) -> f64 {
        let (_, h) = self.cell_geometry(id);
        h * h
    }

    /// Cell diameter `h_e`.
    pub fn cell_diameter(&self, id: CellId) -> f64 {
        self.cell_geometry(id).1 * std::f64::consts::SQRT_2
    }

    pub fn max_level(&self) -> u32 {
        self.active
            .iter()
            .map(|&c| self.cells[c].level)
            .max()
            .unwrap_or(0)
    }

    /// True for vertices on the outer boundary or on the slit (tip included).
    pub fn is_boundary_vertex(&self, v: VertexId) -> bool {
        let k = self.vertices[v].key;
        k.ix == 0
            || k.iy == 0
            || k.ix == LATTICE_MAX
            || k.iy == LATTICE_MAX
            || k.face != SlitFace::None
            || (k.iy == SLIT_Y && k.ix == SLIT_X0)
    }

    fn push_cell(&mut self, key: CellKey, parent: Option<CellId>) -> CellId {
        let s = key.size();
        let corners = [
            (key.ix, key.iy),
            (key.ix + s, key.iy),
            (key.ix + s, key.iy + s),
            (key.ix, key.iy + s),
        ];
        let above = key.above_slit();
        let vertices = corners.map(|(ix, iy)| self.vertex_at(ix, iy, above));
        let id = self.cells.len();
        self.cells.push(Cell {
            id,
            vertices,
            level: key.level,
            parent,
            children: None,
            key,
        });
        id
    }

    fn face_for(ix: u32, iy: u32, above: bool) -> SlitFace {
        if iy == SLIT_Y && ix > SLIT_X0 {
            if above {
                SlitFace::Upper
            } else {
                SlitFace::Lower
            }
        } else {
            SlitFace::None
        }
    }

    fn vertex_at(&mut self, ix: u32, iy: u32, above: bool) -> VertexId {
        let face = Self::face_for(ix, iy, above);
        let key = VertexKey { ix, iy, face };
        if let Some(&id) = self.lookup.get(&key) {
            return id;
        }
        let id = self.vertices.len();
        let twin_face = match face {
            SlitFace::Upper => Some(SlitFace::Lower),
            SlitFace::Lower => Some(SlitFace::Upper),
            SlitFace::None => None,
        };
        let twin = twin_face.and_then(|f| self.lookup.get(&VertexKey { ix, iy, face: f }).copied());
        if let Some(t) = twin {
            self.vertices[t].slit_twin = Some(id);
        }
        self.vertices.push(Vertex {
            id,
            coords: [lattice_to_mm(ix), lattice_to_mm(iy)],
            slit_twin: twin,
            face,
            key,
        });
        self.lookup.insert(key, id);
        id
    }

    fn lookup_on_side(&self, ix: u32, iy: u32, above: bool) -> Option<VertexId> {
        let face = Self::face_for(ix, iy, above);
        self.lookup.get(&VertexKey { ix, iy, face }).copied()
    }

    fn split(&mut self, id: CellId) -> [CellId; 4] {
        let key = self.cells[id].key;
        let children = key.children().map(|k| self.push_cell(k, Some(id)));
        self.cells[id].children = Some(children);
        children
    }

    /// Lattice point at fraction `num/den` along local side `side` of a cell.
    fn side_point(key: CellKey, side: usize, num: u32, den: u32) -> (u32, u32) {
        let s = key.size();
        let t = s / den * num;
        match side {
            0 => (key.ix + t, key.iy),
            1 => (key.ix + s, key.iy + t),
            2 => (key.ix + s - t, key.iy + s),
            _ => (key.ix, key.iy + s - t),
        }
    }

    /// Whether a cell's edge carries vertices at quarter points, i.e. the
    /// neighbour across it is at least two levels finer.
    fn violates_balance(&self, id: CellId) -> bool {
        let key = self.cells[id].key;
        if key.size() < 4 {
            return false;
        }
        let above = key.above_slit();
        (0..4).any(|side| {
            [1, 3].iter().any(|&q| {
                let (ix, iy) = Self::side_point(key, side, q, 4);
                self.lookup_on_side(ix, iy, above).is_some()
            })
        })
    }

    /// Red-refine the marked cells, then refine further until neighbouring
    /// cells differ by at most one level (one hanging node per edge).
    pub fn refine(&self, marked: &BTreeSet<CellId>) -> Mesh {
        let mut mesh = self.clone();
        let mut queue: Vec<CellId> = marked
            .iter()
            .copied()
            .filter(|&c| c < mesh.cells.len() && mesh.cells[c].is_active())
            .collect();
        if queue.is_empty() {
            return mesh;
        }
        loop {
            for &c in &queue {
                if mesh.cells[c].is_active() && mesh.cells[c].level < MAX_LEVEL {
                    mesh.split(c);
                }
            }
            let active: Vec<CellId> = mesh
                .cells
                .iter()
                .filter(|c| c.is_active())
                .map(|c| c.id)
                .collect();
            queue = active
                .into_iter()
                .filter(|&c| mesh.cells[c].level < MAX_LEVEL && mesh.violates_balance(c))
                .collect();
            if queue.is_empty() {
                break;
            }
        }
        mesh.finalize();
        mesh
    }

    pub fn uniform_refine(&self, levels: u32) -> Mesh {
        let mut mesh = self.clone();
        for _ in 0..levels {
            let all: BTreeSet<CellId> = mesh.active.iter().copied().collect();
            mesh = mesh.refine(&all);
        }
        mesh
    }

    /// Active cell containing a lattice point, with the slit side resolving
    /// points on the slit line.
    fn locate_lattice(&self, ix: u32, iy: u32, side: SlitSide) -> CellId {
        let ci = (ix / COARSE_SIDE).min(COARSE_CELLS - 1);
        let mut cj = (iy / COARSE_SIDE).min(COARSE_CELLS - 1);
        if iy == SLIT_Y && side == SlitSide::Below {
            cj = SLIT_Y / COARSE_SIDE - 1;
        }
        let mut id = self.coarse[(cj * COARSE_CELLS + ci) as usize];
        while let Some(children) = self.cells[id].children {
            let key = self.cells[id].key;
            let half = key.size() / 2;
            let right = ix >= key.ix + half;
            let top = iy >= key.iy + half;
            id = children[match (right, top) {
                (false, false) => 0,
                (true, false) => 1,
                (true, true) => 2,
                (false, true) => 3,
            }];
        }
        id
    }

    /// Active cell containing `point` and the reference coordinates in `[0,1]²`.
    pub fn locate(&self, point: [f64; 2], side: SlitSide) -> Result<(CellId, [f64; 2]), MeshError> {
        let [x, y] = point;
        let tol = 1e-12 * DOMAIN_SIZE;
        if !(x >= -tol && x <= DOMAIN_SIZE + tol && y >= -tol && y <= DOMAIN_SIZE + tol) {
            return Err(MeshError::OutsideDomain(x, y));
        }
        let to_lattice =
            |v: f64| -> u32 { (v / MM_PER_UNIT).floor().clamp(0.0, LATTICE_MAX as f64) as u32 };
        let (ix, iy) = (to_lattice(x), to_lattice(y));
        let cell = self.locate_lattice(ix, iy, side);
        let ([x0, y0], h) = self.cell_geometry(cell);
        let xi = ((x - x0) / h).clamp(0.0, 1.0);
        let eta = ((y - y0) / h).clamp(0.0, 1.0);
        Ok((cell, [xi, eta]))
    }

    pub fn patch_of(&self, node: VertexId) -> Result<Patch, MeshError> {
        if node >= self.vertices.len() {
            return Err(MeshError::UnknownVertex(node));
        }
        if self.is_hanging(node) {
            return Err(MeshError::HangingNode(node));
        }
        let cells = self.node_cells[node].clone();
        let in_patch = |c: CellId| cells.contains(&c);
        let mut interior = BTreeSet::new();
        let mut boundary = BTreeSet::new();
        for &c in &cells {
            for &s in self.sides_of_cell(c) {
                let side = &self.sides[s];
                match side.second {
                    Some((other, _)) => {
                        let a = side.first.0;
                        if in_patch(a) && in_patch(other) {
                            interior.insert(s);
                        }
                    }
                    None => {
                        boundary.insert(s);
                    }
                }
            }
        }
        let mut corners = Vec::with_capacity(cells.len() * 4);
        for &c in &cells {
            let ([x0, y0], h) = self.cell_geometry(c);
            corners.extend([[x0, y0], [x0 + h, y0], [x0 + h, y0 + h], [x0, y0 + h]]);
        }
        let mut diameter: f64 = 0.0;
        for (i, a) in corners.iter().enumerate() {
            for b in &corners[i + 1..] {
                diameter = diameter.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        Ok(Patch {
            node,
            cells,
            interior_sides: interior.into_iter().collect(),
            boundary_sides: boundary.into_iter().collect(),
            diameter,
        })
    }

    fn boundary_marker(key: CellKey, side: usize) -> Option<BoundaryMarker> {
        let s = key.size();
        match side {
            0 if key.iy == 0 => Some(BoundaryMarker::Bottom),
            0 if key.iy == SLIT_Y && key.ix >= SLIT_X0 => Some(BoundaryMarker::SlitUpper),
            1 if key.ix + s == LATTICE_MAX => Some(BoundaryMarker::Right),
            2 if key.iy + s == LATTICE_MAX => Some(BoundaryMarker::Top),
            2 if key.iy + s == SLIT_Y && key.ix >= SLIT_X0 => Some(BoundaryMarker::SlitLower),
            3 if key.ix == 0 => Some(BoundaryMarker::Left),
            _ => None,
        }
    }

    fn finalize(&mut self) {
        self.active = self
            .cells
            .iter()
            .filter(|c| c.is_active())
            .map(|c| c.id)
            .collect();
        let nv = self.vertices.len();
        self.hanging = vec![None; nv];
        self.node_cells = vec![Vec::new(); nv];
        for &c in &self.active {
            for &v in &self.cells[c].vertices {
                self.node_cells[v].push(c);
            }
        }
        self.sides.clear();
        self.cell_sides.clear();
        let mut sides = Vec::new();
        for &c in &self.active {
            let key = self.cells[c].key;
            let above = key.above_slit();
            let verts = self.cells[c].vertices;
            for side in 0..4 {
                let (mx, my) = Self::side_point(key, side, 1, 2);
                if let Some(mid) = self.lookup_on_side(mx, my, above) {
                    // neighbour is finer; it owns the two sub-sides
                    let [a, b] = SIDE_CORNERS[side];
                    self.hanging[mid] = Some([verts[a], verts[b]]);
                    continue;
                }
                let [a, b] = SIDE_CORNERS[side];
                let endpoints = [verts[a], verts[b]];
                if let Some(marker) = Self::boundary_marker(key, side) {
                    sides.push(Side {
                        endpoints,
                        first: (c, side),
                        second: None,
                        marker,
                    });
                    continue;
                }
                // probe one lattice unit across the side midpoint
                let (px, py) = match side {
                    0 => (mx, my - 1),
                    1 => (mx + 1, my),
                    2 => (mx, my + 1),
                    _ => (mx - 1, my),
                };
                let probe_side = if py < SLIT_Y {
                    SlitSide::Below
                } else {
                    SlitSide::Above
                };
                let nb = self.locate_lattice(px, py, probe_side);
                let nb_level = self.cells[nb].level;
                if nb_level == key.level && nb < c {
                    continue;
                }
                sides.push(Side {
                    endpoints,
                    first: (c, side),
                    second: Some((nb, (side + 2) % 4)),
                    marker: BoundaryMarker::Interior,
                });
            }
        }
        for (id, s) in sides.iter().enumerate() {
            self.cell_sides.entry(s.first.0).or_default().push(id);
            if let Some((other, _)) = s.second {
                self.cell_sides.entry(other).or_default().push(id);
            }
        }
        self.sides = sides;
    }

    /// Plain-text dump: vertex records `v id x y twin` then active cells
    /// `c id v0 v1 v2 v3 level`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let twin = v
                .slit_twin
                .map(|t| t.to_string())
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "v {} {:.12} {:.12} {}",
                v.id, v.coords[0], v.coords[1], twin
            );
        }
        for &c in &self.active {
            let cell = &self.cells[c];
            let [a, b, d, e] = cell.vertices;
            let _ = writeln!(out, "c {} {} {} {} {} {}", c, a, b, d, e, cell.level);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse() -> Mesh {
        Mesh::coarse("shear").unwrap()
    }

    fn total_area(m: &Mesh) -> f64 {
        m.active_cells().iter().map(|&c| m.cell_area(c)).sum()
    }

    #[test]
    fn coarse_mesh_counts() {
        let m = coarse();
        assert_eq!(m.n_active(), 16);
        // 25 positions, (7.5,5) and the mouth (10,5) duplicated
        assert_eq!(m.vertices().len(), 27);
        let twins = m
            .vertices()
            .iter()
            .filter(|v| v.slit_twin.is_some())
            .count();
        assert_eq!(twins, 4);
        let tip = m
            .vertices()
            .iter()
            .find(|v| v.coords == [5.0, 5.0])
            .unwrap();
        assert!(tip.slit_twin.is_none());
        assert!((total_area(&m) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn unsupported_geometry() {
        assert!(matches!(
            Mesh::coarse("disk"),
            Err(MeshError::UnsupportedGeometry(_))
        ));
    }

    #[test]
    fn refine_nothing_is_identity() {
        let m = coarse();
        let r = m.refine(&BTreeSet::new());
        assert_eq!(r.n_active(), m.n_active());
        assert_eq!(r.vertices().len(), m.vertices().len());
    }

    #[test]
    fn single_refinement_needs_no_closure() {
        let m = coarse();
        let r = m.refine(&BTreeSet::from([5]));
        assert_eq!(r.n_active(), 16 - 1 + 4);
        let hanging = (0..r.vertices().len()).filter(|&v| r.is_hanging(v)).count();
        assert_eq!(hanging, 4);
    }

    #[test]
    fn closure_refines_coarse_neighbour() {
        let m = coarse();
        // cell 5 covers [2.5,5]x[2.5,5]; refine it, then its lower-left child
        let r1 = m.refine(&BTreeSet::from([5]));
        let child = r1.cell(5).children.unwrap()[0];
        let r2 = r1.refine(&BTreeSet::from([child]));
        // the grandchildren touch cells 1 and 4, which must now be refined
        assert!(!r2.cell(1).is_active());
        assert!(!r2.cell(4).is_active());
        for &c in r2.active_cells() {
            assert!(!r2.violates_balance(c));
        }
        assert!((total_area(&r2) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_refinement_counts() {
        let m = coarse();
        assert_eq!(m.uniform_refine(0).n_active(), 16);
        assert_eq!(m.uniform_refine(1).n_active(), 64);
        assert_eq!(m.uniform_refine(3).n_active(), 1024);
    }

    #[test]
    fn interior_patch() {
        let m = coarse().uniform_refine(1);
        let h = 1.25;
        let node = m
            .vertices()
            .iter()
            .find(|v| v.coords == [2.5, 2.5])
            .unwrap()
            .id;
        let p = m.patch_of(node).unwrap();
        assert_eq!(p.cells.len(), 4);
        assert_eq!(p.interior_sides.len(), 4);
        assert!(p.boundary_sides.is_empty());
        assert!((p.diameter - 2.0 * 2f64.sqrt() * h).abs() < 1e-12);
    }

    #[test]
    fn corner_patch() {
        let m = coarse();
        let p = m.patch_of(0).unwrap();
        assert_eq!(p.cells.len(), 1);
        assert!(p.interior_sides.is_empty());
        assert_eq!(p.boundary_sides.len(), 2);
    }

    #[test]
    fn slit_face_patches_are_separated() {
        let m = coarse().uniform_refine(1);
        for v in m.vertices().iter().filter(|v| v.face != SlitFace::None) {
            let p = m.patch_of(v.id).unwrap();
            for &c in &p.cells {
                let ([_, y0], h) = m.cell_geometry(c);
                match v.face {
                    SlitFace::Lower => assert!(y0 + h <= 5.0 + 1e-12),
                    SlitFace::Upper => assert!(y0 >= 5.0 - 1e-12),
                    SlitFace::None => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn hanging_node_has_no_patch() {
        let m = coarse().refine(&BTreeSet::from([5]));
        let v = (0..m.vertices().len()).find(|&v| m.is_hanging(v)).unwrap();
        assert_eq!(m.patch_of(v).unwrap_err(), MeshError::HangingNode(v));
    }

    #[test]
    fn locate_points() {
        let m = coarse().uniform_refine(2);
        let (c, r) = m.locate([0.0, 0.0], SlitSide::Above).unwrap();
        assert_eq!(m.cell_geometry(c).0, [0.0, 0.0]);
        assert_eq!(r, [0.0, 0.0]);
        for &c in m.active_cells() {
            let ([x0, y0], h) = m.cell_geometry(c);
            let (found, r) = m
                .locate([x0 + h / 2.0, y0 + h / 2.0], SlitSide::Above)
                .unwrap();
            assert_eq!(found, c);
            assert!((r[0] - 0.5).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);
        }
        let (c, _) = m.locate([7.5, 5.0], SlitSide::Below).unwrap();
        let ([_, y0], h) = m.cell_geometry(c);
        assert!(y0 + h <= 5.0);
        let (c, _) = m.locate([7.5, 5.0], SlitSide::Above).unwrap();
        assert!(m.cell_geometry(c).0[1] >= 5.0);
        assert!(m.locate([10.5, 1.0], SlitSide::Above).is_err());
    }

    #[test]
    fn boundary_side_markers() {
        let m = coarse();
        let count = |mk: BoundaryMarker| m.sides().iter().filter(|s| s.marker == mk).count();
        assert_eq!(count(BoundaryMarker::Bottom), 4);
        assert_eq!(count(BoundaryMarker::Top), 4);
        assert_eq!(count(BoundaryMarker::Left), 4);
        assert_eq!(count(BoundaryMarker::Right), 4);
        assert_eq!(count(BoundaryMarker::SlitLower), 2);
        assert_eq!(count(BoundaryMarker::SlitUpper), 2);
        // 4x4 grid: 24 interior edges minus the two slit edges
        assert_eq!(count(BoundaryMarker::Interior), 22);
    }

    #[test]
    fn rebuild_from_refined_keys() {
        let m = coarse().refine(&BTreeSet::from([5, 10]));
        let child = m.cell(10).children.unwrap()[2];
        let m = m.refine(&BTreeSet::from([child]));
        let rebuilt = Mesh::from_refined("shear", &m.refined_keys()).unwrap();
        assert_eq!(rebuilt.n_active(), m.n_active());
        assert_eq!(rebuilt.vertices().len(), m.vertices().len());
        assert_eq!(rebuilt.refined_keys(), m.refined_keys());
    }

    #[test]
    fn dump_lists_vertices_and_cells() {
        let m = coarse();
        let text = m.dump();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 27);
        assert_eq!(text.lines().filter(|l| l.starts_with("c ")).count(), 16);
    }
}
