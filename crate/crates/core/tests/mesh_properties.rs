use std::collections::BTreeSet;
use std::sync::Arc;

use phasefield_core::fespace::{shape, FeFunction, ScalarSpace};
use phasefield_core::mesh::{Mesh, SlitSide};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;
const OPS_PER_SEED: usize = 100;

fn random_mesh(seed: u64, ops: usize, mut check: impl FnMut(&Mesh)) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mesh = Mesh::coarse("shear").unwrap();
    for _ in 0..ops {
        let active = mesh.active_cells();
        let picks = rng.gen_range(1..=3);
        let marked: BTreeSet<usize> = (0..picks)
            .map(|_| active[rng.gen_range(0..active.len())])
            .filter(|&c| mesh.cell(c).level < 7)
            .collect();
        mesh = mesh.refine(&marked);
        check(&mesh);
    }
    mesh
}

fn random_point(rng: &mut ChaCha8Rng) -> ([f64; 2], SlitSide) {
    let p = [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)];
    let side = if p[1] >= 5.0 {
        SlitSide::Above
    } else {
        SlitSide::Below
    };
    (p, side)
}

/// Neighbour levels seen from just outside each edge quarter point.
fn assert_balanced(mesh: &Mesh) {
    for &c in mesh.active_cells() {
        let ([x0, y0], h) = mesh.cell_geometry(c);
        let level = mesh.cell(c).level;
        let d = 1e-9;
        let probes = [
            [x0 + 0.25 * h, y0 - d],
            [x0 + 0.75 * h, y0 - d],
            [x0 + 0.25 * h, y0 + h + d],
            [x0 + 0.75 * h, y0 + h + d],
            [x0 - d, y0 + 0.25 * h],
            [x0 - d, y0 + 0.75 * h],
            [x0 + h + d, y0 + 0.25 * h],
            [x0 + h + d, y0 + 0.75 * h],
        ];
        for p in probes {
            let outside = p.iter().any(|&z| !(0.0..=10.0).contains(&z));
            let across_slit = p[0] > 5.0 && (p[1] - 5.0).signum() != (y0 + 0.5 * h - 5.0).signum();
            if outside || across_slit {
                continue;
            }
            let side = if p[1] >= 5.0 {
                SlitSide::Above
            } else {
                SlitSide::Below
            };
            let (n, _) = mesh.locate(p, side).unwrap();
            let other = mesh.cell(n).level;
            assert!(
                level.abs_diff(other) <= 1,
                "cells {c} (level {level}) and {n} (level {other})"
            );
        }
    }
}

fn assert_hanging_parents_are_free(mesh: &Mesh) {
    for v in mesh.vertices() {
        if let Some([a, b]) = mesh.hanging_parents(v.id) {
            assert!(
                !mesh.is_hanging(a) && !mesh.is_hanging(b),
                "vertex {} hangs on a hanging node",
                v.id
            );
            let mid = [
                0.5 * (mesh.vertex(a).coords[0] + mesh.vertex(b).coords[0]),
                0.5 * (mesh.vertex(a).coords[1] + mesh.vertex(b).coords[1]),
            ];
            assert!((mid[0] - v.coords[0]).abs() < 1e-12 && (mid[1] - v.coords[1]).abs() < 1e-12);
        }
    }
}

#[test]
fn one_hanging_node_per_edge_after_random_refinement() {
    let mut total_ops = 0;
    for seed in 0..SEEDS {
        let mesh = random_mesh(seed, OPS_PER_SEED, |m| {
            total_ops += 1;
            assert_hanging_parents_are_free(m);
        });
        assert_balanced(&mesh);
        let area: f64 = mesh.active_cells().iter().map(|&c| mesh.cell_area(c)).sum();
        assert!((area - 100.0).abs() < 1e-10);
    }
    assert_eq!(total_ops, 1000);
}

#[test]
fn side_neighbours_differ_by_at_most_one_level() {
    for seed in 0..SEEDS {
        let mesh = random_mesh(100 + seed, 30, |_| {});
        for s in mesh.sides() {
            if let Some((other, _)) = s.second {
                let a = mesh.cell(s.first.0).level;
                let b = mesh.cell(other).level;
                assert!(a.abs_diff(b) <= 1);
            }
        }
    }
}

#[test]
fn linear_functions_are_reproduced() {
    for seed in 0..SEEDS {
        let mesh = random_mesh(200 + seed, 40, |_| {});
        let space = ScalarSpace::new(Arc::new(mesh));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let lin = move |p: [f64; 2]| a + b * p[0] + c * p[1];
        let f = FeFunction::from_fn(&space, lin);
        for _ in 0..100 {
            let (p, side) = random_point(&mut rng);
            let got = f.eval_at(p, side);
            assert!((got - lin(p)).abs() <= 1e-12, "{p:?}: {got} vs {}", lin(p));
        }
        for &cell in space.mesh().active_cells() {
            let g = f.grad(cell, [0.3, 0.6]);
            assert!((g[0] - b).abs() < 1e-11 && (g[1] - c).abs() < 1e-11);
        }
    }
}

#[test]
fn constrained_basis_is_a_partition_of_unity() {
    for seed in 0..SEEDS {
        let mesh = random_mesh(300 + seed, 40, |_| {});
        let space = ScalarSpace::new(Arc::new(mesh));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let (p, side) = random_point(&mut rng);
            let (cell, r) = space.mesh().locate(p, side).unwrap();
            let n = shape(r);
            let mut total = 0.0;
            for (k, &v) in space.mesh().cell(cell).vertices.iter().enumerate() {
                for &(_, w) in space.expansion(v) {
                    total += n[k] * w;
                }
            }
            assert!((total - 1.0).abs() <= 1e-12, "{p:?}: {total}");
        }
        let masses: f64 = space.hat_masses().iter().sum();
        assert!((masses - 100.0).abs() < 1e-9);
    }
}

#[test]
fn recipes_rebuild_identical_meshes() {
    let mesh = random_mesh(7, 50, |_| {});
    let again = Mesh::from_refined("shear", &mesh.refined_keys()).unwrap();
    assert_eq!(mesh.n_active(), again.n_active());
    assert_eq!(mesh.vertices().len(), again.vertices().len());
    let keys = |m: &Mesh| {
        m.active_cells()
            .iter()
            .map(|&c| m.cell(c).key())
            .collect::<BTreeSet<_>>()
    };
    assert_eq!(keys(&mesh), keys(&again));
    let again_twice = Mesh::from_refined("shear", &again.refined_keys()).unwrap();
    assert_eq!(again.dump(), again_twice.dump());
}
