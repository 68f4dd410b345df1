//! Residual-based semi-smooth Newton with backtracking, and the sparse direct solve.

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::Mat;
use log::debug;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub rho: f64,
    pub l_max: u32,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iters: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            rho: 0.5,
            l_max: 30,
            tol_abs: 1e-8,
            tol_rel: 1e-10,
            max_iters: 50,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(format!("newton rho = {} outside (0,1)", self.rho));
        }
        if !(self.tol_abs > 0.0 && self.tol_rel > 0.0) {
            return Err("newton tolerances must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NewtonError {
    #[error("line search failed in iteration {iteration} at residual {residual:e}")]
    LineSearch { iteration: usize, residual: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIters { iterations: usize, residual: f64 },
    #[error("singular linear system: {0}")]
    Singular(String),
}

/// Compressed sparse column matrix with `usize` indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Duplicates are summed in input order, so equal input gives equal bits.
    pub fn from_triplets(n: usize, triplets: Vec<(usize, usize, f64)>) -> Self {
        // bucket by column (stable), then sort each column by row (stable)
        let mut count = vec![0usize; n + 1];
        for &(r, c, _) in &triplets {
            assert!(r < n && c < n, "triplet ({r},{c}) outside {n}×{n}");
            count[c + 1] += 1;
        }
        for c in 0..n {
            count[c + 1] += count[c];
        }
        let mut next = count.clone();
        let mut bucket = vec![(0usize, 0.0f64); triplets.len()];
        for (r, c, v) in triplets {
            bucket[next[c]] = (r, v);
            next[c] += 1;
        }
        let mut col_ptr = vec![0; n + 1];
        let mut row_idx = Vec::with_capacity(bucket.len() / 2);
        let mut values: Vec<f64> = Vec::with_capacity(bucket.len() / 2);
        for c in 0..n {
            let col = &mut bucket[count[c]..count[c + 1]];
            col.sort_by_key(|&(r, _)| r);
            let start = row_idx.len();
            for &(r, v) in col.iter() {
                if row_idx.len() > start && *row_idx.last().unwrap() == r {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr[c + 1] = row_idx.len();
        }
        SparseMatrix {
            n,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        match self.row_idx[range.clone()].binary_search(&r) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * x[c];
            }
        }
        y
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        let mut rows = vec![0.0; self.n];
        for (k, &r) in self.row_idx.iter().enumerate() {
            rows[r] += self.values[k].abs();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                d[self.row_idx[k]][c] = self.values[k];
            }
        }
        d
    }

    fn same_pattern(&self, other: &SparseMatrix) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Sparse LU solver that keeps the symbolic factorization of the last pattern.
pub struct LinearSolver {
    cached: Option<(SparseMatrix, SymbolicLu<usize>)>,
}

impl Default for LinearSolver {
    fn default() -> Self {
        Self::new()
    }
}

impl LinearSolver {
    /// Factorizations run sequentially so repeated runs agree bit for bit.
    pub fn new() -> Self {
        faer::set_global_parallelism(faer::Par::Seq);
        LinearSolver { cached: None }
    }

    pub fn solve(&mut self, m: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, NewtonError> {
        let n = m.n;
        assert_eq!(b.len(), n);
        if n == 0 {
            return Ok(Vec::new());
        }
        let symbolic = SymbolicSparseColMatRef::new_checked(n, n, &m.col_ptr, None, &m.row_idx);
        let reuse = matches!(&self.cached, Some((p, _)) if p.same_pattern(m));
        if !reuse {
            let sym = SymbolicLu::try_new(symbolic)
                .map_err(|e| NewtonError::Singular(format!("{e:?}")))?;
            let pattern = SparseMatrix {
                n,
                col_ptr: m.col_ptr.clone(),
                row_idx: m.row_idx.clone(),
                values: Vec::new(),
            };
            self.cached = Some((pattern, sym));
        }
        let sym = self.cached.as_ref().unwrap().1.clone();
        let mat = SparseColMatRef::new(symbolic, &m.values);
        let lu = Lu::try_new_with_symbolic(sym, mat)
            .map_err(|e| NewtonError::Singular(format!("{e:?}")))?;

        let apply = |rhs: &[f64]| {
            let mut col = Mat::from_fn(n, 1, |i, _| rhs[i]);
            lu.solve_in_place(&mut col);
            (0..n).map(|i| col[(i, 0)]).collect::<Vec<f64>>()
        };
        let mut x = apply(b);
        let m_norm = m.inf_norm();
        let b_norm = inf_norm(b);
        for _ in 0..4 {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(NewtonError::Singular("non-finite solution".into()));
            }
            let mx = m.matvec(&x);
            let r: Vec<f64> = b.iter().zip(&mx).map(|(b, y)| b - y).collect();
            if inf_norm(&r) <= 1e-10 * (m_norm * inf_norm(&x) + b_norm) {
                return Ok(x);
            }
            let dx = apply(&r);
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        Err(NewtonError::Singular(
            "residual check failed after refinement".into(),
        ))
    }
}

/// A square nonlinear system `A(x) = 0` with a (generalized) Jacobian.
pub trait NonlinearSystem {
    fn residual(&self, x: &[f64]) -> Vec<f64>;
    fn jacobian(&self, x: &[f64]) -> SparseMatrix;
    fn active_set_size(&self, _x: &[f64]) -> usize {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub residual: f64,
    pub step: f64,
    pub active: usize,
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub residual: f64,
    pub log: Vec<IterationLog>,
}

impl NewtonOutcome {
    pub fn iterations(&self) -> usize {
        self.log.len()
    }
}

pub fn solve<S: NonlinearSystem + ?Sized>(
    system: &S,
    x0: Vec<f64>,
    cfg: &NewtonConfig,
    linear: &mut LinearSolver,
) -> Result<NewtonOutcome, NewtonError> {
    let mut x = x0;
    let mut r = system.residual(&x);
    let mut norm = inf_norm(&r);
    let tol = cfg.tol_abs.max(cfg.tol_rel * norm);
    let mut log = Vec::new();
    let mut iteration = 0;
    while norm > tol {
        if iteration == cfg.max_iters {
            return Err(NewtonError::MaxIters {
                iterations: iteration,
                residual: norm,
            });
        }
        iteration += 1;
        let jac = system.jacobian(&x);
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = linear.solve(&jac, &rhs)?;
        let mut accepted = None;
        let mut s = 1.0;
        for _ in 0..=cfg.l_max {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(x, d)| x + s * d).collect();
            let r_trial = system.residual(&trial);
            let n_trial = inf_norm(&r_trial);
            if n_trial < norm {
                accepted = Some((trial, r_trial, n_trial));
                break;
            }
            s *= cfg.rho;
        }
        let Some((xn, rn, nn)) = accepted else {
            return Err(NewtonError::LineSearch {
                iteration,
                residual: norm,
            });
        };
        x = xn;
        r = rn;
        norm = nn;
        let entry = IterationLog {
            iteration,
            residual: norm,
            step: s,
            active: system.active_set_size(&x),
        };
        debug!(
            "newton {} |A|={:.3e} s={} active={}",
            entry.iteration, entry.residual, entry.step, entry.active
        );
        log.push(entry);
    }
    Ok(NewtonOutcome {
        x,
        residual: norm,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triplets_sum_duplicates() {
        let m = SparseMatrix::from_triplets(
            2,
            vec![(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0), (1, 1, 0.0)],
        );
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.matvec(&[1.0, 1.0]), vec![4.0, 2.0]);
    }

    #[test]
    fn identity_and_small_solves() {
        let mut ls = LinearSolver::new();
        let b = vec![1.0, -2.0, 3.5];
        assert_eq!(ls.solve(&SparseMatrix::identity(3), &b).unwrap(), b);
        let m = SparseMatrix::from_triplets(
            2,
            vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)],
        );
        let x = ls.solve(&m, &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn random_spd_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50;
        let g: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut trip = Vec::new();
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut v: f64 = (0..n).map(|k| g[i][k] * g[j][k]).sum();
                if i == j {
                    v += n as f64;
                }
                dense[i][j] = v;
                trip.push((i, j, v));
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = LinearSolver::new()
            .solve(&SparseMatrix::from_triplets(n, trip), &b)
            .unwrap();
        let oracle = dense_solve(dense, b);
        for (a, o) in x.iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = SparseMatrix::from_triplets(
            2,
            vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)],
        );
        assert!(matches!(
            LinearSolver::new().solve(&m, &[1.0, 2.0]),
            Err(NewtonError::Singular(_))
        ));
    }

    struct Scalar<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(F, G);

    impl<F: Fn(f64) -> f64, G: Fn(f64) -> f64> NonlinearSystem for Scalar<F, G> {
        fn residual(&self, x: &[f64]) -> Vec<f64> {
            vec![(self.0)(x[0])]
        }
        fn jacobian(&self, x: &[f64]) -> SparseMatrix {
            SparseMatrix::from_triplets(1, vec![(0, 0, (self.1)(x[0]))])
        }
    }

    #[test]
    fn one_dof_complementarity() {
        // x - max(0, x + c(1 - x)) with c = 1 is x - 1 for every x
        let c = 1.0;
        let sys = Scalar(
            |x: f64| x - (x + c * (1.0 - x)).max(0.0),
            |x: f64| {
                if x + c * (1.0 - x) > 0.0 {
                    1.0 - (1.0 - c)
                } else {
                    1.0
                }
            },
        );
        let out = solve(
            &sys,
            vec![0.0],
            &NewtonConfig::default(),
            &mut LinearSolver::new(),
        )
        .unwrap();
        assert!(out.iterations() <= 2);
        assert!((out.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_start_and_linear_problem() {
        let sys = Scalar(|x: f64| 3.0 * x - 6.0, |_| 3.0);
        let mut ls = LinearSolver::new();
        let out = solve(&sys, vec![2.0], &NewtonConfig::default(), &mut ls).unwrap();
        assert_eq!(out.iterations(), 0);
        let out = solve(&sys, vec![-5.0], &NewtonConfig::default(), &mut ls).unwrap();
        assert_eq!(out.iterations(), 1);
        assert_eq!(out.log[0].step, 1.0);
    }

    #[test]
    fn backtracking_is_monotone() {
        let sys = Scalar(|x: f64| x.atan(), |x: f64| 1.0 / (1.0 + x * x));
        let out = solve(
            &sys,
            vec![3.0],
            &NewtonConfig::default(),
            &mut LinearSolver::new(),
        )
        .unwrap();
        assert!(out.log.iter().any(|l| l.step < 1.0));
        let mut prev = 3f64.atan();
        for l in &out.log {
            assert!(l.residual < prev);
            prev = l.residual;
        }
    }

    #[test]
    fn failures() {
        let sys = Scalar(|x: f64| x * x + 1.0, |x: f64| 2.0 * x);
        let err = solve(
            &sys,
            vec![1.0],
            &NewtonConfig::default(),
            &mut LinearSolver::new(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            NewtonError::LineSearch { .. } | NewtonError::Singular(_)
        ));
        let cfg = NewtonConfig {
            max_iters: 1,
            ..NewtonConfig::default()
        };
        let slow = Scalar(|x: f64| x.atan(), |x: f64| 1.0 / (1.0 + x * x));
        let err = solve(&slow, vec![3.0], &cfg, &mut LinearSolver::new()).unwrap_err();
        assert!(matches!(err, NewtonError::MaxIters { iterations: 1, .. }));
    }
}
