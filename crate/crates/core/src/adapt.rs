//! Space-time adaptive loop: one mesh per loading step over the whole horizon,
//! re-solved after every refinement sweep.

use std::collections::BTreeSet;
use std::sync::Arc;

use log::info;

use crate::estimator::{EstimatorConfig, EstimatorInput, EstimatorReport};
use crate::fespace::{dirichlet_dofs, FeFunction, QuadratureRule, ScalarSpace};
use crate::mesh::{CellKey, Mesh, MeshError};
use crate::newton::{self, LinearSolver, NewtonError, NewtonOutcome};
use crate::qoi::{self, QoiRecord};
use crate::scenarios::ScenarioConfig;
use crate::system::{obstacle_from_previous, Obstacle, StepProblem, TimeStepState};

#[derive(Debug, thiserror::Error)]
pub enum AdaptError {
    #[error("cycle {cycle}, step {step} (t = {t}): {source}")]
    Newton {
        cycle: usize,
        step: usize,
        t: f64,
        #[source]
        source: NewtonError,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// What is kept of a solved step once the cycle moves on.
#[derive(Debug, Clone)]
pub struct StepSummary {
    pub step: usize,
    pub t: f64,
    pub dofs: usize,
    pub cells: usize,
    pub eta_k: [f64; 4],
    pub eta: f64,
    pub newton_iters: usize,
    pub qoi: QoiRecord,
    /// Aligned with the active cells of the step's mesh.
    pub indicators: Vec<f64>,
    /// Phase-field coefficients on the step's mesh.
    pub phi: Vec<f64>,
}

/// Per-cycle summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleSummary {
    pub cycle: usize,
    /// Step with the largest DoF count.
    pub step: usize,
    pub t: f64,
    pub dofs: usize,
    pub cells: usize,
    /// Root-sum-square over steps.
    pub eta_k: [f64; 4],
    pub eta: f64,
    pub newton_iters: usize,
}

/// Everything the observer sees of a freshly solved step.
pub struct StepView<'a> {
    pub cycle: usize,
    pub step: usize,
    pub state: &'a TimeStepState,
    pub obstacle: &'a Obstacle,
    pub report: &'a EstimatorReport,
    pub qoi: &'a QoiRecord,
    pub newton: &'a NewtonOutcome,
}

pub struct Horizon {
    geometry: &'static str,
    pub times: Vec<f64>,
    /// Refined-cell sets, one per time index `0..=N`; equal neighbours share the `Arc`.
    pub recipes: Vec<Arc<BTreeSet<CellKey>>>,
    /// Results of the last cycle for steps `1..=N`.
    pub steps: Vec<StepSummary>,
}

impl Horizon {
    /// Every step starts on the pre-refined coarse mesh.
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, AdaptError> {
        Self::with_levels(cfg, cfg.pre_refinements)
    }

    pub fn with_levels(cfg: &ScenarioConfig, levels: u32) -> Result<Self, AdaptError> {
        let geometry = cfg.scenario.name();
        let recipe = Arc::new(
            Mesh::coarse(geometry)?
                .uniform_refine(levels)
                .refined_keys(),
        );
        let times = cfg.times();
        let recipes = vec![recipe; times.len()];
        Ok(Horizon {
            geometry,
            times,
            recipes,
            steps: Vec::new(),
        })
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn mesh(&self, n: usize) -> Mesh {
        Mesh::from_refined(self.geometry, &self.recipes[n])
            .expect("geometry validated at construction")
    }

    pub fn max_dofs(&self) -> usize {
        self.steps.iter().map(|s| s.dofs).max().unwrap_or(0)
    }

    /// `Σ_n (η^n)²` of the last cycle.
    pub fn eta_squared_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.eta * s.eta).sum()
    }
}

/// Dörfler marking: the shortest prefix of cells sorted by descending indicator
/// (ties by index) whose sum reaches `theta` of the total.
pub fn mark(indicators: &[f64], theta: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&a, &b| indicators[b].total_cmp(&indicators[a]).then(a.cmp(&b)));
    let total: f64 = order.iter().map(|&i| indicators[i]).sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let target = theta * total;
    let mut sum = 0.0;
    let mut marked = Vec::new();
    for i in order {
        if sum >= target || indicators[i] <= 0.0 {
            break;
        }
        sum += indicators[i];
        marked.push(i);
    }
    marked.sort_unstable();
    marked
}

/// Refine every step mesh by its own marking; the stored results are dropped.
pub fn adapt_step(h: &mut Horizon, theta: f64) {
    let mut prev: Option<Arc<BTreeSet<CellKey>>> = None;
    for n in 1..=h.n_steps() {
        let indicators = &h.steps[n - 1].indicators;
        let marked = mark(indicators, theta);
        if !marked.is_empty() {
            let mesh = h.mesh(n);
            let cells: BTreeSet<_> = marked.iter().map(|&i| mesh.active_cells()[i]).collect();
            h.recipes[n] = Arc::new(mesh.refine(&cells).refined_keys());
        }
        if let Some(p) = &prev {
            if **p == *h.recipes[n] {
                h.recipes[n] = p.clone();
            }
        }
        prev = Some(h.recipes[n].clone());
    }
    h.steps.clear();
}

/// Solve steps `1..=N` on the current meshes.
pub fn run_cycle(
    h: &mut Horizon,
    cfg: &ScenarioConfig,
    cycle: usize,
    observer: &mut dyn FnMut(&StepView),
) -> Result<CycleSummary, AdaptError> {
    let params = cfg.material();
    let c = cfg.complementarity_c();
    let est_cfg = EstimatorConfig {
        strip: cfg.strip(),
        eta3_full_gradient: cfg.eta3_full_gradient,
        ..EstimatorConfig::default()
    };
    let mut current: Option<(Arc<BTreeSet<CellKey>>, Arc<ScalarSpace>)> = None;
    let mut space_for = |recipe: &Arc<BTreeSet<CellKey>>, geometry: &str| -> Arc<ScalarSpace> {
        if let Some((r, s)) = &current {
            if Arc::ptr_eq(r, recipe) {
                return s.clone();
            }
        }
        let mesh =
            Mesh::from_refined(geometry, recipe).expect("geometry validated at construction");
        let s = ScalarSpace::new(Arc::new(mesh));
        current = Some((recipe.clone(), s.clone()));
        s
    };

    let space0 = space_for(&h.recipes[0], h.geometry);
    let mut prev = TimeStepState::undamaged(&space0, h.times[0]);
    let mut linear = LinearSolver::new();
    let mut steps = Vec::with_capacity(h.n_steps());
    for n in 1..=h.n_steps() {
        let t = h.times[n];
        let space = space_for(&h.recipes[n], h.geometry);
        let same_space = Arc::ptr_eq(&space, &prev.space);
        let obstacle = obstacle_from_previous(&prev.phase_field(), &space);
        let bc = dirichlet_dofs(&space, cfg, t);
        let problem = StepProblem::new(&space, params, c, &obstacle, &obstacle.values, &bc, None)
            .expect("fields built on the step space");
        let guess = TimeStepState {
            space: space.clone(),
            t,
            u: prev.displacement().interpolate_to(&space).coeffs,
            phi: obstacle.values.clone(),
            lambda: if same_space {
                prev.lambda.clone()
            } else {
                vec![0.0; space.n_dofs()]
            },
        };
        let mut x0 = guess.pack();
        problem.impose_dirichlet(&mut x0);
        let outcome = newton::solve(&problem, x0, &cfg.newton, &mut linear).map_err(|source| {
            AdaptError::Newton {
                cycle,
                step: n,
                t,
                source,
            }
        })?;
        let state = TimeStepState::unpack(&space, t, &outcome.x);
        let input = EstimatorInput {
            state: &state,
            obstacle: &obstacle,
            params,
            source: None,
        };
        let report = input.estimate(&est_cfg);
        let record = qoi::record(&state, &params, cycle, n, report.eta);
        info!(
            "cycle {cycle} step {n}/{} t={t:.6} dofs={} newton={} eta={:.4e} Fx={:.4e} Fy={:.4e}",
            h.n_steps(),
            state.n_unknowns(),
            outcome.iterations(),
            report.eta,
            record.fx,
            record.fy
        );
        observer(&StepView {
            cycle,
            step: n,
            state: &state,
            obstacle: &obstacle,
            report: &report,
            qoi: &record,
            newton: &outcome,
        });
        steps.push(StepSummary {
            step: n,
            t,
            dofs: state.n_unknowns(),
            cells: space.mesh().n_active(),
            eta_k: report.eta_k,
            eta: report.eta,
            newton_iters: outcome.iterations(),
            qoi: record,
            indicators: report.indicators,
            phi: state.phi.clone(),
        });
        prev = state;
    }
    h.steps = steps;
    Ok(summarize(h, cycle))
}

fn summarize(h: &Horizon, cycle: usize) -> CycleSummary {
    let biggest = h
        .steps
        .iter()
        .max_by(|a, b| a.dofs.cmp(&b.dofs).then(b.step.cmp(&a.step)))
        .expect("at least one step");
    let mut eta_k = [0.0; 4];
    for s in &h.steps {
        for k in 0..4 {
            eta_k[k] += s.eta_k[k] * s.eta_k[k];
        }
    }
    CycleSummary {
        cycle,
        step: biggest.step,
        t: biggest.t,
        dofs: biggest.dofs,
        cells: biggest.cells,
        eta_k: eta_k.map(f64::sqrt),
        eta: h.eta_squared_sum().sqrt(),
        newton_iters: h.steps.iter().map(|s| s.newton_iters).sum(),
    }
}

/// Leaves of the common refinement of two refined-cell sets.
fn common_leaves(a: &BTreeSet<CellKey>, b: &BTreeSet<CellKey>) -> Vec<CellKey> {
    let mut stack = CellKey::coarse_keys();
    let mut leaves = Vec::new();
    while let Some(k) = stack.pop() {
        if a.contains(&k) || b.contains(&k) {
            stack.extend(k.children());
        } else {
            leaves.push(k);
        }
    }
    leaves
}

/// `‖I_h^n φ^{n-1} − φ^{n-1}‖_{L²}` evaluated on the common refinement.
pub fn transfer_error(h: &Horizon, n: usize) -> f64 {
    assert!(n >= 1 && n <= h.n_steps());
    if Arc::ptr_eq(&h.recipes[n - 1], &h.recipes[n]) || n == 1 {
        // same mesh, or φ⁰ ≡ 1 which every mesh represents exactly
        return 0.0;
    }
    let prev_space = ScalarSpace::new(Arc::new(h.mesh(n - 1)));
    let next_space = ScalarSpace::new(Arc::new(h.mesh(n)));
    let prev = FeFunction {
        space: prev_space,
        coeffs: h.steps[n - 2].phi.clone(),
    };
    let moved = prev.interpolate_to(&next_space);
    let quad = QuadratureRule::gauss2();
    let mut total = 0.0;
    for key in common_leaves(&h.recipes[n - 1], &h.recipes[n]) {
        let ([x0, y0], side) = key.geometry();
        for (r, w) in quad.points.iter().zip(&quad.weights) {
            let p = [x0 + r[0] * side, y0 + r[1] * side];
            let d = moved.eval_at(p, key.side()) - prev.eval_at(p, key.side());
            total += w * side * side * d * d;
        }
    }
    total.sqrt()
}

/// True when both the accumulated estimate and the transfer terms are small.
pub fn stopping(h: &Horizon, tol_eta: f64, tol_transfer: f64) -> bool {
    if h.eta_squared_sum() > tol_eta * tol_eta {
        return false;
    }
    (1..=h.n_steps()).all(|n| transfer_error(h, n) <= tol_transfer)
}

/// Adaptive study: up to `cfg.cycles` solve sweeps with refinement in between.
pub fn run_adaptive(
    cfg: &ScenarioConfig,
    observer: &mut dyn FnMut(&StepView),
) -> Result<(Horizon, Vec<CycleSummary>), AdaptError> {
    let mut h = Horizon::new(cfg)?;
    let mut summaries = Vec::new();
    for cycle in 1..=cfg.cycles as usize {
        if cycle > 1 {
            if let (Some(te), Some(tt)) = (cfg.tol_eta, cfg.tol_transfer) {
                if stopping(&h, te, tt) {
                    info!("stopping criterion met after cycle {}", cycle - 1);
                    break;
                }
            }
            adapt_step(&mut h, cfg.theta);
        }
        summaries.push(run_cycle(&mut h, cfg, cycle, observer)?);
    }
    Ok((h, summaries))
}

/// Single sweep on `levels` uniform refinements of the coarse mesh.
pub fn run_uniform(
    cfg: &ScenarioConfig,
    levels: u32,
    observer: &mut dyn FnMut(&StepView),
) -> Result<(Horizon, CycleSummary), AdaptError> {
    let mut h = Horizon::with_levels(cfg, levels)?;
    let summary = run_cycle(&mut h, cfg, 1, observer)?;
    Ok((h, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk(t_end: f64) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::preset("shear").unwrap();
        cfg.set_pre_refinements(1);
        cfg.t_end = t_end;
        cfg
    }

    #[test]
    fn marking_examples() {
        assert_eq!(mark(&[0.0, 5.0, 0.0], 0.3), vec![1]);
        assert_eq!(mark(&[0.0, 5.0, 0.0], 1.0), vec![1]);
        assert_eq!(mark(&[1.0; 4], 0.5), vec![0, 1]);
        assert_eq!(mark(&[1.0, 0.0, 2.0, 3.0], 1.0), vec![0, 2, 3]);
        assert!(mark(&[], 0.5).is_empty());
        assert!(mark(&[0.0, 0.0], 0.5).is_empty());
    }

    #[test]
    fn marking_is_minimal() {
        let ind = [0.3, 0.1, 0.25, 0.05, 0.2, 0.1];
        let total: f64 = ind.iter().sum();
        for theta in [0.1, 0.4, 0.55, 0.8, 0.95] {
            let m = mark(&ind, theta);
            let sum: f64 = m.iter().map(|&i| ind[i]).sum();
            assert!(sum >= theta * total * (1.0 - 1e-12));
            let least = *m
                .iter()
                .min_by(|&&a, &&b| ind[a].total_cmp(&ind[b]))
                .unwrap();
            assert!(sum - ind[least] < theta * total);
        }
    }

    #[test]
    fn unloaded_step_stays_intact() {
        let cfg = desk(1e-4);
        let mut h = Horizon::new(&cfg).unwrap();
        // a single step at t = 0: no boundary load
        h.times = vec![0.0, 0.0];
        h.recipes.truncate(2);
        let mut seen = 0;
        let mut observer = |v: &StepView| {
            seen += 1;
            assert!(v.state.phi.iter().all(|&p| p == 1.0));
            assert!(v.report.nodes.iter().all(|n| n.s == 0.0));
            assert_eq!(v.report.eta, 0.0);
        };
        let summary = run_cycle(&mut h, &cfg, 1, &mut observer).unwrap();
        assert_eq!(seen, 1);
        assert_eq!(summary.eta, 0.0);
        assert!(stopping(&h, 0.0, 0.0));
    }

    #[test]
    fn uniform_indicators_with_theta_one_refine_everything() {
        let cfg = desk(2e-4);
        let mut h = Horizon::new(&cfg).unwrap();
        let cells = h.mesh(1).n_active();
        h.steps = (1..=h.n_steps())
            .map(|n| StepSummary {
                step: n,
                t: h.times[n],
                dofs: 0,
                cells,
                eta_k: [0.0; 4],
                eta: 0.0,
                newton_iters: 0,
                qoi: QoiRecord {
                    cycle: 1,
                    step: n,
                    t: 0.0,
                    displacement: 0.0,
                    fx: 0.0,
                    fy: 0.0,
                    fx_deg: 0.0,
                    fy_deg: 0.0,
                    eb: 0.0,
                    ec: 0.0,
                    dofs: 0,
                    eta: 0.0,
                },
                indicators: vec![1.0; cells],
                phi: Vec::new(),
            })
            .collect();
        adapt_step(&mut h, 1.0);
        assert_eq!(h.mesh(1).n_active(), 4 * cells);
        assert!(Arc::ptr_eq(&h.recipes[1], &h.recipes[2]));
        assert_eq!(h.mesh(0).n_active(), cells);
    }

    #[test]
    fn common_refinement_of_nested_sets() {
        let m = Mesh::coarse("shear").unwrap().uniform_refine(1);
        let a = m.refined_keys();
        let b = m.refine(&BTreeSet::from([20])).refined_keys();
        let leaves = common_leaves(&a, &b);
        assert_eq!(leaves.len(), 64 + 3);
        let area: f64 = leaves.iter().map(|k| k.geometry().1.powi(2)).sum();
        assert!((area - 100.0).abs() < 1e-12);
    }
}
