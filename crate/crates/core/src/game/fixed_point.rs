//! Per-step resolution of the coupled queue/price system.
//!
//! At a given workload `w` the queue split is a function of the prices and
//! the prices are the inverse map of the queue split. The pair is resolved
//! by fixed-point iteration seeded from the previous step's price; on
//! non-convergence the lagged price is kept and the queue split is solved
//! once at it.

use super::closed_form::{ThreeUserPool, TwoUserPool};
use super::{EquilibriumResult, PriceMap};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FixedPointSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

/// Closed-form queue solver of one bundled pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueueSolver {
    TwoUser(TwoUserPool),
    ThreeUser(ThreeUserPool),
}

impl QueueSolver {
    pub fn num_users(&self) -> usize {
        match self {
            QueueSolver::TwoUser(_) => 2,
            QueueSolver::ThreeUser(_) => 3,
        }
    }

    pub fn mu(&self) -> &[f64] {
        match self {
            QueueSolver::TwoUser(p) => &p.mu,
            QueueSolver::ThreeUser(p) => &p.mu,
        }
    }

    pub fn rate_constants(&self) -> &[f64] {
        match self {
            QueueSolver::TwoUser(p) => &p.rate,
            QueueSolver::ThreeUser(p) => &p.rate,
        }
    }

    /// Queue split at prices `p` and workload `w`. `forced` overrides the
    /// three-user selection stage (ignored by the two-user pool).
    pub fn solve(
        &self,
        p: &[f64],
        w: f64,
        forced: Option<(usize, usize)>,
    ) -> Result<EquilibriumResult> {
        match self {
            QueueSolver::TwoUser(pool) => {
                let q = pool.solve_queue_split([p[0], p[1]], w)?;
                let raw = pool.raw_prices(q[0], w);
                let cost = pool.pair_cost([p[0], p[1]], q)?;
                Ok(EquilibriumResult {
                    selected: vec![0, 1],
                    q_star: q.to_vec(),
                    p_star: raw.to_vec(),
                    c_star: pool.rate.to_vec(),
                    total_cost: cost,
                    per_pair_costs: vec![(vec![0, 1], cost)],
                })
            }
            QueueSolver::ThreeUser(pool) => {
                pool.solve_selected([p[0], p[1], p[2]], w, forced)
            }
        }
    }
}

/// Converged per-step state of the workload-to-(queue, price) mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub selected: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Resolves `(q, p)` at workload `w` from the previous price, clamping every
/// price iterate into the map's bounds.
pub fn resolve_workload_state(
    solver: &QueueSolver,
    map: &PriceMap,
    w: f64,
    prev_price: &[f64],
    forced: Option<(usize, usize)>,
    settings: &FixedPointSettings,
) -> Result<ResolvedState> {
    let mut p = map.clamp(prev_price);
    for iteration in 1..=settings.max_iterations {
        let res = solver.solve(&p, w, forced)?;
        let next = map.clamp(&res.p_star);
        if max_abs_diff(&next, &p) <= settings.tolerance {
            return Ok(ResolvedState {
                q: res.q_star,
                p: next,
                selected: res.selected,
                converged: true,
                iterations: iteration,
            });
        }
        p = next;
    }
    // Lagged fallback: keep the previous price and solve the queues at it.
    let p = map.clamp(prev_price);
    let res = solver.solve(&p, w, forced)?;
    Ok(ResolvedState {
        q: res.q_star,
        p,
        selected: res.selected,
        converged: false,
        iterations: settings.max_iterations,
    })
}
