//! Utility and dual-cost functions, equilibrium solvers, and price maps.
//!
//! Two families of utilities are supported. With valued queue `pq` and
//! service rate `c`:
//!
//! * proportionally fair: `U(pq, c) = pq·ln(c)`, dual cost
//!   `C = (pq)²/(2μc)`;
//! * minimal potential delay: `U(pq, c) = −(pq)²/c²`, dual cost
//!   `C = 2(pq)³/(3μc³)`.
//!
//! The dual cost is `(1/μ)∫₀^{pq} ∂U(x, c)/∂c dx`, the cost functional whose
//! minimization over the workload constraint characterizes the equilibrium
//! queue profile. Closed-form solvers for the bundled two- and three-user
//! pools live in [`closed_form`]; subset-enumerating numerical solvers for
//! the general mixed game live in [`generic`].

mod closed_form;
mod fixed_point;
mod generic;
mod validate;

pub use closed_form::{ThreeUserPool, TwoUserPool, KAPPA_EPSILON};
pub use fixed_point::{
    resolve_workload_state, FixedPointSettings, QueueSolver, ResolvedState,
};
pub use generic::{generic_equilibrium, generic_min_dual_cost, lyapunov_psi};
pub use validate::{
    validate_price_lipschitz, validate_utility_conditions, ConditionGrid, UtilityConditionReport,
};

use crate::error::{Error, Result};

/// Utility family of one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtilityKind {
    PropFair,
    MinPotentialDelay,
}

impl UtilityKind {
    /// Utility at valued queue `pq ≥ 0` and rate `c > 0`.
    pub fn eval(self, pq: f64, c: f64) -> Result<f64> {
        if !(c > 0.0) {
            return Err(Error::Domain(format!("rate must be positive, got {c}")));
        }
        Ok(match self {
            UtilityKind::PropFair => pq * c.ln(),
            UtilityKind::MinPotentialDelay => -(pq * pq) / (c * c),
        })
    }

    /// Marginal utility `∂U/∂c`.
    pub fn marginal(self, pq: f64, c: f64) -> f64 {
        match self {
            UtilityKind::PropFair => pq / c,
            UtilityKind::MinPotentialDelay => 2.0 * pq * pq / (c * c * c),
        }
    }

    /// Dual cost of holding queue `q` at price `p`, rate `c`, packet rate `μ`.
    ///
    /// `q = 0` costs nothing regardless of the rate argument.
    pub fn dual_cost(self, p: f64, q: f64, c: f64, mu: f64) -> Result<f64> {
        if q == 0.0 {
            return Ok(0.0);
        }
        if !(q > 0.0) || !(p >= 0.0) {
            return Err(Error::Domain(format!(
                "dual cost needs q ≥ 0 and p ≥ 0, got q={q}, p={p}"
            )));
        }
        if !(c > 0.0) || !(mu > 0.0) {
            return Err(Error::Domain(format!(
                "dual cost needs c > 0 and μ > 0, got c={c}, μ={mu}"
            )));
        }
        let pq = p * q;
        Ok(match self {
            UtilityKind::PropFair => pq * pq / (2.0 * mu * c),
            UtilityKind::MinPotentialDelay => 2.0 * pq.powi(3) / (3.0 * mu * c.powi(3)),
        })
    }

    /// `∂C/∂q` at the same arguments.
    pub fn dual_cost_dq(self, p: f64, q: f64, c: f64, mu: f64) -> f64 {
        let pq = p * q;
        match self {
            UtilityKind::PropFair => p * pq / (mu * c),
            UtilityKind::MinPotentialDelay => 2.0 * p * pq * pq / (mu * c.powi(3)),
        }
    }
}

/// Per-user utility families of a pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtilitySpec {
    pub kinds: Vec<UtilityKind>,
}

impl UtilitySpec {
    pub fn new(kinds: Vec<UtilityKind>) -> Self {
        Self { kinds }
    }

    /// The bundled two-user pool: one proportionally fair user, one minimal
    /// potential delay user.
    pub fn two_user() -> Self {
        Self::new(vec![UtilityKind::PropFair, UtilityKind::MinPotentialDelay])
    }

    /// The bundled three-user pool: users 1 and 3 proportionally fair, user 2
    /// minimal potential delay.
    pub fn three_user() -> Self {
        Self::new(vec![
            UtilityKind::PropFair,
            UtilityKind::MinPotentialDelay,
            UtilityKind::PropFair,
        ])
    }

    pub fn num_users(&self) -> usize {
        self.kinds.len()
    }
}

/// Per-user dual costs with service rates `μ_j` (packets per unit work).
#[derive(Debug, Clone, PartialEq)]
pub struct DualCostSpec {
    pub kinds: Vec<UtilityKind>,
    pub mu: Vec<f64>,
}

impl DualCostSpec {
    pub fn new(kinds: Vec<UtilityKind>, mu: Vec<f64>) -> Result<Self> {
        if kinds.len() != mu.len() {
            return Err(Error::Dimension {
                expected: kinds.len(),
                got: mu.len(),
            });
        }
        if mu.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Validation("all μ_j must be positive".into()));
        }
        Ok(Self { kinds, mu })
    }

    pub fn num_users(&self) -> usize {
        self.kinds.len()
    }

    pub fn eval(&self, j: usize, p: f64, q: f64, c: f64) -> Result<f64> {
        self.kinds[j].dual_cost(p, q, c, self.mu[j])
    }

    /// Total cost `Σ_j C_j(p_j q_j, c_j)`; empty queues contribute zero.
    pub fn total(&self, p: &[f64], q: &[f64], c: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for j in 0..self.num_users() {
            sum += self.eval(j, p[j], q[j], c[j])?;
        }
        Ok(sum)
    }
}

/// Functional form of a dynamic price map.
#[derive(Debug, Clone, PartialEq)]
pub enum PriceRule {
    /// Two-user inverse map `(κ², κ)` of the queue split.
    TwoUserKappa,
    /// Three-user branch map driven by the selected pair.
    ThreeUserBranch,
    /// The fixed comparison map `lb_j + a_j/(b_j + √q_j)`.
    Arbitrary,
    /// Constant prices.
    Constant,
}

/// Componentwise price bounds, initial prices, and the map's functional form.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceMap {
    lower: Vec<f64>,
    upper: Vec<f64>,
    initial: Vec<f64>,
    pub rule: PriceRule,
}

impl PriceMap {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, initial: Vec<f64>, rule: PriceRule) -> Result<Self> {
        let n = lower.len();
        if upper.len() != n || initial.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: upper.len().max(initial.len()),
            });
        }
        for j in 0..n {
            if !(lower[j] >= 0.0) {
                return Err(Error::Validation(format!(
                    "lower price bound {} for user {} must be nonnegative",
                    lower[j],
                    j + 1
                )));
            }
            if upper[j] < lower[j] {
                return Err(Error::Validation(format!(
                    "upper price bound {} below lower bound {} for user {}",
                    upper[j],
                    lower[j],
                    j + 1
                )));
            }
            if !(initial[j] > 0.0) || initial[j] < lower[j] || initial[j] > upper[j] {
                return Err(Error::Validation(format!(
                    "initial price {} for user {} must be positive and inside [{}, {}]",
                    initial[j],
                    j + 1,
                    lower[j],
                    upper[j]
                )));
            }
        }
        Ok(Self {
            lower,
            upper,
            initial,
            rule,
        })
    }

    pub fn num_users(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Componentwise clamp into `[lower, upper]`.
    pub fn clamp(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(j, v)| v.max(self.lower[j]).min(self.upper[j]))
            .collect()
    }
}

/// Solved equilibrium of one pool at a given workload.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    /// Served users, ascending 0-based indices.
    pub selected: Vec<usize>,
    pub q_star: Vec<f64>,
    /// Inverse prices implied by the queue split, pre-clamp; unselected
    /// users keep the input price.
    pub p_star: Vec<f64>,
    /// Fixed rate arguments of the dual costs, masked to the selection.
    pub c_star: Vec<f64>,
    /// Dual cost of the selected pair at the input prices.
    pub total_cost: f64,
    /// Candidate selections and their pair costs, in enumeration order.
    pub per_pair_costs: Vec<(Vec<usize>, f64)>,
}

impl EquilibriumResult {
    /// Residual of the active workload constraint `Σ_{selected} q_j/μ_j = w`.
    pub fn workload_residual(&self, mu: &[f64], w: f64) -> f64 {
        let lhs: f64 = self.selected.iter().map(|&j| self.q_star[j] / mu[j]).sum();
        lhs - w
    }
}
