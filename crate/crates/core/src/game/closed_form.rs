//! Closed-form equilibrium solvers for the bundled two- and three-user pools.
//!
//! Both pools minimize the summed dual cost on the workload constraint
//! `Σ q_j/μ_j = w` (the costs strictly increase in q, so the constraint is
//! active). The two-user pool pairs a proportionally fair user with a
//! minimal-potential-delay user; the three-user pool adds a second
//! proportionally fair user and a zero-sum selection stage that serves the
//! pair of minimal dual cost.

use super::{EquilibriumResult, UtilityKind};
use crate::error::{Error, Result};

/// Queue lengths below this are substituted before dividing in the inverse
/// price maps; the upper price clamp keeps the resulting prices finite.
pub const KAPPA_EPSILON: f64 = 1e-9;

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Two-user pool: user 0 proportionally fair, user 1 minimal potential
/// delay. `mu` are the packet rates, `rate` the fixed rate arguments of the
/// dual costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoUserPool {
    pub mu: [f64; 2],
    pub rate: [f64; 2],
}

impl TwoUserPool {
    pub fn new(mu: [f64; 2], rate: [f64; 2]) -> Result<Self> {
        for v in mu.iter().chain(rate.iter()) {
            check_positive("pool parameter", *v)?;
        }
        Ok(Self { mu, rate })
    }

    pub const KINDS: [UtilityKind; 2] = [UtilityKind::PropFair, UtilityKind::MinPotentialDelay];

    /// Minimizer of
    /// `f̄(q₀) = (p₀q₀)²/(2μ₀c₀) + (2p₁³μ₁²/3c₁³)(w − q₀/μ₀)³`
    /// over the segment `q₀ ∈ [0, μ₀w]`, with `q₁ = μ₁(w − q₀/μ₀)`.
    ///
    /// Evaluated in the conjugate form `q₀ = μ₀²w²/(aμ₀² + √(a²μ₀⁴ − μ₀²w²))`
    /// to avoid cancellation when the price term dominates.
    pub fn solve_queue_split(&self, p: [f64; 2], w: f64) -> Result<[f64; 2]> {
        check_positive("price p1", p[0])?;
        check_positive("price p2", p[1])?;
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::Domain(format!("workload must be ≥ 0, got {w}")));
        }
        if w == 0.0 {
            return Ok([0.0, 0.0]);
        }
        let [mu1, mu2] = self.mu;
        let [c1, c2] = self.rate;
        // a = A/2 with A = 2w/μ₀ + p₀²c₁³/(2p₁³c₀μ₁²).
        let a = w / mu1 + p[0] * p[0] * c2.powi(3) / (4.0 * p[1].powi(3) * c1 * mu2 * mu2);
        let disc = (a * mu1 * mu1).powi(2) - (mu1 * w).powi(2);
        let root = disc.max(0.0).sqrt();
        let q1 = ((mu1 * mu1 * w * w) / (a * mu1 * mu1 + root)).min(mu1 * w);
        let q2 = (mu2 * (w - q1 / mu1)).max(0.0);
        Ok([q1, q2])
    }

    /// Price-ratio function `κ(q₀, w) = p₀²/p₁³` at the equilibrium:
    /// `κ = (2c₀μ₁²/c₁³)·((μ₀²w² + q₀²)/(μ₀²q₀) − 2w/μ₀)`, clamped at zero
    /// against round-off. Inputs below [`KAPPA_EPSILON`] are substituted.
    pub fn kappa(&self, q1: f64, w: f64) -> f64 {
        let q1 = q1.max(KAPPA_EPSILON);
        let [mu1, mu2] = self.mu;
        let [c1, c2] = self.rate;
        let lead = 2.0 * c1 * mu2 * mu2 / c2.powi(3);
        let val = lead * ((mu1 * mu1 * w * w + q1 * q1) / (mu1 * mu1 * q1) - 2.0 * w / mu1);
        val.max(0.0)
    }

    /// Pre-clamp dynamic prices `(κ², κ)`.
    pub fn raw_prices(&self, q1: f64, w: f64) -> [f64; 2] {
        let k = self.kappa(q1, w);
        [k * k, k]
    }

    /// Dual cost of the pair at prices `p`, queues `q`.
    pub fn pair_cost(&self, p: [f64; 2], q: [f64; 2]) -> Result<f64> {
        let mut total = 0.0;
        for j in 0..2 {
            total += Self::KINDS[j].dual_cost(p[j], q[j], self.rate[j], self.mu[j])?;
        }
        Ok(total)
    }
}

/// Three-user pool: users 0 and 2 proportionally fair, user 1 minimal
/// potential delay. Serves the pair of minimal dual cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeUserPool {
    pub mu: [f64; 3],
    pub rate: [f64; 3],
}

/// Queue split for a pair of proportionally fair users (0 and 2):
/// `ĝ₀ = [(p₂²μ₂w)/(μ₀c₂)] / [p₀²/(μ₀c₀) + p₂²μ₂/(μ₀²c₂)]`.
pub fn ghat1(p1: f64, p3: f64, w: f64, mu1: f64, mu3: f64, c1: f64, c3: f64) -> f64 {
    let num = p3 * p3 * mu3 * w / (mu1 * c3);
    let den = p1 * p1 / (mu1 * c1) + p3 * p3 * mu3 / (mu1 * mu1 * c3);
    num / den
}

/// Price-ratio function of the all-proportionally-fair pair:
/// `κ̂(q₀, w) = (μ₂c₀/(q₀c₂))(w − q₀/μ₀)`, clamped at zero.
pub fn kappa_hat(q1: f64, w: f64, mu1: f64, mu3: f64, c1: f64, c3: f64) -> f64 {
    let q1 = q1.max(KAPPA_EPSILON);
    ((mu3 * c1) / (q1 * c3) * (w - q1 / mu1)).max(0.0)
}

impl ThreeUserPool {
    pub fn new(mu: [f64; 3], rate: [f64; 3]) -> Result<Self> {
        for v in mu.iter().chain(rate.iter()) {
            check_positive("pool parameter", *v)?;
        }
        Ok(Self { mu, rate })
    }

    pub const KINDS: [UtilityKind; 3] = [
        UtilityKind::PropFair,
        UtilityKind::MinPotentialDelay,
        UtilityKind::PropFair,
    ];

    /// The three candidate pairs in tie-break order.
    pub const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

    fn pair_mixed(&self, prop: usize, mpd: usize) -> TwoUserPool {
        TwoUserPool {
            mu: [self.mu[prop], self.mu[mpd]],
            rate: [self.rate[prop], self.rate[mpd]],
        }
    }

    /// Queue split of one forced pair, with the third user's queue at zero.
    pub fn solve_branch(&self, p: [f64; 3], w: f64, pair: (usize, usize)) -> Result<[f64; 3]> {
        for (j, pj) in p.iter().enumerate() {
            check_positive(&format!("price p{}", j + 1), *pj)?;
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::Domain(format!("workload must be ≥ 0, got {w}")));
        }
        let mut q = [0.0; 3];
        match pair {
            (0, 1) => {
                let split = self.pair_mixed(0, 1).solve_queue_split([p[0], p[1]], w)?;
                q[0] = split[0];
                q[1] = split[1];
            }
            (0, 2) => {
                if w > 0.0 {
                    q[0] = ghat1(
                        p[0], p[2], w, self.mu[0], self.mu[2], self.rate[0], self.rate[2],
                    );
                    q[2] = (self.mu[2] * (w - q[0] / self.mu[0])).max(0.0);
                }
            }
            (1, 2) => {
                // User 2 takes the proportionally fair role of the mixed pair.
                let split = self.pair_mixed(2, 1).solve_queue_split([p[2], p[1]], w)?;
                q[2] = split[0];
                q[1] = split[1];
            }
            other => {
                return Err(Error::Domain(format!("unknown pair {other:?}")));
            }
        }
        Ok(q)
    }

    fn branch_cost(&self, p: [f64; 3], q: [f64; 3], pair: (usize, usize)) -> Result<f64> {
        let mut total = 0.0;
        for j in [pair.0, pair.1] {
            total += Self::KINDS[j].dual_cost(p[j], q[j], self.rate[j], self.mu[j])?;
        }
        Ok(total)
    }

    /// Evaluates all three pair equilibria, selects the branch of minimal
    /// dual cost (lowest-index pair on ties), and returns it together with
    /// the branch's inverse prices. Unselected users keep the input price
    /// and a zero queue.
    pub fn solve(&self, p: [f64; 3], w: f64) -> Result<EquilibriumResult> {
        self.solve_selected(p, w, None)
    }

    /// As [`ThreeUserPool::solve`] but with the selection stage overridden.
    pub fn solve_selected(
        &self,
        p: [f64; 3],
        w: f64,
        forced: Option<(usize, usize)>,
    ) -> Result<EquilibriumResult> {
        let mut per_pair = Vec::with_capacity(3);
        let mut candidates = Vec::with_capacity(3);
        for &pair in Self::PAIRS.iter() {
            let q = self.solve_branch(p, w, pair)?;
            let cost = self.branch_cost(p, q, pair)?;
            per_pair.push((vec![pair.0, pair.1], cost));
            candidates.push((pair, q, cost));
        }
        let (pair, q, cost) = match forced {
            Some(f) => candidates
                .iter()
                .find(|(pair, _, _)| *pair == f)
                .cloned()
                .ok_or_else(|| Error::Domain(format!("unknown pair {f:?}")))?,
            None => {
                // Strict < keeps the lowest-index pair on ties.
                let mut best = candidates[0].clone();
                for cand in &candidates[1..] {
                    if cand.2 < best.2 {
                        best = cand.clone();
                    }
                }
                best
            }
        };
        let p_star = self.raw_prices(pair, q, w, &p);
        let mut c_star = [0.0; 3];
        for j in [pair.0, pair.1] {
            c_star[j] = self.rate[j];
        }
        Ok(EquilibriumResult {
            selected: vec![pair.0, pair.1],
            q_star: q.to_vec(),
            p_star: p_star.to_vec(),
            c_star: c_star.to_vec(),
            total_cost: cost,
            per_pair_costs: per_pair,
        })
    }

    /// Pre-clamp inverse prices of a branch. The price weight on the
    /// all-proportionally-fair branch is fixed to one; the unselected user
    /// keeps `prev`.
    pub fn raw_prices(&self, pair: (usize, usize), q: [f64; 3], w: f64, prev: &[f64; 3]) -> [f64; 3] {
        let mut p = *prev;
        match pair {
            (0, 1) => {
                let k = self.pair_mixed(0, 1).kappa(q[0], w);
                p[0] = k * k;
                p[1] = k;
            }
            (0, 2) => {
                let kh = kappa_hat(q[0], w, self.mu[0], self.mu[2], self.rate[0], self.rate[2]);
                p[0] = kh;
                p[2] = kh.sqrt();
            }
            (1, 2) => {
                let k = self.pair_mixed(2, 1).kappa(q[2], w);
                p[2] = k * k;
                p[1] = k;
            }
            _ => unreachable!("pairs are enumerated from PAIRS"),
        }
        p
    }
}
