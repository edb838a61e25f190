//! Runtime validators for the utility conditions and the price map.

use super::generic::generic_equilibrium;
use super::{PriceMap, TwoUserPool, UtilityKind, UtilitySpec};
use crate::capacity::CapacityRegion;
use crate::error::Result;

/// Sample grid for the finite-difference checks.
#[derive(Debug, Clone, Copy)]
pub struct ConditionGrid {
    pub pq_max: f64,
    pub c_max: f64,
    pub points: usize,
}

impl Default for ConditionGrid {
    fn default() -> Self {
        Self {
            pq_max: 100.0,
            c_max: 2000.0,
            points: 25,
        }
    }
}

/// Report of [`validate_utility_conditions`]; report-only, never an error.
#[derive(Debug, Clone)]
pub struct UtilityConditionReport {
    /// U(0, c) = 0 on the rate grid.
    pub zero_at_empty_queue: bool,
    /// Strictly increasing in c for pq > 0.
    pub increasing_in_rate: bool,
    /// Concave in c (second differences ≤ 0).
    pub concave_in_rate: bool,
    /// ∂U/∂c strictly increasing in pq.
    pub marginal_increasing_in_pq: bool,
    /// Equilibrium rates invariant under pq → a·pq, a ∈ {0.5, 2, 10},
    /// checked on a symmetric homogeneous pool per utility family.
    pub radially_homogeneous: bool,
    pub failures: Vec<String>,
}

impl UtilityConditionReport {
    pub fn all_hold(&self) -> bool {
        self.zero_at_empty_queue
            && self.increasing_in_rate
            && self.concave_in_rate
            && self.marginal_increasing_in_pq
            && self.radially_homogeneous
    }
}

pub fn validate_utility_conditions(
    spec: &UtilitySpec,
    grid: &ConditionGrid,
) -> Result<UtilityConditionReport> {
    let mut report = UtilityConditionReport {
        zero_at_empty_queue: true,
        increasing_in_rate: true,
        concave_in_rate: true,
        marginal_increasing_in_pq: true,
        radially_homogeneous: true,
        failures: Vec::new(),
    };
    let n = grid.points.max(3);
    let pq_of = |i: usize| grid.pq_max * i as f64 / n as f64;
    let c_of = |i: usize| grid.c_max * i as f64 / n as f64;

    for (j, kind) in spec.kinds.iter().enumerate() {
        for ci in 1..=n {
            let c = c_of(ci);
            if kind.eval(0.0, c)? != 0.0 {
                report.zero_at_empty_queue = false;
                report.failures.push(format!("user {}: U(0, {c}) ≠ 0", j + 1));
            }
        }
        for qi in 1..=n {
            let pq = pq_of(qi);
            for ci in 1..n {
                let (c0, c1, c2) = (c_of(ci), c_of(ci) * 1.05, c_of(ci) * 1.1025);
                let (u0, u1, u2) = (kind.eval(pq, c0)?, kind.eval(pq, c1)?, kind.eval(pq, c2)?);
                if u1 <= u0 {
                    report.increasing_in_rate = false;
                    report
                        .failures
                        .push(format!("user {}: U not increasing at pq={pq}, c={c0}", j + 1));
                }
                if (u2 - u1) - (u1 - u0) > 1e-9 * u0.abs().max(1.0) {
                    report.concave_in_rate = false;
                    report
                        .failures
                        .push(format!("user {}: U not concave at pq={pq}, c={c0}", j + 1));
                }
            }
        }
        for ci in 1..=n {
            let c = c_of(ci);
            let mut prev = kind.marginal(pq_of(1), c);
            for qi in 2..=n {
                let m = kind.marginal(pq_of(qi), c);
                if m <= prev {
                    report.marginal_increasing_in_pq = false;
                    report.failures.push(format!(
                        "user {}: ∂U/∂c not increasing in pq at c={c}",
                        j + 1
                    ));
                }
                prev = m;
            }
        }
    }

    // Radial homogeneity of the induced equilibrium rate, per utility
    // family present in the spec, on a symmetric two-user pool.
    let mut families: Vec<UtilityKind> = Vec::new();
    for kind in &spec.kinds {
        if !families.contains(kind) {
            families.push(*kind);
        }
    }
    let region = CapacityRegion::from_caps(&[0.75 * grid.c_max; 2], grid.c_max)?;
    for kind in families {
        let utilities = UtilitySpec::new(vec![kind, kind]);
        let pq = [0.37 * grid.pq_max, 0.81 * grid.pq_max];
        let nominal = [grid.c_max / 2.0; 2];
        let (base, _) = generic_equilibrium(&utilities, &region, &pq, 2, &nominal)?;
        // a = 1 must reproduce the allocation bit for bit.
        let (same, _) = generic_equilibrium(&utilities, &region, &pq, 2, &nominal)?;
        if same != base {
            report.radially_homogeneous = false;
            report.failures.push(format!("{kind:?}: a=1 rerun differs"));
        }
        for a in [0.5, 2.0, 10.0] {
            let scaled_pq = [a * pq[0], a * pq[1]];
            let (scaled, _) = generic_equilibrium(&utilities, &region, &scaled_pq, 2, &nominal)?;
            for j in 0..2 {
                if (scaled[j] - base[j]).abs() > 1e-6 * base[j].abs().max(1.0) {
                    report.radially_homogeneous = false;
                    report.failures.push(format!(
                        "{kind:?}: allocation moved under pq scaling a={a}: {} -> {}",
                        base[j], scaled[j]
                    ));
                }
            }
        }
    }
    Ok(report)
}

/// Largest finite-difference slope of the clamped two-user price map over
/// `q₀ ∈ [q_min, μ₀·w]`. Finite on any compact set away from zero.
pub fn validate_price_lipschitz(
    pool: &TwoUserPool,
    map: &PriceMap,
    w: f64,
    q_min: f64,
    points: usize,
) -> f64 {
    let top = pool.mu[0] * w;
    let mut max_slope: f64 = 0.0;
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for i in 0..=points {
        let q1 = q_min + (top - q_min) * i as f64 / points as f64;
        let p = map.clamp(&pool.raw_prices(q1, w));
        if let Some((q_prev, p_prev)) = &prev {
            let dq = q1 - q_prev;
            for j in 0..2 {
                max_slope = max_slope.max((p[j] - p_prev[j]).abs() / dq);
            }
        }
        prev = Some((q1, p));
    }
    max_slope
}
