//! Numerical solvers for the mixed zero-sum / non-zero-sum games with
//! general capacity regions.
//!
//! `generic_equilibrium` enumerates candidate user subsets (the zero-sum
//! selection stage), maximizes the summed utility of each subset over the
//! restricted face, and keeps the subset of maximal value. The face
//! maximization runs saturation sweeps plus pairwise-exchange line searches:
//! single-coordinate ascent alone cannot move along the active sum facet for
//! separable increasing utilities, while exchange directions `e_j − e_k`
//! stay on it.

use super::{DualCostSpec, UtilityKind, UtilitySpec};
use crate::capacity::{CapacityRegion, MEMBERSHIP_TOL};
use crate::error::{Error, Result};

const SWEEP_CAP: usize = 200;
const SWEEP_TOL: f64 = 1e-10;
const LINE_SEARCH_ITERS: usize = 70;
/// Relative tolerance of the unilateral-deviation certificate.
const DEVIATION_TOL: f64 = 1e-6;

fn combinations(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![Vec::new()];
    }
    if items.len() < size {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &head) in items.iter().enumerate() {
        if items.len() - i < size {
            break;
        }
        for mut tail in combinations(&items[i + 1..], size - 1) {
            let mut combo = vec![head];
            combo.append(&mut tail);
            out.push(combo);
        }
    }
    out
}

fn subset_utility(kinds: &[UtilityKind], pq: &[f64], subset: &[usize], c: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &j in subset {
        total += kinds[j].eval(pq[j], c[j])?;
    }
    Ok(total)
}

/// Maximizes `Σ_{j∈subset} U_j(pq_j, c_j)` over the face of `region` with
/// every coordinate outside `subset` pinned at zero.
fn maximize_on_face(
    kinds: &[UtilityKind],
    region: &CapacityRegion,
    pq: &[f64],
    subset: &[usize],
) -> Result<Vec<f64>> {
    let dim = region.dimension();
    let mut c = vec![0.0; dim];
    let active = |j: usize| subset.contains(&j);

    // Saturation: push each active coordinate to its cap in turn until the
    // point sits on the outer boundary.
    for _ in 0..SWEEP_CAP {
        let mut gain = 0.0;
        for j in 0..dim {
            if !active(j) {
                continue;
            }
            let top = region.max_coordinate_given(j, &c)?;
            if top > c[j] {
                gain += top - c[j];
                c[j] = top;
            }
        }
        if gain <= SWEEP_TOL {
            break;
        }
    }

    if subset.len() < 2 {
        return Ok(c);
    }

    // Exchange passes: transfer mass between active pairs along e_j − e_k.
    let scale = region.sum_capacity().max(1.0);
    let mut converged = false;
    for _ in 0..SWEEP_CAP {
        let mut moved = 0.0;
        for a in 0..subset.len() {
            for b in (a + 1)..subset.len() {
                let (j, k) = (subset[a], subset[b]);
                let (lo, hi) = exchange_interval(region, &c, j, k);
                if hi - lo <= 0.0 {
                    continue;
                }
                let delta = exchange_line_search(kinds, pq, &c, j, k, lo, hi);
                if delta != 0.0 {
                    c[j] += delta;
                    c[k] -= delta;
                    moved += delta.abs();
                }
            }
        }
        if moved <= SWEEP_TOL * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: SWEEP_CAP,
            context: "face utility maximization".into(),
            best: c,
        });
    }
    Ok(c)
}

/// Feasible range of `δ` for the move `c + δ(e_j − e_k)`.
fn exchange_interval(region: &CapacityRegion, c: &[f64], j: usize, k: usize) -> (f64, f64) {
    let mut lo = -c[j];
    let mut hi = c[k];
    for h in region.halfspaces() {
        let coef = h.normal[j] - h.normal[k];
        if coef == 0.0 {
            continue;
        }
        let slack = h.offset - h.normal.iter().zip(c).map(|(n, x)| n * x).sum::<f64>();
        let bound = slack / coef;
        if coef > 0.0 {
            hi = hi.min(bound);
        } else {
            lo = lo.max(bound);
        }
    }
    (lo, hi)
}

/// Concave 1-D maximization of `U_j(c_j + δ) + U_k(c_k − δ)` by bisection on
/// the derivative. Marginal utilities blow up at zero rate, so the optimum
/// is interior whenever both queue values are positive.
fn exchange_line_search(
    kinds: &[UtilityKind],
    pq: &[f64],
    c: &[f64],
    j: usize,
    k: usize,
    lo: f64,
    hi: f64,
) -> f64 {
    let slope = |d: f64| kinds[j].marginal(pq[j], c[j] + d) - kinds[k].marginal(pq[k], c[k] - d);
    // Keep strictly inside the interval: rates of served users stay positive.
    let eps = 1e-12 * (hi - lo).max(1.0);
    let (mut lo, mut hi) = (lo + eps, hi - eps);
    if lo >= hi {
        return 0.0;
    }
    if slope(lo) <= 0.0 {
        return lo;
    }
    if slope(hi) >= 0.0 {
        return hi;
    }
    for _ in 0..LINE_SEARCH_ITERS {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Mixed-game rate allocation: enumerates user subsets of `selection_size`
/// among the non-empty queues, maximizes each subset's summed utility over
/// the restricted face, and returns the best subset's allocation after a
/// unilateral-deviation certificate.
///
/// All-empty queues fall back to the nominal throughput vector.
pub fn generic_equilibrium(
    utilities: &UtilitySpec,
    region: &CapacityRegion,
    pq: &[f64],
    selection_size: usize,
    nominal: &[f64],
) -> Result<(Vec<f64>, Vec<usize>)> {
    let dim = region.dimension();
    if pq.len() != dim || utilities.num_users() != dim || nominal.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: pq.len(),
        });
    }
    if pq.iter().any(|v| *v < 0.0) {
        return Err(Error::Domain("valued queues must be nonnegative".into()));
    }
    let candidates: Vec<usize> = (0..dim).filter(|&j| pq[j] > 0.0).collect();
    if candidates.is_empty() {
        return Ok((nominal.to_vec(), Vec::new()));
    }
    let size = selection_size.min(candidates.len()).max(1);
    let kinds = &utilities.kinds;

    let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
    for subset in combinations(&candidates, size) {
        let c = maximize_on_face(kinds, region, pq, &subset)?;
        let value = subset_utility(kinds, pq, &subset, &c)?;
        // Strict > keeps the lexicographically first subset on ties.
        if best.as_ref().map(|(v, _, _)| value > *v).unwrap_or(true) {
            best = Some((value, c, subset));
        }
    }
    let (_, c, selected) = best.expect("at least one candidate subset");
    certify_equilibrium(kinds, region, pq, &selected, &c)?;
    Ok((c, selected))
}

/// No ±1% single-coordinate perturbation that stays feasible may improve a
/// selected user's utility beyond the relative tolerance. Excluded users sit
/// at zero rate, where the perturbation is degenerate.
fn certify_equilibrium(
    kinds: &[UtilityKind],
    region: &CapacityRegion,
    pq: &[f64],
    selected: &[usize],
    c: &[f64],
) -> Result<()> {
    for &j in selected {
        let base = kinds[j].eval(pq[j], c[j])?;
        for factor in [0.99, 1.01] {
            let mut trial = c.to_vec();
            trial[j] = c[j] * factor;
            if !region.contains(&trial)? {
                continue;
            }
            let perturbed = kinds[j].eval(pq[j], trial[j])?;
            if perturbed > base + DEVIATION_TOL * base.abs().max(1.0) {
                return Err(Error::NonConvergence {
                    iterations: 0,
                    context: format!(
                        "unilateral deviation by user {} improves utility {} -> {}",
                        j + 1,
                        base,
                        perturbed
                    ),
                    best: c.to_vec(),
                });
            }
        }
    }
    Ok(())
}

/// Minimal-dual-cost queue profile at fixed rates: minimizes
/// `Σ_j C_j(p_j q_j, c_j)` subject to `Σ_{j∈𝒞} q_j/μ_j = w`, where
/// `𝒞 = {j : c_j > 0}`; users outside `𝒞` hold zero queues.
///
/// Stationarity gives `q_j(η)` increasing in the multiplier `η`, so the
/// active constraint is solved by monotone bisection.
pub fn generic_min_dual_cost(
    costs: &DualCostSpec,
    c: &[f64],
    p: &[f64],
    w: f64,
) -> Result<Vec<f64>> {
    let n = costs.num_users();
    if c.len() != n || p.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: c.len().min(p.len()),
        });
    }
    if !(w >= 0.0) {
        return Err(Error::Domain(format!("workload must be ≥ 0, got {w}")));
    }
    let served: Vec<usize> = (0..n).filter(|&j| c[j] > 0.0).collect();
    if w == 0.0 {
        return Ok(vec![0.0; n]);
    }
    if served.is_empty() {
        return Err(Error::Infeasible(
            "positive workload with every rate zero".into(),
        ));
    }
    for &j in &served {
        if !(p[j] > 0.0) {
            return Err(Error::Domain(format!(
                "price of served user {} must be positive, got {}",
                j + 1,
                p[j]
            )));
        }
    }

    // q_j(η): prop-fair ηc/p², min-potential-delay √(ηc³/(2p³)).
    let profile = |eta: f64| -> Vec<f64> {
        let mut q = vec![0.0; n];
        for &j in &served {
            q[j] = match costs.kinds[j] {
                UtilityKind::PropFair => eta * c[j] / (p[j] * p[j]),
                UtilityKind::MinPotentialDelay => (eta * c[j].powi(3) / (2.0 * p[j].powi(3))).sqrt(),
            };
        }
        q
    };
    let load = |q: &[f64]| -> f64 { served.iter().map(|&j| q[j] / costs.mu[j]).sum() };

    let mut hi = 1.0;
    for _ in 0..1100 {
        if load(&profile(hi)) >= w {
            break;
        }
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if load(&profile(mid)) < w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = profile(0.5 * (lo + hi));
    debug_assert!((load(&q) - w).abs() <= 1e-9 * w.max(1.0));
    Ok(q)
}

/// Candidate decrease function `ψ(pq) = Σ_j C_j(p_j q_j, ρ_j)` evaluated at
/// the nominal throughput; nonnegative, zero at empty queues.
pub fn lyapunov_psi(costs: &DualCostSpec, p: &[f64], q: &[f64], rho: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..costs.num_users() {
        if q[j] == 0.0 {
            continue;
        }
        total += costs.eval(j, p[j], q[j], rho[j])?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::TwoUserPool;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn pool_region() -> CapacityRegion {
        CapacityRegion::from_caps(&[1500.0, 1500.0], 2000.0).unwrap()
    }

    #[test]
    fn combinations_enumerate_lexicographically() {
        assert_eq!(
            combinations(&[0, 1, 2], 2),
            vec![vec![0, 1], vec![0, 2], vec![1, 2]]
        );
        assert_eq!(combinations(&[4], 1), vec![vec![4]]);
        assert!(combinations(&[0], 2).is_empty());
    }

    #[test]
    fn all_empty_queues_fall_back_to_nominal() {
        let (c, selected) = generic_equilibrium(
            &UtilitySpec::two_user(),
            &pool_region(),
            &[0.0, 0.0],
            2,
            &[1000.0, 1000.0],
        )
        .unwrap();
        assert_eq!(c, vec![1000.0, 1000.0]);
        assert!(selected.is_empty());
    }

    #[test]
    fn single_user_region_saturates_the_cap() {
        let region = CapacityRegion::from_caps(&[700.0], 700.0).unwrap();
        let (c, selected) = generic_equilibrium(
            &UtilitySpec::new(vec![UtilityKind::PropFair]),
            &region,
            &[3.0],
            1,
            &[700.0],
        )
        .unwrap();
        assert_relative_eq!(c[0], 700.0);
        assert_eq!(selected, vec![0]);
    }

    /// The mixed two-user allocation matches the stationarity condition
    /// pq₀/c₀ = 2(pq₁)²/c₁³ on the sum facet, which is also what the
    /// closed-form queue split inverts.
    #[test]
    fn two_user_allocation_matches_interior_stationarity() {
        let region = pool_region();
        let utilities = UtilitySpec::two_user();
        let pq = [40.0, 55.0];
        let (c, selected) =
            generic_equilibrium(&utilities, &region, &pq, 2, &[1000.0, 1000.0]).unwrap();
        assert_eq!(selected, vec![0, 1]);
        // On the sum facet.
        assert_relative_eq!(c[0] + c[1], 2000.0, max_relative = 1e-9);
        // Marginal utilities equalize at the interior optimum.
        let m0 = UtilityKind::PropFair.marginal(pq[0], c[0]);
        let m1 = UtilityKind::MinPotentialDelay.marginal(pq[1], c[1]);
        assert_relative_eq!(m0, m1, max_relative = 1e-6);
    }

    #[test]
    fn radial_scaling_leaves_homogeneous_allocations_unchanged() {
        let region = pool_region();
        for kind in [UtilityKind::PropFair, UtilityKind::MinPotentialDelay] {
            let utilities = UtilitySpec::new(vec![kind, kind]);
            let pq = [13.0, 29.0];
            let (base, _) =
                generic_equilibrium(&utilities, &region, &pq, 2, &[1000.0, 1000.0]).unwrap();
            for a in [0.5, 2.0, 10.0] {
                let scaled_pq = [a * pq[0], a * pq[1]];
                let (scaled, _) =
                    generic_equilibrium(&utilities, &region, &scaled_pq, 2, &[1000.0, 1000.0])
                        .unwrap();
                for j in 0..2 {
                    assert_relative_eq!(base[j], scaled[j], max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn selection_prefers_higher_utility_subsets() {
        let region = CapacityRegion::with_pairwise_caps(&[1500.0; 3], 2000.0, 3000.0).unwrap();
        let utilities = UtilitySpec::new(vec![UtilityKind::PropFair; 3]);
        // User 2 has an overwhelming valued queue; any optimal pair keeps it.
        let pq = [1.0, 1.0, 500.0];
        let (_, selected) =
            generic_equilibrium(&utilities, &region, &pq, 2, &[1000.0; 3]).unwrap();
        assert!(selected.contains(&2), "selected {selected:?}");
    }

    #[test]
    fn min_dual_cost_matches_closed_form() {
        let pool = TwoUserPool::new([0.1, 0.05], [1000.0, 1000.0]).unwrap();
        let costs = DualCostSpec::new(TwoUserPool::KINDS.to_vec(), pool.mu.to_vec()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..50 {
            let p = [0.5 + 4.0 * rng.random::<f64>(), 0.5 + 2.0 * rng.random::<f64>()];
            let w = 10.0 + 9_000.0 * rng.random::<f64>();
            let closed = pool.solve_queue_split(p, w).unwrap();
            let numeric =
                generic_min_dual_cost(&costs, &pool.rate, &p, w).unwrap();
            for j in 0..2 {
                assert_relative_eq!(closed[j], numeric[j], max_relative = 1e-6, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn min_dual_cost_beats_random_feasible_profiles() {
        let costs = DualCostSpec::new(
            vec![UtilityKind::PropFair, UtilityKind::MinPotentialDelay],
            vec![0.1, 0.05],
        )
        .unwrap();
        let c = [1000.0, 1000.0];
        let p = [1.2, 0.9];
        let w = 4_000.0;
        let q_star = generic_min_dual_cost(&costs, &c, &p, w).unwrap();
        let best = costs.total(&p, &q_star, &c).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..1000 {
            // Random point on the constraint surface.
            let share: f64 = rng.random();
            let q1 = 0.1 * w * share;
            let q2 = 0.05 * (w - q1 / 0.1);
            let cost = costs.total(&p, &[q1, q2], &c).unwrap();
            assert!(best <= cost + 1e-9 * cost.abs().max(1.0));
        }
    }

    #[test]
    fn min_dual_cost_unilateral_deviations_need_larger_queues() {
        // Feasible unilateral deviations keep the other queue fixed, so they
        // can only grow the deviating user's queue and with it that user's
        // own cost.
        let costs = DualCostSpec::new(
            vec![UtilityKind::PropFair, UtilityKind::MinPotentialDelay],
            vec![0.1, 0.05],
        )
        .unwrap();
        let c = [1000.0, 1000.0];
        let p = [1.0, 1.0];
        let w = 2_000.0;
        let q_star = generic_min_dual_cost(&costs, &c, &p, w).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for j in 0..2 {
            let own = costs.eval(j, p[j], q_star[j], c[j]).unwrap();
            for _ in 0..500 {
                let other = 1 - j;
                // Feasibility: q_j/μ_j ≥ w − q_other/μ_other pins q_j ≥ q*_j.
                let q_j = q_star[j] * (1.0 + rng.random::<f64>());
                let mut q = q_star.clone();
                q[j] = q_j;
                let _ = other;
                let dev = costs.eval(j, p[j], q[j], c[j]).unwrap();
                assert!(dev + 1e-12 >= own);
            }
        }
    }

    #[test]
    fn min_dual_cost_edge_cases() {
        let costs =
            DualCostSpec::new(vec![UtilityKind::PropFair; 2], vec![0.1, 0.1]).unwrap();
        assert_eq!(
            generic_min_dual_cost(&costs, &[10.0, 10.0], &[1.0, 1.0], 0.0).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(generic_min_dual_cost(&costs, &[0.0, 0.0], &[1.0, 1.0], 5.0).is_err());
        // A zero-rate user holds a zero queue.
        let q = generic_min_dual_cost(&costs, &[10.0, 0.0], &[1.0, 1.0], 5.0).unwrap();
        assert_eq!(q[1], 0.0);
        assert_relative_eq!(q[0] / 0.1, 5.0, max_relative = 1e-9);
    }

    #[test]
    fn psi_values() {
        let costs = DualCostSpec::new(
            vec![UtilityKind::PropFair, UtilityKind::MinPotentialDelay],
            vec![0.1, 0.05],
        )
        .unwrap();
        let rho = [1000.0, 1000.0];
        assert_eq!(
            lyapunov_psi(&costs, &[1.0, 1.0], &[0.0, 0.0], &rho).unwrap(),
            0.0
        );
        // Sum of the two closed-form costs at p = (1,1), q = (10,10).
        let expect = 100.0 / (2.0 * 0.1 * 1000.0)
            + 2.0 * 1000.0 / (3.0 * 0.05 * 1000.0f64.powi(3));
        assert_relative_eq!(
            lyapunov_psi(&costs, &[1.0, 1.0], &[10.0, 10.0], &rho).unwrap(),
            expect,
            max_relative = 1e-12
        );
        // Nondecreasing in each queue coordinate.
        let mut prev = 0.0;
        for i in 1..40 {
            let q = [i as f64, 5.0];
            let v = lyapunov_psi(&costs, &[1.0, 1.0], &q, &rho).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }
}
