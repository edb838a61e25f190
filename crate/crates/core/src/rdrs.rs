//! One-dimensional reflected diffusion with regime switching.
//!
//! The workload process follows
//! `dX = b(α(t)) dt + Σ_j σᴱ_j √Γᴱ_jj dBᴱ_j + Σ_j σˢ_j √Γˢ_jj dBˢ_j`
//! with `W = X + Y ≥ 0` kept nonnegative by the regulator `Y`. The scheme is
//! projected Euler: `W ← max(0, W + ΔX)` with `ΔY` the projection residual,
//! which satisfies the discrete complementarity (`Y` grows only when `W`
//! hits zero). Coefficients are rebuilt from the active user set at every
//! grid point; environment jumps between grid points take effect at the
//! next one.

use crate::env::EnvPath;
use crate::error::{Error, Result};
use crate::game::{
    resolve_workload_state, FixedPointSettings, PriceMap, QueueSolver,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Per-user, per-state primitives of the diffusion approximation.
///
/// `lambda`, `m`, `theta`, `rho` are indexed `[state][user]` (states
/// 0-based internally, 1-based at the [`EnvPath`] boundary); `mu`,
/// `alpha_sq`, `zeta_sq`, `beta_sq` are per-user constants.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionParams {
    pub lambda: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub alpha_sq: Vec<f64>,
    pub zeta_sq: Vec<f64>,
    pub beta_sq: Vec<f64>,
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<()> {
        let j = self.mu.len();
        if j == 0 {
            return Err(Error::Validation("at least one user required".into()));
        }
        for (name, v) in [
            ("alpha_sq", &self.alpha_sq),
            ("zeta_sq", &self.zeta_sq),
            ("beta_sq", &self.beta_sq),
        ] {
            if v.len() != j {
                return Err(Error::Dimension {
                    expected: j,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::Validation(format!("{name} must be nonnegative")));
            }
        }
        if self.mu.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::Validation("mu must be positive".into()));
        }
        let states = self.lambda.len();
        if states == 0 {
            return Err(Error::Validation("at least one state required".into()));
        }
        for (name, rows) in [
            ("lambda", &self.lambda),
            ("m", &self.m),
            ("theta", &self.theta),
            ("rho", &self.rho),
        ] {
            if rows.len() != states {
                return Err(Error::Dimension {
                    expected: states,
                    got: rows.len(),
                });
            }
            for row in rows.iter() {
                if row.len() != j {
                    return Err(Error::Dimension {
                        expected: j,
                        got: row.len(),
                    });
                }
                if name != "theta" && row.iter().any(|x| !(*x >= 0.0)) {
                    return Err(Error::Validation(format!("{name} must be nonnegative")));
                }
            }
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.mu.len()
    }

    pub fn num_states(&self) -> usize {
        self.lambda.len()
    }

    /// Diagonals of the arrival and service covariance matrices in
    /// environment state `state` (1-based):
    /// `Γᴱ_jj = λ_j m_j² ζ_j² + λ_j m_j α_j²`, `Γˢ_jj = λ_j m_j β_j²`.
    pub fn gamma_matrices(&self, state: usize) -> (Vec<f64>, Vec<f64>) {
        let i = state - 1;
        let j = self.num_users();
        let mut ge = Vec::with_capacity(j);
        let mut gs = Vec::with_capacity(j);
        for u in 0..j {
            let (l, m) = (self.lambda[i][u], self.m[i][u]);
            ge.push(l * m * m * self.zeta_sq[u] + l * m * self.alpha_sq[u]);
            gs.push(l * m * self.beta_sq[u]);
        }
        (ge, gs)
    }

    /// Workload coefficients for one state and active user set:
    /// `b = Σ_{j∈active} θ_j/μ_j`, `σᴱ_j = σˢ_j = 1/μ_j` on active users.
    pub fn build_workload_coeffs(&self, state: usize, active: &[usize]) -> RdrsCoeffs {
        let j = self.num_users();
        let (gamma_e, gamma_s) = self.gamma_matrices(state);
        let mut sigma = vec![0.0; j];
        let mut drift = 0.0;
        for &u in active {
            sigma[u] = 1.0 / self.mu[u];
            drift += self.theta[state - 1][u] / self.mu[u];
        }
        RdrsCoeffs {
            drift,
            sigma_e: sigma.clone(),
            sigma_s: sigma,
            gamma_e,
            gamma_s,
            reflection: 1.0,
        }
    }
}

/// Drift, diffusion rows, and covariance diagonals of the 1-D workload
/// model; the reflection matrix is the scalar 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RdrsCoeffs {
    pub drift: f64,
    pub sigma_e: Vec<f64>,
    pub sigma_s: Vec<f64>,
    pub gamma_e: Vec<f64>,
    pub gamma_s: Vec<f64>,
    pub reflection: f64,
}

impl RdrsCoeffs {
    /// Scalar diffusion magnitude
    /// `σ̂ = √((Σ_j σᴱ_j √Γᴱ_jj)² + (Σ_j σˢ_j √Γˢ_jj)²)`.
    pub fn aggregate_sigma(&self) -> f64 {
        let e: f64 = self
            .sigma_e
            .iter()
            .zip(&self.gamma_e)
            .map(|(s, g)| s * g.sqrt())
            .sum();
        let s: f64 = self
            .sigma_s
            .iter()
            .zip(&self.gamma_s)
            .map(|(s, g)| s * g.sqrt())
            .sum();
        (e * e + s * s).sqrt()
    }
}

/// Uniform time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridScheme {
    pub horizon: f64,
    pub steps: usize,
}

impl GridScheme {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::Validation(format!(
                "grid needs horizon > 0 and steps ≥ 1, got T={horizon}, n={steps}"
            )));
        }
        Ok(Self { horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps)
            .map(|i| self.horizon * i as f64 / self.steps as f64)
            .collect()
    }
}

/// One simulated workload path with the induced queue and price vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RdrsPath {
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    pub qhat: Vec<Vec<f64>>,
    pub phat: Vec<Vec<f64>>,
    /// Free (unreflected) increments ΔX, one per step.
    pub x_increments: Vec<f64>,
}

impl RdrsPath {
    /// Nonnegativity, monotone regulator, discrete complementarity.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.w.len();
        if self.y.len() != n || self.times.len() != n || self.x_increments.len() + 1 != n {
            return Err(Error::Validation("path arrays disagree in length".into()));
        }
        if self.y[0] != 0.0 {
            return Err(Error::Validation("regulator must start at 0".into()));
        }
        let w_max = self.w.iter().cloned().fold(0.0, f64::max);
        let mut complementarity = 0.0;
        for i in 1..n {
            if self.w[i] < 0.0 {
                return Err(Error::Validation(format!("W[{i}] = {} < 0", self.w[i])));
            }
            let dy = self.y[i] - self.y[i - 1];
            if dy < 0.0 {
                return Err(Error::Validation(format!("Y decreased at step {i}")));
            }
            if dy > 1e-12 && self.w[i] > 1e-12 * w_max.max(1.0) {
                return Err(Error::Validation(format!(
                    "regulator grew by {dy} at step {i} while W = {}",
                    self.w[i]
                )));
            }
            complementarity += self.w[i] * dy;
        }
        let budget = 1e-12 * w_max * self.y[n - 1];
        if complementarity > budget {
            return Err(Error::Validation(format!(
                "complementarity sum {complementarity} exceeds {budget}"
            )));
        }
        Ok(())
    }
}

/// Simulates the workload diffusion on `[0, scheme.horizon]` from `W₀ = 0`,
/// resolving the queue/price pair at every grid point.
///
/// Exactly `2J` standard-normal draws are consumed per step (arrival and
/// service families for every user, active or not), so paths driven by
/// clones of one seeded stream stay pathwise coupled across policy arms.
pub fn simulate_rdrs_1d<R: Rng>(
    params: &DiffusionParams,
    env_path: &EnvPath,
    scheme: &GridScheme,
    map: &PriceMap,
    solver: &QueueSolver,
    rng: &mut R,
) -> Result<RdrsPath> {
    params.validate()?;
    let users = params.num_users();
    if solver.num_users() != users || map.num_users() != users {
        return Err(Error::Dimension {
            expected: users,
            got: solver.num_users(),
        });
    }
    if env_path.horizon() < scheme.horizon {
        return Err(Error::Range(format!(
            "environment path horizon {} shorter than grid horizon {}",
            env_path.horizon(),
            scheme.horizon
        )));
    }
    let settings = FixedPointSettings::default();
    let n = scheme.steps;
    let dt = scheme.dt();
    let sqrt_dt = dt.sqrt();
    let times = scheme.times();

    let mut w = Vec::with_capacity(n + 1);
    let mut y = Vec::with_capacity(n + 1);
    let mut x_increments = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n + 1);
    let mut qhat = Vec::with_capacity(n + 1);
    let mut phat = Vec::with_capacity(n + 1);

    let state0 = env_path.state_at(0.0)?;
    states.push(state0);
    w.push(0.0);
    y.push(0.0);
    qhat.push(vec![0.0; users]);
    let mut price = map.clamp(map.initial());
    phat.push(price.clone());
    let mut selected: Vec<usize> = (0..users).collect();

    let normal = StandardNormal;
    for i in 0..n {
        let state = states[i];
        let coeffs = params.build_workload_coeffs(state, &selected);
        let mut dx = coeffs.drift * dt;
        for j in 0..users {
            let db_e: f64 = normal.sample(rng);
            dx += coeffs.sigma_e[j] * coeffs.gamma_e[j].sqrt() * db_e * sqrt_dt;
        }
        for j in 0..users {
            let db_s: f64 = normal.sample(rng);
            dx += coeffs.sigma_s[j] * coeffs.gamma_s[j].sqrt() * db_s * sqrt_dt;
        }
        let w_next = (w[i] + dx).max(0.0);
        let dy = w_next - w[i] - dx;
        x_increments.push(dx);
        w.push(w_next);
        y.push(y[i] + dy);

        let resolved = resolve_workload_state(solver, map, w_next, &price, None, &settings)
            .map_err(|e| match e {
                Error::NonConvergence { context, best, .. } => Error::NonConvergence {
                    iterations: settings.max_iterations,
                    context: format!("step {}: {context}", i + 1),
                    best,
                },
                other => other,
            })?;
        price = resolved.p.clone();
        selected = resolved.selected.clone();
        qhat.push(resolved.q);
        phat.push(resolved.p);
        states.push(env_path.state_at(times[i + 1])?);
    }

    Ok(RdrsPath {
        times,
        states,
        w,
        y,
        qhat,
        phat,
        x_increments,
    })
}

/// Workload-to-(queue, price) mapping at one grid point; thin wrapper over
/// the game module's fixed point.
pub fn map_workload_to_state(
    w: f64,
    prev_price: &[f64],
    solver: &QueueSolver,
    map: &PriceMap,
) -> Result<crate::game::ResolvedState> {
    if !(w >= 0.0) {
        return Err(Error::Domain(format!("workload must be ≥ 0, got {w}")));
    }
    resolve_workload_state(solver, map, w, prev_price, None, &FixedPointSettings::default())
}

/// Two-dimensional comparison baseline: per-coordinate reflected Euler in
/// queue units, `dQ_j = θ_j dt + √Γᴱ_jj dBᴱ_j + √Γˢ_jj dBˢ_j` projected at
/// zero, constant price one. Consumes the same `2J` draws per step as the
/// workload model. Approximate stand-in for an externally defined baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct Path2d {
    pub times: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

pub fn simulate_2d_comparison<R: Rng>(
    params: &DiffusionParams,
    env_path: &EnvPath,
    scheme: &GridScheme,
    rng: &mut R,
) -> Result<Path2d> {
    params.validate()?;
    if params.num_users() != 2 {
        return Err(Error::Validation(
            "the 2-D comparison baseline needs exactly two users".into(),
        ));
    }
    let n = scheme.steps;
    let dt = scheme.dt();
    let sqrt_dt = dt.sqrt();
    let times = scheme.times();
    let normal = StandardNormal;
    let mut q = vec![vec![0.0; 2]];
    for i in 0..n {
        let state = env_path.state_at(times[i])?;
        let (gamma_e, gamma_s) = params.gamma_matrices(state);
        let theta = &params.theta[state - 1];
        let mut db_e = [0.0; 2];
        for j in 0..2 {
            db_e[j] = normal.sample(rng);
        }
        let mut db_s = [0.0; 2];
        for j in 0..2 {
            db_s[j] = normal.sample(rng);
        }
        let prev = q[i].clone();
        let mut next = vec![0.0; 2];
        for j in 0..2 {
            let dx = theta[j] * dt
                + gamma_e[j].sqrt() * db_e[j] * sqrt_dt
                + gamma_s[j].sqrt() * db_s[j] * sqrt_dt;
            next[j] = (prev[j] + dx).max(0.0);
        }
        q.push(next);
    }
    Ok(Path2d { times, q })
}
