//! Finite-state continuous-time Markov environment.
//!
//! The environment alternates exponential sojourns with jumps driven by an
//! embedded discrete-time chain: the holding time in state `i` is
//! exponential with rate `γ(i)` and the next state is drawn from row `i` of
//! the embedded transition matrix. States are indexed `1..=K` in the public
//! API.

use crate::error::{Error, Result};
use rand::Rng;

const ROW_SUM_TOL: f64 = 1e-12;

/// Specification of the modulating chain: holding rates and embedded
/// transition matrix. Immutable and freely shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovEnvSpec {
    num_states: usize,
    holding_rates: Vec<f64>,
    embedded: Vec<Vec<f64>>,
    initial_state: usize,
}

impl MarkovEnvSpec {
    /// Validates and builds a chain specification.
    ///
    /// `embedded` must be a K×K stochastic matrix with zero diagonal; a
    /// single-state chain is the degenerate exception and must use `[[0]]`.
    pub fn new(
        holding_rates: Vec<f64>,
        embedded: Vec<Vec<f64>>,
        initial_state: usize,
    ) -> Result<Self> {
        let k = holding_rates.len();
        if k == 0 {
            return Err(Error::Validation("at least one state required".into()));
        }
        for (i, g) in holding_rates.iter().enumerate() {
            if !(g.is_finite() && *g > 0.0) {
                return Err(Error::Validation(format!(
                    "holding rate for state {} must be positive, got {g}",
                    i + 1
                )));
            }
        }
        if embedded.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: embedded.len(),
            });
        }
        for (i, row) in embedded.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Dimension {
                    expected: k,
                    got: row.len(),
                });
            }
            if row.iter().any(|q| !q.is_finite() || *q < 0.0) {
                return Err(Error::Validation(format!(
                    "embedded transition row {} has a negative or non-finite entry",
                    i + 1
                )));
            }
            if row[i] != 0.0 {
                return Err(Error::Validation(format!(
                    "embedded transition row {} has nonzero diagonal {}",
                    i + 1,
                    row[i]
                )));
            }
            let sum: f64 = row.iter().sum();
            // K = 1 has no possible transition; the only valid row is [0].
            let target = if k == 1 { 0.0 } else { 1.0 };
            if (sum - target).abs() > ROW_SUM_TOL {
                return Err(Error::Validation(format!(
                    "embedded transition row {} sums to {sum}, expected {target}",
                    i + 1
                )));
            }
        }
        if initial_state < 1 || initial_state > k {
            return Err(Error::Validation(format!(
                "initial state {initial_state} outside 1..={k}"
            )));
        }
        Ok(Self {
            num_states: k,
            holding_rates,
            embedded,
            initial_state,
        })
    }

    /// The degenerate one-state environment used by the bundled experiments.
    pub fn single_state() -> Self {
        Self {
            num_states: 1,
            holding_rates: vec![1.0],
            embedded: vec![vec![0.0]],
            initial_state: 1,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn holding_rates(&self) -> &[f64] {
        &self.holding_rates
    }

    pub fn embedded_transitions(&self) -> &[Vec<f64>] {
        &self.embedded
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Generator matrix: `g_ii = −γ(i)`, `g_il = γ(i)·q_il` for `i ≠ l`.
    /// Every row sums to zero. A single-state chain yields `[[0]]`.
    pub fn build_generator(&self) -> Vec<Vec<f64>> {
        let k = self.num_states;
        if k == 1 {
            return vec![vec![0.0]];
        }
        let mut g = vec![vec![0.0; k]; k];
        for i in 0..k {
            for l in 0..k {
                g[i][l] = if i == l {
                    -self.holding_rates[i]
                } else {
                    self.holding_rates[i] * self.embedded[i][l]
                };
            }
        }
        g
    }

    /// Heavy-traffic time scaling: identical spec with holding rates `γ(i)/r²`.
    pub fn scale_holding_rates(&self, r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Validation(format!(
                "scaling parameter must be positive, got {r}"
            )));
        }
        let mut scaled = self.clone();
        for g in &mut scaled.holding_rates {
            *g /= r * r;
        }
        Ok(scaled)
    }

    /// Samples a right-continuous path on `[0, horizon]`.
    ///
    /// Holding times use inverse-CDF exponential sampling on uniform draws so
    /// paths are reproducible across platforms for a given stream. A
    /// single-state chain consumes no randomness.
    pub fn sample_path<R: Rng>(&self, horizon: f64, rng: &mut R) -> Result<EnvPath> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Validation(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let mut jump_times = vec![0.0];
        let mut states = vec![self.initial_state];
        if self.num_states > 1 {
            let mut t = 0.0;
            let mut state = self.initial_state;
            loop {
                let gamma = self.holding_rates[state - 1];
                let mut exp = -(1.0 - rng.random::<f64>()).ln();
                while exp == 0.0 {
                    exp = -(1.0 - rng.random::<f64>()).ln();
                }
                let hold = exp / gamma;
                if t + hold > horizon {
                    break;
                }
                t += hold;
                state = self.draw_next(state, rng);
                jump_times.push(t);
                states.push(state);
            }
        }
        EnvPath::new(jump_times, states, horizon)
    }

    fn draw_next<R: Rng>(&self, state: usize, rng: &mut R) -> usize {
        let row = &self.embedded[state - 1];
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for (l, q) in row.iter().enumerate() {
            cum += q;
            if u < cum {
                return l + 1;
            }
        }
        // u fell into row-sum rounding slack; take the last reachable state.
        row.iter()
            .rposition(|q| *q > 0.0)
            .map(|l| l + 1)
            .expect("embedded row of a multi-state chain has a positive entry")
    }
}

/// One sampled trajectory of the environment: piecewise-constant,
/// right-continuous with left limits. `states[k]` holds on
/// `[jump_times[k], jump_times[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvPath {
    jump_times: Vec<f64>,
    states: Vec<usize>,
    horizon: f64,
}

impl EnvPath {
    pub fn new(jump_times: Vec<f64>, states: Vec<usize>, horizon: f64) -> Result<Self> {
        if jump_times.is_empty() || jump_times[0] != 0.0 {
            return Err(Error::Validation("jump times must start at 0".into()));
        }
        if jump_times.len() != states.len() {
            return Err(Error::Dimension {
                expected: jump_times.len(),
                got: states.len(),
            });
        }
        for w in jump_times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Validation(format!(
                    "jump times not strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if *jump_times.last().unwrap() > horizon {
            return Err(Error::Validation("jump time beyond horizon".into()));
        }
        for w in states.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Validation(format!(
                    "consecutive states equal ({}) across a jump",
                    w[0]
                )));
            }
        }
        if states.iter().any(|s| *s < 1) {
            return Err(Error::Validation("state indices are 1-based".into()));
        }
        Ok(Self {
            jump_times,
            states,
            horizon,
        })
    }

    /// Path that never leaves `state`.
    pub fn constant(state: usize, horizon: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![state], horizon)
    }

    /// State at time `t`, right-continuous: `state_at(τ_k)` is the post-jump
    /// state.
    pub fn state_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Range(format!(
                "t={t} outside [0, {}]",
                self.horizon
            )));
        }
        let idx = self.jump_times.partition_point(|tau| *tau <= t) - 1;
        Ok(self.states[idx])
    }

    /// Jump times including `τ₀ = 0`.
    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn num_jumps(&self) -> usize {
        self.jump_times.len() - 1
    }

    /// Total time spent in `state` up to the horizon.
    pub fn occupancy(&self, state: usize) -> f64 {
        let mut total = 0.0;
        for k in 0..self.states.len() {
            let end = if k + 1 < self.jump_times.len() {
                self.jump_times[k + 1]
            } else {
                self.horizon
            };
            if self.states[k] == state {
                total += end - self.jump_times[k];
            }
        }
        total
    }
}
