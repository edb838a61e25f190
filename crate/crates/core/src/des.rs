//! Pre-limit discrete-event simulator of the physical queueing system.
//!
//! Arrivals follow per-user renewal reward streams whose rate and batch-size
//! distribution switch with the environment; service is head-of-line with
//! rates chosen by a scheduling policy and piecewise constant between
//! events. Distribution families are fixed by their first two moments:
//! gamma interarrivals and packet lengths (deterministic at zero SCV,
//! exponential at SCV one) and an integer batch-size family (deterministic,
//! shifted geometric, or two-point).

use crate::capacity::CapacityRegion;
use crate::env::EnvPath;
use crate::error::{Error, Result};
use crate::game::{generic_equilibrium, PriceMap, TwoUserPool, UtilitySpec};
use crate::rdrs::DiffusionParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma};
use std::collections::VecDeque;
use std::io::Write;

/// Mean-one base distribution with a given squared coefficient of variation.
#[derive(Debug, Clone)]
enum BaseDist {
    Deterministic,
    Gamma(Gamma<f64>),
}

impl BaseDist {
    fn with_scv(scv: f64) -> Result<Self> {
        if scv == 0.0 {
            return Ok(BaseDist::Deterministic);
        }
        if !(scv > 0.0) {
            return Err(Error::Validation(format!("SCV must be ≥ 0, got {scv}")));
        }
        // Gamma with shape 1/scv and scale scv has mean 1 and SCV scv.
        let g = Gamma::new(1.0 / scv, scv)
            .map_err(|e| Error::Validation(format!("gamma family: {e}")))?;
        Ok(BaseDist::Gamma(g))
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            BaseDist::Deterministic => 1.0,
            BaseDist::Gamma(g) => g.sample(rng),
        }
    }
}

/// Integer batch-size family matched to a mean and SCV.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchDist {
    Deterministic(u64),
    /// 1 + Geometric(p) on {0, 1, ...}; mean 1/p, SCV (m−1)/m.
    ShiftedGeometric { p: f64 },
    /// {a w.p. prob_a, b otherwise} with integer support.
    TwoPoint { a: u64, b: u64, prob_a: f64 },
}

impl BatchDist {
    /// Matches mean `m ≥ 1` and SCV `ζ²` exactly, preferring the simplest
    /// family.
    pub fn matched(mean: f64, scv: f64) -> Result<Self> {
        if !(mean >= 1.0) || !mean.is_finite() {
            return Err(Error::Validation(format!(
                "batch mean must be ≥ 1, got {mean}"
            )));
        }
        if !(scv >= 0.0) {
            return Err(Error::Validation(format!("batch SCV must be ≥ 0, got {scv}")));
        }
        let var = scv * mean * mean;
        if scv == 0.0 {
            if mean.fract() != 0.0 {
                return Err(Error::Validation(format!(
                    "deterministic batch size needs an integer mean, got {mean}"
                )));
            }
            return Ok(BatchDist::Deterministic(mean as u64));
        }
        let geometric_scv = (mean - 1.0) / mean;
        if (scv - geometric_scv).abs() <= 1e-12 {
            return Ok(BatchDist::ShiftedGeometric { p: 1.0 / mean });
        }
        // Two-point family on integers a < mean < b with
        // (mean − a)(b − mean) = var.
        let mut a = mean.floor() as i64;
        if a as f64 == mean {
            a -= 1;
        }
        while a >= 0 {
            let b = mean + var / (mean - a as f64);
            let b_round = b.round();
            if (b - b_round).abs() <= 1e-9 && b_round > mean {
                let prob_a = (b_round - mean) / (b_round - a as f64);
                return Ok(BatchDist::TwoPoint {
                    a: a as u64,
                    b: b_round as u64,
                    prob_a,
                });
            }
            a -= 1;
        }
        Err(Error::Validation(format!(
            "no integer two-point batch distribution matches mean {mean}, SCV {scv}"
        )))
    }

    pub fn mean(&self) -> f64 {
        match self {
            BatchDist::Deterministic(m) => *m as f64,
            BatchDist::ShiftedGeometric { p } => 1.0 / p,
            BatchDist::TwoPoint { a, b, prob_a } => {
                *a as f64 * prob_a + *b as f64 * (1.0 - prob_a)
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            BatchDist::Deterministic(m) => *m,
            BatchDist::ShiftedGeometric { p } => {
                // Inverse CDF of the geometric tail.
                let u: f64 = rng.random();
                1 + ((1.0 - u).ln() / (1.0 - p).ln()).floor() as u64
            }
            BatchDist::TwoPoint { a, b, prob_a } => {
                if rng.random::<f64>() < *prob_a {
                    *a
                } else {
                    *b
                }
            }
        }
    }
}

/// Batch arrival streams: per-user mean-one interarrival base (SCV α²),
/// per-state rates λ_j(i), and per-state batch rewards with mean m_j(i) and
/// SCV ζ_j².
#[derive(Debug, Clone)]
pub struct ArrivalSpec {
    pub lambda: Vec<Vec<f64>>,
    pub batch_mean: Vec<Vec<f64>>,
    pub alpha_sq: Vec<f64>,
    pub zeta_sq: Vec<f64>,
}

impl ArrivalSpec {
    pub fn from_diffusion(params: &DiffusionParams) -> Self {
        Self {
            lambda: params.lambda.clone(),
            batch_mean: params.m.clone(),
            alpha_sq: params.alpha_sq.clone(),
            zeta_sq: params.zeta_sq.clone(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.alpha_sq.len()
    }

    fn validate(&self) -> Result<()> {
        let j = self.num_users();
        if self.zeta_sq.len() != j {
            return Err(Error::Dimension {
                expected: j,
                got: self.zeta_sq.len(),
            });
        }
        for rows in [&self.lambda, &self.batch_mean] {
            for row in rows {
                if row.len() != j {
                    return Err(Error::Dimension {
                        expected: j,
                        got: row.len(),
                    });
                }
            }
        }
        for row in &self.lambda {
            if row.iter().any(|l| !(*l > 0.0)) {
                return Err(Error::Validation("arrival rates must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Per-user packet length distribution with mean 1/μ_j and SCV β_j².
#[derive(Debug, Clone)]
pub struct ServiceSpec {
    pub mu: Vec<f64>,
    pub beta_sq: Vec<f64>,
}

impl ServiceSpec {
    pub fn from_diffusion(params: &DiffusionParams) -> Self {
        Self {
            mu: params.mu.clone(),
            beta_sq: params.beta_sq.clone(),
        }
    }
}

/// One batch arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalEvent {
    pub time: f64,
    pub user: usize,
    pub batch: u64,
}

/// Samples the merged batch arrival streams on `[0, horizon]`. Interarrival
/// times are the mean-one base draw divided by the rate of the state at the
/// moment the clock starts; batch sizes use that state's reward
/// distribution. Each user draws from an independent substream derived from
/// `rng`, so the merge order cannot perturb the draws.
pub fn sample_tsrrp<R: Rng>(
    spec: &ArrivalSpec,
    env_path: &EnvPath,
    horizon: f64,
    rng: &mut R,
) -> Result<Vec<ArrivalEvent>> {
    if !(horizon > 0.0) {
        return Err(Error::Validation(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if env_path.horizon() < horizon {
        return Err(Error::Range(
            "environment path does not cover the horizon".into(),
        ));
    }
    spec.validate()?;
    let states = env_path.states().iter().map(|s| *s - 1).collect::<Vec<_>>();
    let num_states = states.iter().copied().max().unwrap_or(0) + 1;
    let mut batch_dists = Vec::with_capacity(num_states);
    for i in 0..num_states {
        let row = spec
            .batch_mean
            .get(i)
            .ok_or_else(|| Error::Validation("batch means missing a state row".into()))?;
        let mut per_user = Vec::with_capacity(spec.num_users());
        for (j, mean) in row.iter().enumerate() {
            per_user.push(BatchDist::matched(*mean, spec.zeta_sq[j])?);
        }
        batch_dists.push(per_user);
    }

    let mut events = Vec::new();
    for j in 0..spec.num_users() {
        let mut user_rng = ChaCha12Rng::from_seed(derive_seed(rng));
        let base = BaseDist::with_scv(spec.alpha_sq[j])?;
        let mut t = 0.0;
        loop {
            let state = env_path.state_at(t)? - 1;
            let rate = spec.lambda[state][j];
            let gap = base.sample(&mut user_rng) / rate;
            t += gap;
            if t > horizon {
                break;
            }
            let state_at_arrival = env_path.state_at(t)? - 1;
            let batch = batch_dists[state_at_arrival][j].sample(&mut user_rng);
            events.push(ArrivalEvent {
                time: t,
                user: j,
                batch,
            });
        }
    }
    events.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .unwrap()
            .then(a.user.cmp(&b.user))
    });
    Ok(events)
}

fn derive_seed<R: Rng>(rng: &mut R) -> [u8; 32] {
    let mut seed = [0u8; 32];
    rng.fill(&mut seed);
    seed
}

/// Scheduling policy: prices from the queue state, rates from the valued
/// queues. Rates must stay inside the state's capacity region; the engine
/// never drains empty queues regardless of the assigned rate.
pub trait SchedulingPolicy {
    fn prices(&self, queues: &[f64], state: usize) -> Vec<f64>;
    fn rates(&self, valued_queues: &[f64], state: usize) -> Result<Vec<f64>>;
}

/// The game-based policy for the two-user pool: dynamic prices through the
/// clamped inverse map and rates from the mixed-game equilibrium.
pub struct GameSchedulingPolicy {
    pub utilities: UtilitySpec,
    pub regions: Vec<CapacityRegion>,
    pub pool: TwoUserPool,
    pub map: PriceMap,
    pub rho: Vec<Vec<f64>>,
    pub selection_size: usize,
}

impl SchedulingPolicy for GameSchedulingPolicy {
    fn prices(&self, queues: &[f64], _state: usize) -> Vec<f64> {
        let w: f64 = queues
            .iter()
            .zip(&self.pool.mu)
            .map(|(q, mu)| q / mu)
            .sum();
        self.map.clamp(&self.pool.raw_prices(queues[0], w))
    }

    fn rates(&self, valued_queues: &[f64], state: usize) -> Result<Vec<f64>> {
        let (c, _) = generic_equilibrium(
            &self.utilities,
            &self.regions[state - 1],
            valued_queues,
            self.selection_size,
            &self.rho[state - 1],
        )?;
        Ok(c)
    }
}

/// Fixed prices and rates; the test/baseline policy.
pub struct ConstantPolicy {
    pub price: Vec<f64>,
    pub rate: Vec<f64>,
}

impl SchedulingPolicy for ConstantPolicy {
    fn prices(&self, _queues: &[f64], _state: usize) -> Vec<f64> {
        self.price.clone()
    }

    fn rates(&self, _valued_queues: &[f64], _state: usize) -> Result<Vec<f64>> {
        Ok(self.rate.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrival,
    Departure,
    EnvJump,
    Horizon,
}

/// Snapshot recorded at every event epoch.
#[derive(Debug, Clone)]
pub struct TraceEvent {
    pub t: f64,
    pub kind: EventKind,
    pub user: Option<usize>,
    /// Packet counts per user.
    pub queues: Vec<u64>,
    pub arrivals: Vec<u64>,
    pub departures: Vec<u64>,
    /// Cumulative effective service per user.
    pub service: Vec<f64>,
    /// Expected workload Σ Q_j/μ_j.
    pub workload: f64,
    /// Residual workload: summed remaining packet lengths.
    pub residual: f64,
    pub state: usize,
}

/// Event-time series of the physical system.
#[derive(Debug, Clone)]
pub struct SystemTrace {
    pub events: Vec<TraceEvent>,
    pub horizon: f64,
    pub num_users: usize,
    /// Cumulative packet-length prefix sums per user, for the
    /// `D_j = S_j(T_j)` time-change identity.
    pub length_prefix: Vec<Vec<f64>>,
}

impl SystemTrace {
    /// Queue vector at time `t` (right-continuous step function).
    pub fn queues_at(&self, t: f64) -> Result<Vec<u64>> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Range(format!("t={t} outside [0, {}]", self.horizon)));
        }
        let idx = self.events.partition_point(|e| e.t <= t);
        Ok(self.events[idx.saturating_sub(1)].queues.clone())
    }

    /// Number of user-`j` packets a cumulative service of `h` completes.
    pub fn service_count(&self, j: usize, h: f64) -> u64 {
        self.length_prefix[j].partition_point(|s| *s <= h + 1e-9) as u64
    }

    /// CSV dump: `t,user,event_kind,queue_len,workload,env_state`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,user,event_kind,queue_len,workload,env_state")?;
        for e in &self.events {
            let kind = match e.kind {
                EventKind::Arrival => "arrival",
                EventKind::Departure => "departure",
                EventKind::EnvJump => "env_jump",
                EventKind::Horizon => "horizon",
            };
            let (user, qlen) = match e.user {
                Some(j) => ((j + 1).to_string(), e.queues[j].to_string()),
                None => (String::new(), e.queues.iter().sum::<u64>().to_string()),
            };
            writeln!(out, "{},{},{},{},{},{}", e.t, user, kind, qlen, e.workload, e.state)?;
        }
        Ok(())
    }
}

struct UserState {
    packets: VecDeque<f64>,
    arrivals: u64,
    departures: u64,
    service: f64,
    consumed_lengths: f64,
}

/// Runs the event-driven simulation on `[0, horizon]`.
///
/// Rates are piecewise constant between events and recomputed at every
/// arrival, departure, and environment jump. `initial_queues` packets per
/// user are enqueued at time zero with freshly drawn lengths.
pub fn simulate_queueing<R: Rng>(
    arrivals: &ArrivalSpec,
    services: &ServiceSpec,
    policy: &dyn SchedulingPolicy,
    region_per_state: &[CapacityRegion],
    env_path: &EnvPath,
    horizon: f64,
    initial_queues: &[u64],
    rng: &mut R,
) -> Result<SystemTrace> {
    let users = arrivals.num_users();
    if services.mu.len() != users || initial_queues.len() != users {
        return Err(Error::Dimension {
            expected: users,
            got: services.mu.len().min(initial_queues.len()),
        });
    }
    let stream = sample_tsrrp(arrivals, env_path, horizon, rng)?;
    let mut length_rngs: Vec<ChaCha12Rng> = (0..users)
        .map(|_| ChaCha12Rng::from_seed(derive_seed(rng)))
        .collect();
    let length_dists: Vec<(BaseDist, f64)> = (0..users)
        .map(|j| Ok((BaseDist::with_scv(services.beta_sq[j])?, 1.0 / services.mu[j])))
        .collect::<Result<_>>()?;

    let mut state: Vec<UserState> = (0..users)
        .map(|_| UserState {
            packets: VecDeque::new(),
            arrivals: 0,
            departures: 0,
            service: 0.0,
            consumed_lengths: 0.0,
        })
        .collect();
    let mut length_prefix: Vec<Vec<f64>> = vec![Vec::new(); users];
    let mut draw_length = |j: usize,
                           rngs: &mut Vec<ChaCha12Rng>,
                           prefix: &mut Vec<Vec<f64>>|
     -> f64 {
        let (base, mean) = &length_dists[j];
        let len = base.sample(&mut rngs[j]) * mean;
        let last = prefix[j].last().copied().unwrap_or(0.0);
        prefix[j].push(last + len);
        len
    };
    for j in 0..users {
        for _ in 0..initial_queues[j] {
            let len = draw_length(j, &mut length_rngs, &mut length_prefix);
            state[j].packets.push_back(len);
        }
    }

    let mut t = 0.0;
    let mut env_state = env_path.state_at(0.0)?;
    let mut next_jump_idx = 1;
    let mut arrival_idx = 0;
    let mut events: Vec<TraceEvent> = Vec::new();

    let compute_rates = |state: &[UserState], env_state: usize, t: f64| -> Result<Vec<f64>> {
        let queues: Vec<f64> = state.iter().map(|u| u.packets.len() as f64).collect();
        let prices = policy.prices(&queues, env_state);
        let valued: Vec<f64> = queues.iter().zip(&prices).map(|(q, p)| q * p).collect();
        let raw = policy.rates(&valued, env_state)?;
        let region = &region_per_state[env_state - 1];
        if !region.contains(&raw)? {
            return Err(Error::PolicyViolation { t, rates: raw });
        }
        Ok(raw)
    };
    let mut rates = compute_rates(&state, env_state, t)?;

    let record = |events: &mut Vec<TraceEvent>,
                  state: &[UserState],
                  services: &ServiceSpec,
                  t: f64,
                  kind: EventKind,
                  user: Option<usize>,
                  env_state: usize| {
        let queues: Vec<u64> = state.iter().map(|u| u.packets.len() as u64).collect();
        let workload: f64 = queues
            .iter()
            .zip(&services.mu)
            .map(|(q, mu)| *q as f64 / mu)
            .sum();
        let residual: f64 = state.iter().map(|u| u.packets.iter().sum::<f64>()).sum();
        events.push(TraceEvent {
            t,
            kind,
            user,
            queues,
            arrivals: state.iter().map(|u| u.arrivals).collect(),
            departures: state.iter().map(|u| u.departures).collect(),
            service: state.iter().map(|u| u.service).collect(),
            workload,
            residual,
            state: env_state,
        });
    };
    record(&mut events, &state, services, 0.0, EventKind::Horizon, None, env_state);

    loop {
        // Next departure: empty queues drain nothing.
        let mut dep_time = f64::INFINITY;
        let mut dep_user = usize::MAX;
        for j in 0..users {
            if let Some(head) = state[j].packets.front() {
                if rates[j] > 0.0 {
                    let eta = t + head / rates[j];
                    if eta < dep_time {
                        dep_time = eta;
                        dep_user = j;
                    }
                }
            }
        }
        let arr_time = stream
            .get(arrival_idx)
            .map(|e| e.time)
            .unwrap_or(f64::INFINITY);
        let jump_time = env_path
            .jump_times()
            .get(next_jump_idx)
            .copied()
            .unwrap_or(f64::INFINITY);

        // Checked in ascending tie priority; exact ties resolve to the last
        // assignment: departure before arrival before jump before horizon.
        let mut event_time = horizon;
        let mut kind = EventKind::Horizon;
        if jump_time <= event_time {
            event_time = jump_time;
            kind = EventKind::EnvJump;
        }
        if arr_time <= event_time {
            event_time = arr_time;
            kind = EventKind::Arrival;
        }
        if dep_time <= event_time {
            event_time = dep_time;
            kind = EventKind::Departure;
        }

        // Drain work at the current rates up to the event epoch.
        let dt = event_time - t;
        if dt > 0.0 {
            for j in 0..users {
                if let Some(head) = state[j].packets.front_mut() {
                    if rates[j] > 0.0 {
                        let amount = rates[j] * dt;
                        *head = (*head - amount).max(0.0);
                        state[j].service += amount;
                    }
                }
            }
        }
        t = event_time;

        match kind {
            EventKind::Horizon => {
                record(&mut events, &state, services, horizon, EventKind::Horizon, None, env_state);
                break;
            }
            EventKind::Departure => {
                let j = dep_user;
                state[j].packets.pop_front();
                state[j].departures += 1;
                state[j].consumed_lengths = length_prefix[j][state[j].departures as usize - 1];
                // Align cumulative service with the consumed lengths against
                // drift from the rate integration.
                state[j].service = state[j].consumed_lengths;
                record(&mut events, &state, services, t, kind, Some(j), env_state);
            }
            EventKind::Arrival => {
                let ev = &stream[arrival_idx];
                arrival_idx += 1;
                for _ in 0..ev.batch {
                    let len = draw_length(ev.user, &mut length_rngs, &mut length_prefix);
                    state[ev.user].packets.push_back(len);
                }
                state[ev.user].arrivals += ev.batch;
                record(&mut events, &state, services, t, kind, Some(ev.user), env_state);
            }
            EventKind::EnvJump => {
                env_state = env_path.states()[next_jump_idx];
                next_jump_idx += 1;
                record(&mut events, &state, services, t, kind, None, env_state);
            }
        }
        rates = compute_rates(&state, env_state, t)?;
    }

    Ok(SystemTrace {
        events,
        horizon,
        num_users: users,
        length_prefix,
    })
}

/// Heavy-traffic arrival rates: `λʳ_j(i) = λ_j(i) + θ_j(i)/(r·m_j(i))`.
pub fn heavy_traffic_rates(base: &DiffusionParams, r: f64) -> Result<Vec<Vec<f64>>> {
    if !(r > 0.0) {
        return Err(Error::Validation(format!("r must be positive, got {r}")));
    }
    let mut out = Vec::with_capacity(base.lambda.len());
    for i in 0..base.lambda.len() {
        let mut row = Vec::with_capacity(base.mu.len());
        for j in 0..base.mu.len() {
            let rate = base.lambda[i][j] + base.theta[i][j] / (r * base.m[i][j]);
            if !(rate > 0.0) {
                return Err(Error::Validation(format!(
                    "scaled arrival rate for user {} in state {} is {rate} ≤ 0",
                    j + 1,
                    i + 1
                )));
            }
            row.push(rate);
        }
        out.push(row);
    }
    Ok(out)
}

/// Time–space rescaled queue and workload series evaluated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSeries {
    pub times: Vec<f64>,
    pub queues: Vec<Vec<f64>>,
    pub workload: Vec<f64>,
}

fn scale_trace(trace: &SystemTrace, r: f64, times: &[f64], space: f64) -> Result<ScaledSeries> {
    if !(r > 0.0) {
        return Err(Error::Validation(format!("r must be positive, got {r}")));
    }
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    if trace.horizon < r * r * t_max - 1e-9 {
        return Err(Error::Range(format!(
            "trace horizon {} shorter than r²·t_max = {}",
            trace.horizon,
            r * r * t_max
        )));
    }
    let mut queues = Vec::with_capacity(times.len());
    let mut workload = Vec::with_capacity(times.len());
    for &t in times {
        let phys = (r * r * t).min(trace.horizon);
        let idx = trace.events.partition_point(|e| e.t <= phys);
        let event = &trace.events[idx.saturating_sub(1)];
        queues.push(event.queues.iter().map(|v| *v as f64 / space).collect());
        workload.push(event.workload / space);
    }
    Ok(ScaledSeries {
        times: times.to_vec(),
        queues,
        workload,
    })
}

/// Diffusion scaling `Q̂ʳ(t) = Q(r²t)/r` on the given grid.
pub fn diffusion_scale(trace: &SystemTrace, r: f64, times: &[f64]) -> Result<ScaledSeries> {
    scale_trace(trace, r, times, r)
}

/// Fluid scaling `Q̄ʳ(t) = Q(r²t)/r²` on the given grid.
pub fn fluid_scale(trace: &SystemTrace, r: f64, times: &[f64]) -> Result<ScaledSeries> {
    scale_trace(trace, r, times, r * r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_state_env(horizon: f64) -> EnvPath {
        EnvPath::constant(1, horizon).unwrap()
    }

    #[test]
    fn batch_family_matches_moments() {
        assert_eq!(BatchDist::matched(3.0, 0.0).unwrap(), BatchDist::Deterministic(3));
        // Mean 3, SCV 1 needs the two-point family {2, 12}.
        let d = BatchDist::matched(3.0, 1.0).unwrap();
        match d {
            BatchDist::TwoPoint { a, b, prob_a } => {
                let mean = a as f64 * prob_a + b as f64 * (1.0 - prob_a);
                let var = prob_a * (a as f64 - mean).powi(2)
                    + (1.0 - prob_a) * (b as f64 - mean).powi(2);
                assert_relative_eq!(mean, 3.0, max_relative = 1e-12);
                assert_relative_eq!(var, 9.0, max_relative = 1e-9);
            }
            other => panic!("expected two-point, got {other:?}"),
        }
        // Mean 1, SCV 2 → {0, 3}.
        let d = BatchDist::matched(1.0, 2.0).unwrap();
        match d {
            BatchDist::TwoPoint { a, b, prob_a } => {
                assert_eq!((a, b), (0, 3));
                assert_relative_eq!(prob_a, 2.0 / 3.0, max_relative = 1e-12);
            }
            other => panic!("expected two-point, got {other:?}"),
        }
        // The geometric SCV (m−1)/m selects the shifted geometric.
        let d = BatchDist::matched(4.0, 0.75).unwrap();
        assert_eq!(d, BatchDist::ShiftedGeometric { p: 0.25 });
    }

    #[test]
    fn deterministic_renewal_counts_exactly() {
        let spec = ArrivalSpec {
            lambda: vec![vec![2.0]],
            batch_mean: vec![vec![1.0]],
            alpha_sq: vec![0.0],
            zeta_sq: vec![0.0],
        };
        let env = single_state_env(10.0);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let events = sample_tsrrp(&spec, &env, 10.0, &mut rng).unwrap();
        assert_eq!(events.len(), 20);
        for (k, e) in events.iter().enumerate() {
            assert_relative_eq!(e.time, 0.5 * (k as f64 + 1.0), max_relative = 1e-12);
            assert_eq!(e.batch, 1);
        }
    }

    #[test]
    fn zero_variance_rewards_are_constant() {
        let spec = ArrivalSpec {
            lambda: vec![vec![5.0]],
            batch_mean: vec![vec![3.0]],
            alpha_sq: vec![1.0],
            zeta_sq: vec![0.0],
        };
        let env = single_state_env(50.0);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let events = sample_tsrrp(&spec, &env, 50.0, &mut rng).unwrap();
        assert!(events.iter().all(|e| e.batch == 3));
        assert!(events.windows(2).all(|w| w[0].time < w[1].time));
    }

    #[test]
    fn long_run_reward_rate_matches_renewal_reward_clt() {
        let (lambda, mean, alpha_sq, zeta_sq) = (10.0 / 3.0, 3.0, 10.0, 1.0);
        let spec = ArrivalSpec {
            lambda: vec![vec![lambda]],
            batch_mean: vec![vec![mean]],
            alpha_sq: vec![alpha_sq],
            zeta_sq: vec![zeta_sq],
        };
        let horizon = 1.0e4;
        let env = single_state_env(horizon);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let events = sample_tsrrp(&spec, &env, horizon, &mut rng).unwrap();
        let total: f64 = events.iter().map(|e| e.batch as f64).sum();
        let rate = total / horizon;
        // Renewal-reward CLT variance rate λm²(ζ² + α²).
        let se = (lambda * mean * mean * (zeta_sq + alpha_sq) / horizon).sqrt();
        assert!(
            (rate - lambda * mean).abs() <= 3.0 * se,
            "rate {rate} vs {} ± {}",
            lambda * mean,
            3.0 * se
        );
    }

    fn unit_region(dim: usize, cap: f64) -> Vec<CapacityRegion> {
        vec![CapacityRegion::from_caps(&vec![cap; dim], cap * dim as f64).unwrap()]
    }

    #[test]
    fn hand_simulated_single_queue_trace() {
        // Deterministic unit packets at rate 1, served at rate 2: each packet
        // departs half a time unit after it arrives; the queue never exceeds
        // one.
        let arrivals = ArrivalSpec {
            lambda: vec![vec![1.0]],
            batch_mean: vec![vec![1.0]],
            alpha_sq: vec![0.0],
            zeta_sq: vec![0.0],
        };
        let services = ServiceSpec {
            mu: vec![1.0],
            beta_sq: vec![0.0],
        };
        let policy = ConstantPolicy {
            price: vec![1.0],
            rate: vec![2.0],
        };
        let env = single_state_env(10.0);
        let regions = unit_region(1, 2.0);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let trace = simulate_queueing(
            &arrivals, &services, &policy, &regions, &env, 10.0, &[0], &mut rng,
        )
        .unwrap();
        let mut max_q = 0;
        for e in &trace.events {
            max_q = max_q.max(e.queues[0]);
        }
        assert_eq!(max_q, 1);
        let last = trace.events.last().unwrap();
        // Arrivals at 1..9 have all departed by t=10; the packet arriving
        // at t=10 is still queued at the horizon record.
        assert_eq!(last.arrivals[0], 10);
        assert_eq!(last.departures[0], 9);
        for e in &trace.events {
            if e.kind == EventKind::Departure {
                assert_relative_eq!(e.t.fract(), 0.5, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn conservation_and_workload_identities_hold() {
        let arrivals = ArrivalSpec {
            lambda: vec![vec![3.0, 2.0]],
            batch_mean: vec![vec![2.0, 1.0]],
            alpha_sq: vec![1.0, 0.5],
            zeta_sq: vec![0.5, 0.0],
        };
        let services = ServiceSpec {
            mu: vec![0.5, 1.0],
            beta_sq: vec![1.0, 2.0],
        };
        let policy = ConstantPolicy {
            price: vec![1.0, 1.0],
            rate: vec![3.0, 1.5],
        };
        let env = single_state_env(200.0);
        let regions = vec![CapacityRegion::from_caps(&[3.0, 1.5], 4.5).unwrap()];
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let trace = simulate_queueing(
            &arrivals, &services, &policy, &regions, &env, 200.0, &[2, 0], &mut rng,
        )
        .unwrap();
        let initial = [2u64, 0];
        for e in &trace.events {
            for j in 0..2 {
                // Q = Q(0) + A − D, exact in integers.
                assert_eq!(e.queues[j], initial[j] + e.arrivals[j] - e.departures[j]);
            }
            let expect_w: f64 = e.queues[0] as f64 / 0.5 + e.queues[1] as f64 / 1.0;
            assert!((e.workload - expect_w).abs() <= 1e-9);
        }
        // Time-change identity D_j = S_j(T_j) at every event.
        for e in &trace.events {
            for j in 0..2 {
                assert_eq!(e.departures[j], trace.service_count(j, e.service[j]));
            }
        }
    }

    #[test]
    fn policy_violations_are_reported_with_the_rate_vector() {
        let arrivals = ArrivalSpec {
            lambda: vec![vec![1.0]],
            batch_mean: vec![vec![1.0]],
            alpha_sq: vec![0.0],
            zeta_sq: vec![0.0],
        };
        let services = ServiceSpec {
            mu: vec![1.0],
            beta_sq: vec![0.0],
        };
        let policy = ConstantPolicy {
            price: vec![1.0],
            rate: vec![5.0],
        };
        let env = single_state_env(5.0);
        let regions = unit_region(1, 2.0);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let err = simulate_queueing(
            &arrivals, &services, &policy, &regions, &env, 5.0, &[0], &mut rng,
        )
        .unwrap_err();
        match err {
            Error::PolicyViolation { rates, .. } => assert_eq!(rates, vec![5.0]),
            other => panic!("expected policy violation, got {other}"),
        }
    }

    #[test]
    fn no_arrival_system_stays_empty() {
        // Rate floor keeps λ > 0; an empty initial system with a horizon
        // shorter than the first arrival sees no events.
        let arrivals = ArrivalSpec {
            lambda: vec![vec![1e-6]],
            batch_mean: vec![vec![1.0]],
            alpha_sq: vec![0.0],
            zeta_sq: vec![0.0],
        };
        let services = ServiceSpec {
            mu: vec![1.0],
            beta_sq: vec![0.0],
        };
        let policy = ConstantPolicy {
            price: vec![1.0],
            rate: vec![1.0],
        };
        let env = single_state_env(10.0);
        let regions = unit_region(1, 2.0);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let trace = simulate_queueing(
            &arrivals, &services, &policy, &regions, &env, 10.0, &[0], &mut rng,
        )
        .unwrap();
        for e in &trace.events {
            assert_eq!(e.queues[0], 0);
            assert_eq!(e.departures[0], 0);
            assert_eq!(e.workload, 0.0);
            // Effective service never accrues on an empty queue.
            assert_eq!(e.service[0], 0.0);
        }
    }

    #[test]
    fn heavy_traffic_rate_examples() {
        let params = crate::rdrs::DiffusionParams {
            lambda: vec![vec![10.0 / 3.0]],
            m: vec![vec![3.0]],
            theta: vec![vec![-1.0]],
            rho: vec![vec![1000.0]],
            mu: vec![0.1],
            alpha_sq: vec![10.0],
            zeta_sq: vec![1.0],
            beta_sq: vec![10.0],
        };
        let rates = heavy_traffic_rates(&params, 10.0).unwrap();
        assert_relative_eq!(rates[0][0], 10.0 / 3.0 - 1.0 / 30.0, max_relative = 1e-12);
        // θ = 0 keeps the nominal rate exactly.
        let mut zero = params.clone();
        zero.theta = vec![vec![0.0]];
        assert_eq!(heavy_traffic_rates(&zero, 7.0).unwrap()[0][0], 10.0 / 3.0);
        // r → ∞ recovers the nominal rate.
        let big = heavy_traffic_rates(&params, 1e6).unwrap();
        assert!((big[0][0] - 10.0 / 3.0).abs() / (10.0 / 3.0) < 1e-5);
        // A drift large enough to flip the sign is rejected.
        let mut bad = params;
        bad.theta = vec![vec![-100.0]];
        assert!(heavy_traffic_rates(&bad, 1.0).is_err());
    }

    fn tiny_trace() -> SystemTrace {
        let arrivals = ArrivalSpec {
            lambda: vec![vec![1.0]],
            batch_mean: vec![vec![1.0]],
            alpha_sq: vec![1.0],
            zeta_sq: vec![0.0],
        };
        let services = ServiceSpec {
            mu: vec![1.0],
            beta_sq: vec![1.0],
        };
        let policy = ConstantPolicy {
            price: vec![1.0],
            rate: vec![1.5],
        };
        let env = single_state_env(100.0);
        let regions = unit_region(1, 2.0);
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        simulate_queueing(
            &arrivals, &services, &policy, &regions, &env, 100.0, &[3], &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn scaling_identities() {
        let trace = tiny_trace();
        let grid: Vec<f64> = (0..=20).map(|i| 100.0 * i as f64 / 20.0).collect();
        // r = 1 is the identity on the grid.
        let d = diffusion_scale(&trace, 1.0, &grid).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            assert_eq!(
                d.queues[i][0],
                trace.queues_at(t).unwrap()[0] as f64
            );
        }
        // Fluid vs diffusion differ by the extra r factor.
        let short: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let r = 3.0;
        let diff = diffusion_scale(&trace, r, &short).unwrap();
        let fluid = fluid_scale(&trace, r, &short).unwrap();
        for i in 0..short.len() {
            assert_relative_eq!(diff.queues[i][0] / r, fluid.queues[i][0], epsilon = 1e-12);
        }
        // Insufficient horizon is a range error.
        assert!(diffusion_scale(&trace, 100.0, &short).is_err());
    }

    #[test]
    fn trace_csv_has_expected_columns() {
        let trace = tiny_trace();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,user,event_kind,queue_len,workload,env_state"
        );
        assert!(text.lines().count() > 10);
    }
}
