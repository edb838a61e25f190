//! Paired Monte Carlo policy comparisons.
//!
//! Every replication drives all policy arms with the same environment path
//! and the same Brownian increments (common random numbers); the mean total
//! cost difference (MTCD) series between the dynamic-pricing arm and a
//! baseline arm is therefore a low-variance paired estimator. Replication
//! substreams are derived from the master seed by hashing, so adding
//! replications never perturbs earlier ones, and the reduction is performed
//! in a fixed order independent of the thread count.

use crate::env::{EnvPath, MarkovEnvSpec};
use crate::error::{Error, Result};
use crate::game::{
    resolve_workload_state, DualCostSpec, FixedPointSettings, PriceMap, PriceRule, QueueSolver,
};
use crate::rdrs::DiffusionParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

/// Replications are reduced in fixed chunks of this size; the merge order
/// never depends on the thread count.
const REDUCTION_CHUNK: usize = 64;

/// Constants of the fixed comparison price map
/// `P_j = lower_j + a_j/(b_j + √Q_j)`.
pub const ARBITRARY_MAP_CONSTANTS: [(f64, f64); 2] = [(20.0, 0.05), (30.0, 0.1)];

/// Which experiment a configuration drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleId {
    /// Two-user single pool.
    One,
    /// Three-user single pool with a selection stage.
    Two,
}

/// A comparison arm.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyVariant {
    /// The dynamic-pricing game policy compared against itself.
    GameDynamic,
    ConstantPrice { price: Vec<f64> },
    /// Two-dimensional reflected-queue baseline at constant price one.
    TwoDQueue,
    /// Fixed decreasing price map applied to the dynamic arm's queues.
    ArbitraryDynamic { lower: Vec<f64> },
    /// Uniformly random pair selection with the branch price maps.
    RandomPooling,
}

impl PolicyVariant {
    pub fn tag(&self) -> &'static str {
        match self {
            PolicyVariant::GameDynamic => "self",
            PolicyVariant::ConstantPrice { .. } => "constant",
            PolicyVariant::TwoDQueue => "2dqueue",
            PolicyVariant::ArbitraryDynamic { .. } => "arbitrary",
            PolicyVariant::RandomPooling => "pooling",
        }
    }
}

/// Full parameter set of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub example: ExampleId,
    pub replications: usize,
    pub horizon: f64,
    pub steps: usize,
    pub master_seed: u64,
    pub env: MarkovEnvSpec,
    pub diffusion: DiffusionParams,
    pub price_map: PriceMap,
    pub solver: QueueSolver,
    pub baselines: Vec<PolicyVariant>,
    /// Componentwise floor applied to the queue split.
    pub queue_lower: Vec<f64>,
}

impl ExperimentConfig {
    pub fn num_users(&self) -> usize {
        self.solver.num_users()
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 || self.steps == 0 || !(self.horizon > 0.0) {
            return Err(Error::Validation(
                "replications ≥ 1, steps ≥ 1, horizon > 0 required".into(),
            ));
        }
        self.diffusion.validate()?;
        let users = self.num_users();
        let expected = match self.example {
            ExampleId::One => 2,
            ExampleId::Two => 3,
        };
        if users != expected {
            return Err(Error::Validation(format!(
                "example {:?} needs {expected} users, got {users}",
                self.example
            )));
        }
        if self.diffusion.num_users() != users
            || self.price_map.num_users() != users
            || self.queue_lower.len() != users
        {
            return Err(Error::Dimension {
                expected: users,
                got: self.diffusion.num_users(),
            });
        }
        if self.diffusion.num_states() < self.env.num_states() {
            return Err(Error::Dimension {
                expected: self.env.num_states(),
                got: self.diffusion.num_states(),
            });
        }
        for baseline in &self.baselines {
            self.check_baseline(baseline)?;
        }
        Ok(())
    }

    fn check_baseline(&self, baseline: &PolicyVariant) -> Result<()> {
        match (baseline, self.example) {
            (PolicyVariant::TwoDQueue, ExampleId::Two) => Err(Error::Validation(
                "the 2dqueue baseline needs the two-user example".into(),
            )),
            (PolicyVariant::ArbitraryDynamic { .. }, ExampleId::Two) => Err(Error::Validation(
                "the arbitrary baseline needs the two-user example".into(),
            )),
            (PolicyVariant::RandomPooling, ExampleId::One) => Err(Error::Validation(
                "the pooling baseline needs the three-user example".into(),
            )),
            (PolicyVariant::ConstantPrice { price }, _) if price.len() != self.num_users() => {
                Err(Error::Dimension {
                    expected: self.num_users(),
                    got: price.len(),
                })
            }
            _ => Ok(()),
        }
    }

    fn dual_costs(&self) -> DualCostSpec {
        let kinds = match self.example {
            ExampleId::One => crate::game::TwoUserPool::KINDS.to_vec(),
            ExampleId::Two => crate::game::ThreeUserPool::KINDS.to_vec(),
        };
        DualCostSpec::new(kinds, self.solver.mu().to_vec()).expect("validated mu")
    }
}

/// Mean total cost difference series with paired standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MtcdSeries {
    pub times: Vec<f64>,
    pub mtcd: Vec<f64>,
    pub stderr: Vec<f64>,
    pub mean_dynamic: Vec<f64>,
    pub mean_baseline: Vec<f64>,
}

impl MtcdSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,mtcd,stderr,mean_cost_dynamic,mean_cost_baseline`,
    /// LF endings, shortest round-trip float formatting.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,mtcd,stderr,mean_cost_dynamic,mean_cost_baseline")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.times[i],
                self.mtcd[i],
                self.stderr[i],
                self.mean_dynamic[i],
                self.mean_baseline[i]
            )?;
        }
        Ok(())
    }
}

/// Derives an independent substream for `(master seed, replication, lane)`.
pub fn substream(master: u64, replication: u64, lane: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"rdrs-lab.stream.v1");
    hasher.update(master.to_le_bytes());
    hasher.update(replication.to_le_bytes());
    hasher.update((lane.len() as u64).to_le_bytes());
    hasher.update(lane.as_bytes());
    ChaCha12Rng::from_seed(hasher.finalize().into())
}

/// Per-step shared Brownian increments (already scaled by √Δt).
struct StepNoise {
    db_e: Vec<f64>,
    db_s: Vec<f64>,
}

fn draw_noise<R: Rng>(rng: &mut R, users: usize, steps: usize, dt: f64) -> Vec<StepNoise> {
    let normal = StandardNormal;
    let sqrt_dt = dt.sqrt();
    (0..steps)
        .map(|_| {
            let db_e = (0..users)
                .map(|_| {
                    let z: f64 = normal.sample(rng);
                    z * sqrt_dt
                })
                .collect();
            let db_s = (0..users)
                .map(|_| {
                    let z: f64 = normal.sample(rng);
                    z * sqrt_dt
                })
                .collect();
            StepNoise { db_e, db_s }
        })
        .collect()
}

/// How a priced arm resolves its per-step prices/selection.
enum ArmMode {
    Dynamic,
    Constant { price: Vec<f64> },
    Pooling { rng: ChaCha12Rng },
}

/// One policy arm driving its own workload diffusion.
struct PricedArm<'a> {
    cfg: &'a ExperimentConfig,
    mode: ArmMode,
    w: f64,
    q: Vec<f64>,
    p: Vec<f64>,
    selected: Vec<usize>,
}

impl<'a> PricedArm<'a> {
    fn new(cfg: &'a ExperimentConfig, mode: ArmMode) -> Self {
        let users = cfg.num_users();
        let p = match &mode {
            ArmMode::Constant { price } => price.clone(),
            _ => cfg.price_map.clamp(cfg.price_map.initial()),
        };
        Self {
            cfg,
            mode,
            w: 0.0,
            q: vec![0.0; users],
            p,
            selected: (0..users).collect(),
        }
    }

    fn step(&mut self, state: usize, noise: &StepNoise, dt: f64) -> Result<()> {
        let coeffs = self.cfg.diffusion.build_workload_coeffs(state, &self.selected);
        let mut dx = coeffs.drift * dt;
        for j in 0..self.q.len() {
            dx += coeffs.sigma_e[j] * coeffs.gamma_e[j].sqrt() * noise.db_e[j];
            dx += coeffs.sigma_s[j] * coeffs.gamma_s[j].sqrt() * noise.db_s[j];
        }
        self.w = (self.w + dx).max(0.0);

        let settings = FixedPointSettings::default();
        let resolved = match &mut self.mode {
            ArmMode::Dynamic => resolve_workload_state(
                &self.cfg.solver,
                &self.cfg.price_map,
                self.w,
                &self.p,
                None,
                &settings,
            )?,
            ArmMode::Constant { price } => {
                let res = self.cfg.solver.solve(price, self.w, None)?;
                crate::game::ResolvedState {
                    q: res.q_star,
                    p: price.clone(),
                    selected: res.selected,
                    converged: true,
                    iterations: 1,
                }
            }
            ArmMode::Pooling { rng } => {
                let pair = random_pooling_select(rng.random::<f64>())?;
                resolve_workload_state(
                    &self.cfg.solver,
                    &self.cfg.price_map,
                    self.w,
                    &self.p,
                    Some(pair),
                    &settings,
                )?
            }
        };
        self.p = resolved.p;
        self.selected = resolved.selected;
        self.q = resolved
            .q
            .iter()
            .zip(&self.cfg.queue_lower)
            .map(|(q, lo)| q.max(*lo))
            .collect();
        Ok(())
    }
}

struct RepSeries {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Shared per-replication context: environment states on the grid and the
/// common Brownian increments.
struct RepContext {
    states: Vec<usize>,
    noise: Vec<StepNoise>,
    dt: f64,
}

fn cost_at(costs: &DualCostSpec, p: &[f64], q: &[f64], rho: &[f64]) -> Result<f64> {
    costs.total(p, q, rho)
}

/// Cost series of one priced arm over the shared context.
fn priced_arm_costs(
    cfg: &ExperimentConfig,
    mode: ArmMode,
    ctx: &RepContext,
    costs: &DualCostSpec,
    record_queues: Option<&mut Vec<Vec<f64>>>,
) -> Result<Vec<f64>> {
    let mut arm = PricedArm::new(cfg, mode);
    let mut series = Vec::with_capacity(cfg.steps + 1);
    series.push(0.0);
    let mut queue_log = record_queues;
    if let Some(log) = queue_log.as_deref_mut() {
        log.push(arm.q.clone());
    }
    for i in 0..cfg.steps {
        arm.step(ctx.states[i], &ctx.noise[i], ctx.dt)?;
        let rho = &cfg.diffusion.rho[ctx.states[i + 1] - 1];
        series.push(cost_at(costs, &arm.p, &arm.q, rho)?);
        if let Some(log) = queue_log.as_deref_mut() {
            log.push(arm.q.clone());
        }
    }
    Ok(series)
}

/// Cost series of one policy variant. `dynamic_queues` carries the
/// dynamic arm's queue path for the shadowing arbitrary-map arm.
fn variant_costs(
    cfg: &ExperimentConfig,
    variant: &PolicyVariant,
    rep: u64,
    ctx: &RepContext,
    costs: &DualCostSpec,
    dynamic_queues: &[Vec<f64>],
) -> Result<Vec<f64>> {
    match variant {
        PolicyVariant::GameDynamic => priced_arm_costs(cfg, ArmMode::Dynamic, ctx, costs, None),
        PolicyVariant::ConstantPrice { price } => priced_arm_costs(
            cfg,
            ArmMode::Constant {
                price: price.clone(),
            },
            ctx,
            costs,
            None,
        ),
        PolicyVariant::RandomPooling => {
            let pooling_rng = substream(cfg.master_seed, rep, "pooling");
            priced_arm_costs(cfg, ArmMode::Pooling { rng: pooling_rng }, ctx, costs, None)
        }
        PolicyVariant::ArbitraryDynamic { lower } => {
            // Shadows the dynamic arm's queues; only the prices differ.
            let mut series = Vec::with_capacity(cfg.steps + 1);
            series.push(0.0);
            for i in 1..=cfg.steps {
                let q = &dynamic_queues[i];
                let p = arbitrary_price(q, lower)?;
                let rho = &cfg.diffusion.rho[ctx.states[i] - 1];
                series.push(cost_at(costs, &p, q, rho)?);
            }
            Ok(series)
        }
        PolicyVariant::TwoDQueue => {
            let mut q = vec![0.0; 2];
            let mut series = Vec::with_capacity(cfg.steps + 1);
            series.push(0.0);
            let ones = vec![1.0; 2];
            for i in 0..cfg.steps {
                let state = ctx.states[i];
                let (gamma_e, gamma_s) = cfg.diffusion.gamma_matrices(state);
                let theta = &cfg.diffusion.theta[state - 1];
                for j in 0..2 {
                    let dx = theta[j] * ctx.dt
                        + gamma_e[j].sqrt() * ctx.noise[i].db_e[j]
                        + gamma_s[j].sqrt() * ctx.noise[i].db_s[j];
                    q[j] = (q[j] + dx).max(0.0);
                }
                let rho = &cfg.diffusion.rho[ctx.states[i + 1] - 1];
                series.push(cost_at(costs, &ones, &q, rho)?);
            }
            Ok(series)
        }
    }
}

/// Simulates one replication of two arms under common noise.
fn replication_series(
    cfg: &ExperimentConfig,
    first: &PolicyVariant,
    second: &PolicyVariant,
    rep: u64,
) -> Result<RepSeries> {
    let users = cfg.num_users();
    let steps = cfg.steps;
    let dt = cfg.horizon / steps as f64;
    let costs = cfg.dual_costs();

    let mut env_rng = substream(cfg.master_seed, rep, "env");
    let env_path = cfg.env.sample_path(cfg.horizon, &mut env_rng)?;
    let mut noise_rng = substream(cfg.master_seed, rep, "brownian");
    let noise = draw_noise(&mut noise_rng, users, steps, dt);
    let mut states = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        states.push(env_path.state_at(cfg.horizon * i as f64 / steps as f64)?);
    }
    let ctx = RepContext { states, noise, dt };

    // The dynamic arm is the reference: the first arm in the standard
    // comparison and the queue source of the shadowing arbitrary arm.
    let mut dynamic_queues = Vec::with_capacity(steps + 1);
    let dynamic_series =
        priced_arm_costs(cfg, ArmMode::Dynamic, &ctx, &costs, Some(&mut dynamic_queues))?;

    let series_of = |variant: &PolicyVariant| -> Result<Vec<f64>> {
        if matches!(variant, PolicyVariant::GameDynamic) {
            Ok(dynamic_series.clone())
        } else {
            variant_costs(cfg, variant, rep, &ctx, &costs, &dynamic_queues)
        }
    };
    Ok(RepSeries {
        first: series_of(first)?,
        second: series_of(second)?,
    })
}

#[derive(Clone)]
struct Accumulator {
    sum_dynamic: Vec<f64>,
    sum_baseline: Vec<f64>,
    sum_diff: Vec<f64>,
    sum_diff_sq: Vec<f64>,
}

impl Accumulator {
    fn zero(len: usize) -> Self {
        Self {
            sum_dynamic: vec![0.0; len],
            sum_baseline: vec![0.0; len],
            sum_diff: vec![0.0; len],
            sum_diff_sq: vec![0.0; len],
        }
    }

    fn from_rep(rep: &RepSeries) -> Self {
        let len = rep.first.len();
        let mut acc = Self::zero(len);
        for i in 0..len {
            let d = rep.first[i] - rep.second[i];
            acc.sum_dynamic[i] = rep.first[i];
            acc.sum_baseline[i] = rep.second[i];
            acc.sum_diff[i] = d;
            acc.sum_diff_sq[i] = d * d;
        }
        acc
    }

    fn merge(mut self, other: &Accumulator) -> Self {
        for i in 0..self.sum_diff.len() {
            self.sum_dynamic[i] += other.sum_dynamic[i];
            self.sum_baseline[i] += other.sum_baseline[i];
            self.sum_diff[i] += other.sum_diff[i];
            self.sum_diff_sq[i] += other.sum_diff_sq[i];
        }
        self
    }
}

/// Pairwise tree reduction in replication order.
fn pairwise_merge(mut items: Vec<Accumulator>, len: usize) -> Accumulator {
    if items.is_empty() {
        return Accumulator::zero(len);
    }
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut iter = items.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(a.merge(&b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop().unwrap()
}

/// Runs the paired comparison between the dynamic arm and `baseline`.
///
/// Both arms see the same environment path and Brownian increments in every
/// replication. Costs are evaluated at the nominal throughput of the
/// current state.
pub fn run_comparison(cfg: &ExperimentConfig, baseline: &PolicyVariant) -> Result<MtcdSeries> {
    run_comparison_pair(cfg, &PolicyVariant::GameDynamic, baseline)
}

/// Paired comparison between two arbitrary arms; `run_comparison` is the
/// `(dynamic, baseline)` special case.
pub fn run_comparison_pair(
    cfg: &ExperimentConfig,
    first: &PolicyVariant,
    second: &PolicyVariant,
) -> Result<MtcdSeries> {
    cfg.validate()?;
    cfg.check_baseline(first)?;
    cfg.check_baseline(second)?;
    let len = cfg.steps + 1;
    let n = cfg.replications;

    let mut total = Accumulator::zero(len);
    let mut rep = 0usize;
    while rep < n {
        let chunk = (rep..n.min(rep + REDUCTION_CHUNK)).collect::<Vec<_>>();
        let results: Vec<Result<Accumulator>> = chunk
            .par_iter()
            .map(|&r| {
                replication_series(cfg, first, second, r as u64).map(|s| Accumulator::from_rep(&s))
            })
            .collect();
        let mut accs = Vec::with_capacity(results.len());
        for r in results {
            accs.push(r?);
        }
        total = total.merge(&pairwise_merge(accs, len));
        rep += chunk.len();
    }

    let nf = n as f64;
    let times: Vec<f64> = (0..len)
        .map(|i| cfg.horizon * i as f64 / cfg.steps as f64)
        .collect();
    let mtcd: Vec<f64> = total.sum_diff.iter().map(|s| s / nf).collect();
    let stderr: Vec<f64> = (0..len)
        .map(|i| {
            if n < 2 {
                0.0
            } else {
                let var =
                    (total.sum_diff_sq[i] - total.sum_diff[i] * total.sum_diff[i] / nf) / (nf - 1.0);
                (var.max(0.0) / nf).sqrt()
            }
        })
        .collect();
    Ok(MtcdSeries {
        times,
        mtcd,
        stderr,
        mean_dynamic: total.sum_dynamic.iter().map(|s| s / nf).collect(),
        mean_baseline: total.sum_baseline.iter().map(|s| s / nf).collect(),
    })
}

/// Simulates the replication-0 dynamic-arm path for trace dumps.
pub fn dynamic_trace(cfg: &ExperimentConfig) -> Result<crate::rdrs::RdrsPath> {
    cfg.validate()?;
    let mut env_rng = substream(cfg.master_seed, 0, "env");
    let env_path: EnvPath = cfg.env.sample_path(cfg.horizon, &mut env_rng)?;
    let scheme = crate::rdrs::GridScheme::new(cfg.horizon, cfg.steps)?;
    let mut noise_rng = substream(cfg.master_seed, 0, "brownian");
    crate::rdrs::simulate_rdrs_1d(
        &cfg.diffusion,
        &env_path,
        &scheme,
        &cfg.price_map,
        &cfg.solver,
        &mut noise_rng,
    )
}

/// The fixed decreasing comparison map
/// `P_j = lower_j + a_j/(b_j + √Q_j)` with `(a, b)` from
/// [`ARBITRARY_MAP_CONSTANTS`]; bounded by construction, no extra clamping.
pub fn arbitrary_price(q: &[f64], lower: &[f64]) -> Result<Vec<f64>> {
    if q.len() != 2 || lower.len() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: q.len().min(lower.len()),
        });
    }
    Ok((0..2)
        .map(|j| {
            let (a, b) = ARBITRARY_MAP_CONSTANTS[j];
            lower[j] + a / (b + q[j].max(0.0).sqrt())
        })
        .collect())
}

/// Branch table of the stochastic pooling selector over
/// `[0, 1/3) → (0,1)`, `[1/3, 2/3) → (0,2)`, `[2/3, 1] → (1,2)`.
pub fn random_pooling_select(u: f64) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("u={u} outside [0, 1]")));
    }
    Ok(if u < 1.0 / 3.0 {
        (0, 1)
    } else if u < 2.0 / 3.0 {
        (0, 2)
    } else {
        (1, 2)
    })
}

/// A policy decision to be folded into a nonce.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub prices: Vec<f64>,
    pub queues: Vec<f64>,
    pub rates: Vec<f64>,
    pub node_id: u64,
    pub step_index: u64,
}

/// 32-byte digest of the canonically serialized decision tuple.
pub fn derive_nonce(decision: &PolicyDecision) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"rdrs-lab.nonce.v1");
    for field in [&decision.prices, &decision.queues, &decision.rates] {
        hasher.update((field.len() as u64).to_le_bytes());
        for v in field {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher.update(decision.node_id.to_le_bytes());
    hasher.update(decision.step_index.to_le_bytes());
    hasher.finalize().into()
}
