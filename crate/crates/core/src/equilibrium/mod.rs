//! Relaxed fixed-point iteration for the equilibrium fleet distribution.
//!
//! One application of the map takes masses to travel times and matching
//! probabilities, solves the Bellman system at that environment, derives the
//! choice probabilities and loads the fleet under them. The driver relaxes
//! towards the mapped point with one of several step rules until the l2 gap
//! between an iterate and its image is below tolerance.

use web_time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MterError, Result};
use crate::loading::{
    flow_balance_residual, load, masses_to_env, masses_to_env_free_flow, LinkEnv, MassDistribution,
    StationarySolver,
};
use crate::metrics::{compute_metrics, MetricsBundle, MetricsOptions};
use crate::network::{DemandModel, Network};
use crate::smdp::{
    choice_probabilities, solve_values, Policies, SmdpParams, ValueFunctions, ValueIterationConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    /// Jump to the mapped point.
    FixedPoint,
    /// Step `1/(k+1)`.
    Msa,
    /// Step `max(1/(k+1), floor)`.
    MsaFloor { floor: f64 },
    /// Heavy-ball direction `w = b w + (1-b)(F(x) - x)`, step `psi`.
    Momentum { b: f64, psi: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::MsaFloor { floor: 0.02 }
    }
}

impl StepRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepRule::MsaFloor { floor } if !(floor > 0.0 && floor <= 1.0) => Err(MterError::Validation(
                format!("step floor {floor} outside (0, 1]"),
            )),
            StepRule::Momentum { b, psi } if !(0.0..1.0).contains(&b) || !(psi > 0.0 && psi <= 1.0) => Err(
                MterError::Validation(format!("momentum parameters b = {b}, psi = {psi} out of range")),
            ),
            _ => Ok(()),
        }
    }

    /// Nominal step at iteration `k` (1-based).
    pub fn step_size(&self, k: usize) -> f64 {
        let msa = 1.0 / (k as f64 + 1.0);
        match *self {
            StepRule::FixedPoint => 1.0,
            StepRule::Msa => msa,
            StepRule::MsaFloor { floor } => msa.max(floor),
            StepRule::Momentum { psi, .. } => psi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub step: StepRule,
    /// Stop when the l2 gap falls to this value.
    pub tol: f64,
    pub max_iter: usize,
    pub value_iteration: ValueIterationConfig,
    pub loading: StationarySolver,
    /// Random starts used by [`multi_start`].
    pub starts: usize,
    pub seed: u64,
    /// Pin travel times at free flow (matching stays endogenous).
    pub free_flow_times: bool,
    /// Tolerance on the flow-balance certificate, relative to `sum(lambda) + M`.
    pub flow_balance_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step: StepRule::default(),
            tol: 1e-4,
            max_iter: 3000,
            value_iteration: ValueIterationConfig::default(),
            loading: StationarySolver::Blocked,
            starts: 3,
            seed: 0,
            free_flow_times: false,
            flow_balance_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(MterError::Validation("gap tolerance must be positive".into()));
        }
        if self.starts == 0 {
            return Err(MterError::Validation("at least one start is required".into()));
        }
        self.step.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub gap: f64,
    pub step: f64,
    pub seconds: f64,
}

/// Residuals of the equilibrium conditions at the reported point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    /// `||F(x) - x||_2`.
    pub map_gap: f64,
    /// Sup-norm Bellman residual of the reported values.
    pub bellman: f64,
    /// Largest flow-conservation violation (vehicles per hour).
    pub flow_balance: f64,
    /// Largest `|t_a - t_a(u_a)|`.
    pub time_consistency: f64,
    /// Largest `|m_a - m_a(f_a)|`.
    pub matching_consistency: f64,
    /// `|sum(x + y) - target|`.
    pub mass_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub masses: MassDistribution,
    pub env: LinkEnv,
    pub values: ValueFunctions,
    pub policies: Policies,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub iterations: usize,
    /// Last gap seen by the loop guard.
    #[serde(deserialize_with = "crate::metrics::null_as_infinity")]
    pub gap: f64,
    pub certificates: Certificates,
    pub metrics: MetricsBundle,
    pub seed: u64,
    /// Mass the solution is normalized to.
    pub total_mass: f64,
}

impl EquilibriumResult {
    /// Certificate check against the configured tolerances.
    pub fn certified(&self, config: &SolverConfig, network: &Network) -> bool {
        let scale = network.total_arrival_rate() + self.total_mass;
        self.certificates.map_gap <= config.tol
            && self.certificates.bellman <= config.value_iteration.tol
            && self.certificates.flow_balance <= config.flow_balance_tol * scale
            && self.certificates.time_consistency <= 1e-12
            && self.certificates.matching_consistency <= 1e-12
    }
}

/// Everything computed along one application of the map.
#[derive(Clone, Debug)]
pub struct MapOutput {
    pub mapped: MassDistribution,
    pub env: LinkEnv,
    pub values: ValueFunctions,
    pub bellman_residual: f64,
    pub policies: Policies,
    /// Mass the mapped point is normalized to.
    pub target: f64,
}

/// Normalization of the loaded fleet.
pub trait MassTarget: Sync {
    /// Total mass given the current empty-vehicle node values.
    fn target(&self, sigma: &[f64]) -> f64;
}

/// Fixed pool size.
pub struct FixedPool(pub f64);

impl MassTarget for FixedPool {
    fn target(&self, _sigma: &[f64]) -> f64 {
        self.0
    }
}

/// The composed map with a warm-start cache for the value functions.
pub struct FixedPointMap<'a> {
    pub network: &'a Network,
    pub demand: &'a DemandModel,
    pub params: &'a SmdpParams,
    pub config: &'a SolverConfig,
    pub target: &'a dyn MassTarget,
    warm: Option<ValueFunctions>,
}

impl<'a> FixedPointMap<'a> {
    pub fn new(
        network: &'a Network,
        demand: &'a DemandModel,
        params: &'a SmdpParams,
        config: &'a SolverConfig,
        target: &'a dyn MassTarget,
    ) -> Self {
        FixedPointMap {
            network,
            demand,
            params,
            config,
            target,
            warm: None,
        }
    }

    pub fn env(&self, dist: &MassDistribution) -> LinkEnv {
        if self.config.free_flow_times {
            masses_to_env_free_flow(dist, self.network)
        } else {
            masses_to_env(dist, self.network)
        }
    }

    pub fn apply(&mut self, dist: &MassDistribution) -> Result<MapOutput> {
        let env = self.env(dist);
        let sol = solve_values(
            &env,
            self.params,
            self.network,
            self.demand,
            &self.config.value_iteration,
            self.warm.as_ref(),
        )
        .map_err(|e| e.in_stage("value iteration"))?;
        let policies = choice_probabilities(&sol.values, self.params, self.network, self.demand);
        let target = self.target.target(&sol.values.sigma);
        let mapped = load(
            &policies,
            &env,
            self.network,
            self.demand,
            target,
            self.config.loading,
        )
        .map_err(|e| e.in_stage("loading"))?;
        self.warm = Some(sol.values.clone());
        Ok(MapOutput {
            mapped,
            env,
            values: sol.values,
            bellman_residual: sol.residual,
            policies,
            target,
        })
    }
}

/// One application of the map with the default fixed pool.
pub fn fixed_point_map(
    dist: &MassDistribution,
    network: &Network,
    demand: &DemandModel,
    params: &SmdpParams,
    config: &SolverConfig,
) -> Result<MapOutput> {
    let pool = FixedPool(network.pool_size());
    FixedPointMap::new(network, demand, params, config, &pool).apply(dist)
}

/// l2 norm of the stacked difference.
pub fn gap(current: &MassDistribution, mapped: &MassDistribution) -> Result<f64> {
    if current.x.len() != mapped.x.len() || current.y.len() != mapped.y.len() {
        return Err(MterError::Domain("mass vectors differ in dimension".into()));
    }
    Ok(current
        .iter()
        .zip(mapped.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Relaxed update. `carry` is the momentum direction, zero on the first call.
/// The result is clipped at zero and rescaled to the mass of the combination.
pub fn step_update(
    rule: &StepRule,
    k: usize,
    current: &MassDistribution,
    mapped: &MassDistribution,
    carry: &mut Vec<f64>,
) -> (MassDistribution, f64) {
    let step = rule.step_size(k);
    let mut next = current.clone();
    match *rule {
        StepRule::Momentum { b, psi } => {
            carry.resize(current.len(), 0.0);
            for ((w, (x, xt)), nx) in carry
                .iter_mut()
                .zip(current.iter().zip(mapped.iter()))
                .zip(next.iter_mut())
            {
                *w = b * *w + (1.0 - b) * (xt - x);
                *nx = x + psi * *w;
            }
        }
        _ => {
            for (nx, (x, xt)) in next.iter_mut().zip(current.iter().zip(mapped.iter())) {
                *nx = x + step * (xt - x);
            }
        }
    }
    let target = match *rule {
        StepRule::Momentum { .. } => mapped.total(),
        _ => (1.0 - step) * current.total() + step * mapped.total(),
    };
    project(&mut next, target);
    (next, step)
}

/// Clips negatives and rescales to `target` when drift is detected.
pub fn project(dist: &mut MassDistribution, target: f64) {
    let mut clipped = false;
    for v in dist.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            clipped = true;
        }
    }
    let total = dist.total();
    if total > 0.0 && (clipped || (total - target).abs() > 1e-12 * target) {
        dist.scale(target / total);
    }
}

/// Symmetric Dirichlet(1) over all empty and hired states, scaled to `mass`.
pub fn random_start(network: &Network, mass: f64, seed: u64) -> MassDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dist = MassDistribution::zeros(network);
    for v in dist.iter_mut() {
        let e: f64 = Exp1.sample(&mut rng);
        *v = e;
    }
    let total = dist.total();
    dist.scale(mass / total);
    dist
}

/// Runs the relaxed iteration from `start`.
pub fn iterate_from(
    map: &mut FixedPointMap<'_>,
    start: MassDistribution,
    seed: u64,
) -> Result<EquilibriumResult> {
    let config = map.config;
    config.validate()?;
    let clock = Instant::now();
    let mut x = start;
    let mut carry = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut last_gap = f64::INFINITY;
    let mut k = 0;
    while k < config.max_iter {
        k += 1;
        let out = map.apply(&x)?;
        last_gap = gap(&x, &out.mapped)?;
        let (next, step) = step_update(&config.step, k, &x, &out.mapped, &mut carry);
        trace.push(TraceRow {
            iter: k,
            gap: last_gap,
            step,
            seconds: clock.elapsed().as_secs_f64(),
        });
        if k % 100 == 0 {
            log::debug!("iteration {k}: gap {last_gap:.3e}");
        }
        if !last_gap.is_finite() {
            return Err(MterError::Numerical(format!(
                "gap became {last_gap} at iteration {k}"
            )));
        }
        x = next;
        if last_gap <= config.tol {
            converged = true;
            break;
        }
    }
    finish(map, x, trace, converged, k, last_gap, seed)
}

fn finish(
    map: &mut FixedPointMap<'_>,
    x: MassDistribution,
    trace: Vec<TraceRow>,
    converged: bool,
    iterations: usize,
    last_gap: f64,
    seed: u64,
) -> Result<EquilibriumResult> {
    let out = map.apply(&x)?;
    let env = out.env;
    let recomputed = map.env(&x);
    let certificates = Certificates {
        map_gap: gap(&x, &out.mapped)?,
        bellman: out.bellman_residual,
        flow_balance: flow_balance_residual(&x, &env, &out.policies, map.network, map.demand),
        time_consistency: max_abs_diff(&env.t, &recomputed.t),
        matching_consistency: max_abs_diff(&env.m, &recomputed.m),
        mass_error: (x.total() - out.target).abs(),
    };
    let metrics = compute_metrics(
        &x,
        &env,
        &out.policies,
        map.network,
        map.demand,
        map.params,
        &MetricsOptions::default(),
    );
    Ok(EquilibriumResult {
        total_mass: out.target,
        masses: x,
        env,
        values: out.values,
        policies: out.policies,
        trace,
        converged,
        iterations,
        gap: last_gap,
        certificates,
        metrics,
        seed,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solves from a seeded random start. Non-convergence is reported through
/// `converged`, not as an error.
pub fn solve_equilibrium(
    network: &Network,
    demand: &DemandModel,
    params: &SmdpParams,
    config: &SolverConfig,
) -> Result<EquilibriumResult> {
    params.validate()?;
    let pool = FixedPool(network.pool_size());
    let mut map = FixedPointMap::new(network, demand, params, config, &pool);
    let start = random_start(network, network.pool_size(), config.seed);
    iterate_from(&mut map, start, config.seed)
}

/// All runs of a multi-start solve and the index of the selected one.
#[derive(Debug)]
pub struct MultiStart {
    pub runs: Vec<Result<EquilibriumResult>>,
    pub best: usize,
}

impl MultiStart {
    pub fn best(&self) -> &EquilibriumResult {
        self.runs[self.best].as_ref().expect("best run succeeded")
    }

    pub fn into_best(mut self) -> EquilibriumResult {
        self.runs.swap_remove(self.best).expect("best run succeeded")
    }
}

/// Start seeds derived from the root seed.
pub fn start_seeds(root: u64, n: usize) -> Vec<u64> {
    (0..n as u64)
        .map(|k| root.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
        .collect()
}

/// Solves from `config.starts` random starts concurrently and selects the
/// converged run with the highest profit rate (any run if none converged).
pub fn multi_start(
    network: &Network,
    demand: &DemandModel,
    params: &SmdpParams,
    config: &SolverConfig,
) -> Result<MultiStart> {
    config.validate()?;
    let runs: Vec<Result<EquilibriumResult>> = start_seeds(config.seed, config.starts)
        .into_par_iter()
        .map(|seed| {
            let cfg = SolverConfig {
                seed,
                ..config.clone()
            };
            solve_equilibrium(network, demand, params, &cfg)
        })
        .collect();
    select_best(runs)
}

pub(crate) fn select_best(runs: Vec<Result<EquilibriumResult>>) -> Result<MultiStart> {
    let score = |r: &EquilibriumResult| (r.converged, r.metrics.profit_rate);
    let mut best: Option<usize> = None;
    for (k, run) in runs.iter().enumerate() {
        if let Ok(r) = run {
            let better = match best {
                None => true,
                Some(b) => {
                    let cur = runs[b].as_ref().unwrap();
                    let (c1, p1) = score(r);
                    let (c0, p0) = score(cur);
                    (c1 && !c0) || (c1 == c0 && p1 > p0)
                }
            };
            if better {
                best = Some(k);
            }
        }
    }
    match best {
        Some(best) => Ok(MultiStart { runs, best }),
        None => {
            let msgs: Vec<String> = runs
                .iter()
                .filter_map(|r| r.as_ref().err().map(|e| e.to_string()))
                .collect();
            Err(MterError::Numerical(format!(
                "all starts failed: {}",
                msgs.join("; ")
            )))
        }
    }
}
