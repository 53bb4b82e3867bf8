use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    gap, project, solve_equilibrium, step_update, Certificates, EquilibriumResult, SolverConfig, StepRule,
    TraceRow,
};
use crate::error::{MterError, Result};
use crate::loading::{flow_balance_residual, load, masses_to_env};
use crate::metrics::{compute_metrics, MetricsOptions};
use crate::network::{DemandModel, Network};
use crate::smdp::{Boundary, SmdpParams};

/// Equilibrium for drivers who place no value on the empty trip after a
/// drop-off.
pub fn solve_myopic(
    network: &Network,
    demand: &DemandModel,
    params: &SmdpParams,
    config: &SolverConfig,
) -> Result<EquilibriumResult> {
    let params = SmdpParams {
        boundary: Boundary::Myopic,
        ..params.clone()
    };
    solve_equilibrium(network, demand, &params, config)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CongestionUnaware {
    /// Equilibrium computed at free-flow times.
    pub planned: EquilibriumResult,
    /// The frozen policies loaded onto the congested network.
    pub loaded: EquilibriumResult,
}

/// Step rule of the frozen-policy loading loop.
const LOADING_STEP: StepRule = StepRule::MsaFloor { floor: 0.05 };

/// Solves at free-flow times, then loads the resulting policies on the
/// congested network without re-optimizing them.
pub fn congestion_unaware_load(
    network: &Network,
    demand: &DemandModel,
    params: &SmdpParams,
    config: &SolverConfig,
) -> Result<CongestionUnaware> {
    let phase1 = SolverConfig {
        free_flow_times: true,
        ..config.clone()
    };
    let planned = solve_equilibrium(network, demand, params, &phase1)
        .map_err(|e| e.in_stage("congestion-unaware phase 1"))?;
    if !planned.converged {
        return Err(MterError::Convergence {
            stage: "congestion-unaware phase 1",
            iterations: planned.iterations,
            residual: planned.gap,
        });
    }
    let loaded = frozen_loading(network, demand, params, config, &planned)
        .map_err(|e| e.in_stage("congestion-unaware phase 2"))?;
    Ok(CongestionUnaware { planned, loaded })
}

fn frozen_loading(
    network: &Network,
    demand: &DemandModel,
    params: &SmdpParams,
    config: &SolverConfig,
    planned: &EquilibriumResult,
) -> Result<EquilibriumResult> {
    let clock = Instant::now();
    let policies = &planned.policies;
    let pool = network.pool_size();
    let mut x = planned.masses.clone();
    let mut carry = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut last_gap = f64::INFINITY;
    let mut k = 0;
    while k < config.max_iter {
        k += 1;
        let env = masses_to_env(&x, network);
        let mapped = load(policies, &env, network, demand, pool, config.loading)?;
        last_gap = gap(&x, &mapped)?;
        let (next, step) = step_update(&LOADING_STEP, k, &x, &mapped, &mut carry);
        trace.push(TraceRow {
            iter: k,
            gap: last_gap,
            step,
            seconds: clock.elapsed().as_secs_f64(),
        });
        if !last_gap.is_finite() {
            return Err(MterError::Numerical(format!(
                "gap became {last_gap} at iteration {k}"
            )));
        }
        if last_gap <= config.tol {
            converged = true;
            break;
        }
        x = next;
    }
    project(&mut x, pool);
    let env = masses_to_env(&x, network);
    let mapped = load(policies, &env, network, demand, pool, config.loading)?;
    let certificates = Certificates {
        map_gap: gap(&x, &mapped)?,
        bellman: planned.certificates.bellman,
        flow_balance: flow_balance_residual(&x, &env, policies, network, demand),
        time_consistency: 0.0,
        matching_consistency: 0.0,
        mass_error: (x.total() - pool).abs(),
    };
    let metrics = compute_metrics(
        &x,
        &env,
        policies,
        network,
        demand,
        params,
        &MetricsOptions::default(),
    );
    Ok(EquilibriumResult {
        masses: x,
        env,
        values: planned.values.clone(),
        policies: policies.clone(),
        trace,
        converged,
        iterations: k,
        gap: last_gap,
        certificates,
        metrics,
        seed: planned.seed,
        total_mass: pool,
    })
}

/// Sets `fee` on every link entering the cordon from outside it.
pub fn cordon_tolls(network: &mut Network, cordon_labels: &[u32], fee: f64) -> Result<usize> {
    let mut inside = vec![false; network.num_nodes()];
    for &label in cordon_labels {
        let node = network
            .node_of_label(label)
            .ok_or_else(|| MterError::Validation(format!("cordon node {label} not in network")))?;
        inside[node] = true;
    }
    let mut count = 0;
    network.update_links(|links| {
        for l in links.iter_mut().filter(|l| inside[l.head] && !inside[l.tail]) {
            l.toll = fee;
            count += 1;
        }
    })?;
    Ok(count)
}
