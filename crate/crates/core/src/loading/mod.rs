//! Stationary vehicle mass under fixed policies, travel times and matching
//! probabilities.
//!
//! Two routes are provided. [`build_chain`] materializes the continuous-time
//! chain over empty states (one per link) and hired states `(link, dest)`,
//! which [`stationary_masses`] solves either by a rank-completed direct solve
//! or by power iteration on the uniformized chain. [`load_blocked`] exploits
//! that every hired trip to `d` ends at node `d`: empty departures reduce to
//! a node-level chain, and each destination's hired flows to one small linear
//! system. The equilibrium loop uses the blocked route.

mod blocked;
mod chain;

use serde::{Deserialize, Serialize};

use crate::error::{MterError, Result};
use crate::network::{DemandModel, Network};
use crate::smdp::Policies;

pub use blocked::load_blocked;
pub use chain::{build_chain, prune_transient, stationary_masses, ChainSpec, PruneReport};

/// Per-link state of the road at a given mass distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkEnv {
    /// Total fleet mass.
    pub u: Vec<f64>,
    /// Travel time (hours).
    pub t: Vec<f64>,
    /// Empty flow (vehicles per hour).
    pub f: Vec<f64>,
    /// Matching probability.
    pub m: Vec<f64>,
}

impl LinkEnv {
    /// Free-flow environment with zero mass.
    pub fn free_flow(network: &Network) -> Self {
        masses_to_env(&MassDistribution::zeros(network), network)
    }
}

/// Empty mass per link and hired mass per hired slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassDistribution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl MassDistribution {
    pub fn zeros(network: &Network) -> Self {
        MassDistribution {
            x: vec![0.0; network.num_links()],
            y: vec![0.0; network.num_hired_states()],
        }
    }

    pub fn total(&self) -> f64 {
        self.x.iter().sum::<f64>() + self.y.iter().sum::<f64>()
    }

    pub fn hired_total(&self) -> f64 {
        self.y.iter().sum()
    }

    pub fn empty_total(&self) -> f64 {
        self.x.iter().sum()
    }

    /// Total mass per link.
    pub fn link_mass(&self, network: &Network) -> Vec<f64> {
        let mut u = self.x.clone();
        for (slot, &y) in self.y.iter().enumerate() {
            u[network.hired_index().entry(slot).0] += y;
        }
        u
    }

    pub fn y(&self, network: &Network, link: usize, dest: usize) -> f64 {
        network.hired_index().slot(link, dest).map_or(0.0, |s| self.y[s])
    }

    pub fn len(&self) -> usize {
        self.x.len() + self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.x.iter().chain(self.y.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.x.iter_mut().chain(self.y.iter_mut())
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Link masses to travel times, flows and matching probabilities.
pub fn masses_to_env(dist: &MassDistribution, network: &Network) -> LinkEnv {
    env_from_link_mass(dist, network, false)
}

/// Same as [`masses_to_env`] with travel times pinned at free flow.
pub fn masses_to_env_free_flow(dist: &MassDistribution, network: &Network) -> LinkEnv {
    env_from_link_mass(dist, network, true)
}

fn env_from_link_mass(dist: &MassDistribution, network: &Network, pinned: bool) -> LinkEnv {
    let u = dist.link_mass(network);
    let t: Vec<f64> = network
        .links()
        .iter()
        .zip(&u)
        .map(|(l, &u)| {
            if pinned {
                l.free_flow_time()
            } else {
                l.time_at(u.max(0.0))
            }
        })
        .collect();
    let f: Vec<f64> = dist.x.iter().zip(&t).map(|(x, t)| x.max(0.0) / t).collect();
    let m = network
        .links()
        .iter()
        .zip(&f)
        .map(|(l, &f)| l.matching_at(f))
        .collect();
    LinkEnv { u, t, f, m }
}

/// How the stationary distribution is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationarySolver {
    /// Node-level reduction with per-destination hired solves.
    #[default]
    Blocked,
    /// Rank-completed dense solve of the full generator.
    Direct,
    /// Power iteration on the uniformized generator.
    Power,
}

/// Loads `pool` vehicles under fixed policies and environment.
pub fn load(
    policies: &Policies,
    env: &LinkEnv,
    network: &Network,
    demand: &DemandModel,
    pool: f64,
    solver: StationarySolver,
) -> Result<MassDistribution> {
    match solver {
        StationarySolver::Blocked => load_blocked(policies, env, network, demand, pool),
        StationarySolver::Direct | StationarySolver::Power => {
            let chain = build_chain(policies, env, network, demand)?;
            let (chain, _) = prune_transient(chain, env, network, demand)?;
            stationary_masses(&chain, pool, solver)
        }
    }
}

/// Maximum absolute violation of the empty/hired flow-conservation equations
/// at the flows induced by `dist` (flows per hour).
pub fn flow_balance_residual(
    dist: &MassDistribution,
    env: &LinkEnv,
    policies: &Policies,
    network: &Network,
    demand: &DemandModel,
) -> f64 {
    let n = network.num_nodes();
    let idx = network.hired_index();
    let f: Vec<f64> = dist.x.iter().zip(&env.t).map(|(x, t)| x / t).collect();
    let h: Vec<f64> = dist
        .y
        .iter()
        .enumerate()
        .map(|(s, y)| y / env.t[idx.entry(s).0])
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut empty_in = 0.0;
        for &a in network.in_links(i) {
            let m = env.m[a];
            let accepted: f64 = (0..n)
                .filter(|&d| d != i)
                .map(|d| demand.dest_prob(i, d) * policies.xi(i, d))
                .sum();
            empty_in += f[a] * (1.0 - m * accepted);
            if let Some(s) = idx.slot(a, i) {
                empty_in += h[s];
            }
        }
        for &a in network.out_links(i) {
            worst = worst.max((f[a] - policies.p[a] * empty_in).abs());
        }
        for d in (0..n).filter(|&d| d != i) {
            let mut hired_in = 0.0;
            for &a in network.in_links(i) {
                hired_in += f[a] * env.m[a] * demand.dest_prob(i, d) * policies.xi(i, d);
                if let Some(s) = idx.slot(a, d) {
                    hired_in += h[s];
                }
            }
            for &a in network.out_links(i) {
                let s = idx.slot(a, d).expect("tail != d");
                worst = worst.max((h[s] - policies.q[s] * hired_in).abs());
            }
        }
    }
    worst
}

fn check_env(env: &LinkEnv, network: &Network) -> Result<()> {
    if env.t.len() != network.num_links() || env.m.len() != network.num_links() {
        return Err(MterError::Domain(
            "link environment does not match network".into(),
        ));
    }
    if let Some(a) = env.t.iter().position(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(MterError::Domain(format!(
            "travel time on link {} is {}",
            network.link(a).id,
            env.t[a]
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
