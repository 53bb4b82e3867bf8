//! Expected Bellman system on the observable state space: link action values
//! for empty (`z`) and hired (`w`) vehicles, node state values (`sigma`,
//! `tau`), and the logit choice probabilities they induce.

mod logsum;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MterError, Result};
use crate::loading::LinkEnv;
use crate::network::{DemandModel, Network};

pub use logsum::{social_surplus, Logit, Surplus};

/// Value of a hired vehicle on reaching its destination.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Continues as an empty vehicle: `tau[d][d] = sigma[d]`.
    #[default]
    ForwardLooking,
    /// Values nothing past the drop-off: `tau[d][d] = 0`.
    Myopic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmdpParams {
    /// Continuous-time discount rate (1/hour).
    pub discount_rate: f64,
    /// Logit scale for link choice.
    pub link_scale: f64,
    /// Logit scale for order acceptance.
    pub accept_scale: f64,
    /// Operating cost of an empty vehicle, dollars per hour of travel.
    pub empty_cost_per_hour: f64,
    /// Operating cost of a hired vehicle, dollars per hour of travel.
    pub hired_cost_per_hour: f64,
    pub boundary: Boundary,
}

impl Default for SmdpParams {
    fn default() -> Self {
        SmdpParams {
            discount_rate: 0.1,
            link_scale: 10.0,
            accept_scale: 10.0,
            empty_cost_per_hour: 6.0,
            hired_cost_per_hour: 6.0,
            boundary: Boundary::ForwardLooking,
        }
    }
}

impl SmdpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount_rate > 0.0) {
            return Err(MterError::Validation("discount rate must be positive".into()));
        }
        if !(self.link_scale > 0.0) || !(self.accept_scale > 0.0) {
            return Err(MterError::Validation("logit scales must be positive".into()));
        }
        if !self.empty_cost_per_hour.is_finite() || !self.hired_cost_per_hour.is_finite() {
            return Err(MterError::Validation("cost coefficients must be finite".into()));
        }
        Ok(())
    }
}

/// Action and state values. `w` is indexed by hired slot, `tau` is
/// destination-major (`tau[d * n + j]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueFunctions {
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
}

impl ValueFunctions {
    pub fn zeros(network: &Network) -> Self {
        let n = network.num_nodes();
        ValueFunctions {
            z: vec![0.0; network.num_links()],
            w: vec![0.0; network.num_hired_states()],
            sigma: vec![0.0; n],
            tau: vec![0.0; n * n],
        }
    }

    /// Hired action value, `None` for links leaving the destination.
    pub fn w(&self, network: &Network, link: usize, dest: usize) -> Option<f64> {
        network.hired_index().slot(link, dest).map(|s| self.w[s])
    }

    pub fn tau(&self, node: usize, dest: usize) -> f64 {
        self.tau[dest * self.sigma.len() + node]
    }

    /// Sup-norm distance over the action values.
    pub fn action_distance(&self, other: &ValueFunctions) -> f64 {
        sup_dist(&self.z, &other.z).max(sup_dist(&self.w, &other.w))
    }
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Link-choice, hired-choice and acceptance probabilities. `q` is indexed by
/// hired slot; `xi` is origin-major (`xi[i * n + d]`, zero on the diagonal).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policies {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub xi: Vec<f64>,
    pub num_nodes: usize,
}

impl Policies {
    pub fn xi(&self, node: usize, dest: usize) -> f64 {
        self.xi[node * self.num_nodes + dest]
    }

    pub fn q(&self, network: &Network, link: usize, dest: usize) -> Option<f64> {
        network.hired_index().slot(link, dest).map(|s| self.q[s])
    }
}

/// Splits `data` into one mutable slice per destination of the hired index.
fn per_dest_mut<'a>(network: &Network, mut data: &'a mut [f64]) -> Vec<&'a mut [f64]> {
    let idx = network.hired_index();
    let mut out = Vec::with_capacity(network.num_nodes());
    for d in 0..network.num_nodes() {
        let (head, tail) = data.split_at_mut(idx.dest_range(d).len());
        out.push(head);
        data = tail;
    }
    out
}

const PARALLEL_THRESHOLD: usize = 1 << 15;

/// The expected Bellman operator at a fixed link environment.
pub struct BellmanOperator<'a> {
    network: &'a Network,
    demand: &'a DemandModel,
    params: &'a SmdpParams,
    link_logit: Logit,
    accept_logit: Logit,
    discount: Vec<f64>,
    empty_reward: Vec<f64>,
    hired_reward: Vec<f64>,
    matching: Vec<f64>,
}

impl<'a> BellmanOperator<'a> {
    pub fn new(
        network: &'a Network,
        demand: &'a DemandModel,
        env: &LinkEnv,
        params: &'a SmdpParams,
    ) -> Result<Self> {
        let nl = network.num_links();
        if env.t.len() != nl || env.m.len() != nl {
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
        let discount = env.t.iter().map(|&t| (-params.discount_rate * t).exp()).collect();
        let empty_reward = network
            .links()
            .iter()
            .zip(&env.t)
            .map(|(l, &t)| -params.empty_cost_per_hour * t - l.toll)
            .collect();
        let hired_reward = network
            .links()
            .iter()
            .zip(&env.t)
            .map(|(l, &t)| -params.hired_cost_per_hour * t - l.toll)
            .collect();
        Ok(BellmanOperator {
            network,
            demand,
            params,
            link_logit: Logit::new(params.link_scale),
            accept_logit: Logit::new(params.accept_scale),
            discount,
            empty_reward,
            hired_reward,
            matching: env.m.clone(),
        })
    }

    /// Contraction modulus `exp(-beta * min t)`.
    pub fn modulus(&self) -> f64 {
        self.discount.iter().copied().fold(0.0, f64::max)
    }

    fn parallel(&self) -> bool {
        self.network.num_hired_states() >= PARALLEL_THRESHOLD
    }

    /// Fills `sigma` and `tau` from the action values.
    pub fn node_values(&self, z: &[f64], w: &[f64], sigma: &mut [f64], tau: &mut [f64]) {
        let net = self.network;
        let n = net.num_nodes();
        let logit = self.link_logit;
        for (j, s) in sigma.iter_mut().enumerate() {
            *s = logit.surplus_iter(net.out_links(j).iter().map(|&a| z[a]));
        }
        let idx = net.hired_index();
        let boundary = self.params.boundary;
        let fill = |d: usize, row: &mut [f64]| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = if j == d {
                    match boundary {
                        Boundary::ForwardLooking => sigma[d],
                        Boundary::Myopic => 0.0,
                    }
                } else {
                    logit.surplus_iter(
                        net.out_links(j)
                            .iter()
                            .map(|&a| w[idx.slot(a, d).expect("link does not leave d")]),
                    )
                };
            }
        };
        if self.parallel() {
            tau.par_chunks_mut(n)
                .enumerate()
                .for_each(|(d, row)| fill(d, row));
        } else {
            tau.chunks_mut(n).enumerate().for_each(|(d, row)| fill(d, row));
        }
    }

    /// Expected value at node `j` of an empty arrival that has an order on hand,
    /// averaged over destinations.
    fn order_values(&self, sigma: &[f64], tau: &[f64]) -> Vec<f64> {
        let n = sigma.len();
        (0..n)
            .map(|j| {
                let probs = self.demand.dest_row(j);
                let fares = self.demand.fare_row(j);
                let mut acc = 0.0;
                for d in 0..n {
                    let nd = probs[d];
                    if nd > 0.0 && d != j {
                        acc += nd * self.accept_logit.pair(fares[d] + tau[d * n + j], sigma[j]);
                    }
                }
                acc
            })
            .collect()
    }

    /// Fills `z` and `w` from the node values.
    pub fn action_values(&self, sigma: &[f64], tau: &[f64], z: &mut [f64], w: &mut [f64]) {
        let net = self.network;
        let n = net.num_nodes();
        let orders = self.order_values(sigma, tau);
        for (a, link) in net.links().iter().enumerate() {
            let j = link.head;
            let m = self.matching[a];
            let cont = if m > 0.0 {
                (1.0 - m) * sigma[j] + m * orders[j]
            } else {
                sigma[j]
            };
            z[a] = self.empty_reward[a] + self.discount[a] * cont;
        }
        let idx = net.hired_index();
        let fill = |d: usize, out: &mut [f64]| {
            let base = idx.dest_range(d).start;
            for (k, slot) in out.iter_mut().enumerate() {
                let (a, _) = idx.entry(base + k);
                let j = net.link(a).head;
                *slot = self.hired_reward[a] + self.discount[a] * tau[d * n + j];
            }
        };
        let chunks = per_dest_mut(net, w);
        if self.parallel() {
            chunks.into_par_iter().enumerate().for_each(|(d, c)| fill(d, c));
        } else {
            chunks.into_iter().enumerate().for_each(|(d, c)| fill(d, c));
        }
    }

    /// One application of the operator to the action values of `v`; the
    /// returned node values are consistent with the returned action values.
    pub fn apply(&self, v: &ValueFunctions) -> ValueFunctions {
        let mut sigma = vec![0.0; v.sigma.len()];
        let mut tau = vec![0.0; v.tau.len()];
        self.node_values(&v.z, &v.w, &mut sigma, &mut tau);
        let mut out = ValueFunctions {
            z: vec![0.0; v.z.len()],
            w: vec![0.0; v.w.len()],
            sigma,
            tau,
        };
        self.action_values(&out.sigma, &out.tau, &mut out.z, &mut out.w);
        self.node_values(&out.z, &out.w, &mut out.sigma, &mut out.tau);
        out
    }
}

/// Single application of the Bellman operator.
pub fn bellman_apply(
    v: &ValueFunctions,
    env: &LinkEnv,
    params: &SmdpParams,
    network: &Network,
    demand: &DemandModel,
) -> Result<ValueFunctions> {
    check_shape(v, network)?;
    Ok(BellmanOperator::new(network, demand, env, params)?.apply(v))
}

fn check_shape(v: &ValueFunctions, network: &Network) -> Result<()> {
    let n = network.num_nodes();
    if v.z.len() != network.num_links()
        || v.w.len() != network.num_hired_states()
        || v.sigma.len() != n
        || v.tau.len() != n * n
    {
        return Err(MterError::Domain("value functions do not match network".into()));
    }
    if v.z.iter().chain(&v.w).any(|x| !x.is_finite()) {
        return Err(MterError::Domain("value functions must be finite".into()));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ValueSolution {
    pub values: ValueFunctions,
    pub iterations: usize,
    /// `||Lambda v - v||_inf` at the returned values (upper bound).
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValueIterationConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ValueIterationConfig {
    fn default() -> Self {
        ValueIterationConfig {
            tol: 1e-8,
            max_iter: 1_000_000,
        }
    }
}

/// Value iteration to a sup-norm residual of `config.tol`.
pub fn solve_values(
    env: &LinkEnv,
    params: &SmdpParams,
    network: &Network,
    demand: &DemandModel,
    config: &ValueIterationConfig,
    warm_start: Option<&ValueFunctions>,
) -> Result<ValueSolution> {
    if !(config.tol > 0.0) {
        return Err(MterError::Domain(
            "value iteration tolerance must be positive".into(),
        ));
    }
    let op = BellmanOperator::new(network, demand, env, params)?;
    let mut cur = match warm_start {
        Some(v) => {
            check_shape(v, network)?;
            v.clone()
        }
        None => ValueFunctions::zeros(network),
    };
    op.node_values(&cur.z, &cur.w, &mut cur.sigma, &mut cur.tau);
    let mut next = cur.clone();
    let modulus = op.modulus();
    let mut residual = f64::INFINITY;
    for it in 1..=config.max_iter {
        op.action_values(&cur.sigma, &cur.tau, &mut next.z, &mut next.w);
        op.node_values(&next.z, &next.w, &mut next.sigma, &mut next.tau);
        residual = next.action_distance(&cur);
        std::mem::swap(&mut cur, &mut next);
        if !residual.is_finite() {
            break;
        }
        if residual <= config.tol {
            return Ok(ValueSolution {
                values: cur,
                iterations: it,
                residual: residual * modulus,
            });
        }
    }
    Err(MterError::Convergence {
        stage: "value iteration",
        iterations: config.max_iter,
        residual,
    })
}

/// Logit choice probabilities induced by the values.
pub fn choice_probabilities(
    v: &ValueFunctions,
    params: &SmdpParams,
    network: &Network,
    demand: &DemandModel,
) -> Policies {
    let n = network.num_nodes();
    let link_logit = Logit::new(params.link_scale);
    let accept_logit = Logit::new(params.accept_scale);
    let mut p = vec![0.0; network.num_links()];
    let mut buf_v = Vec::new();
    let mut buf_p = Vec::new();
    for i in 0..n {
        let outs = network.out_links(i);
        buf_v.clear();
        buf_v.extend(outs.iter().map(|&a| v.z[a]));
        buf_p.resize(outs.len(), 0.0);
        link_logit.probabilities(&buf_v, &mut buf_p);
        for (&a, &pr) in outs.iter().zip(&buf_p) {
            p[a] = pr;
        }
    }
    let idx = network.hired_index();
    let mut q = vec![0.0; network.num_hired_states()];
    for d in 0..n {
        for i in (0..n).filter(|&i| i != d) {
            let outs = network.out_links(i);
            buf_v.clear();
            buf_v.extend(outs.iter().map(|&a| v.w[idx.slot(a, d).expect("tail != d")]));
            buf_p.resize(outs.len(), 0.0);
            link_logit.probabilities(&buf_v, &mut buf_p);
            for (&a, &pr) in outs.iter().zip(&buf_p) {
                q[idx.slot(a, d).expect("tail != d")] = pr;
            }
        }
    }
    let mut xi = vec![0.0; n * n];
    for i in 0..n {
        for d in (0..n).filter(|&d| d != i) {
            xi[i * n + d] = accept_logit.pair_prob(demand.fare(i, d) + v.tau(i, d), v.sigma[i]);
        }
    }
    Policies {
        p,
        q,
        xi,
        num_nodes: n,
    }
}

#[cfg(test)]
mod tests;
