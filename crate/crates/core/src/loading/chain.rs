use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use super::{check_env, LinkEnv, MassDistribution, StationarySolver};
use crate::error::{MterError, Result};
use crate::network::{DemandModel, Network};
use crate::smdp::Policies;

/// Largest recurrent class solved by the dense direct route.
pub const DENSE_LIMIT: usize = 4000;

const POWER_MAX_ITER: usize = 20_000_000;
const POWER_TOL: f64 = 1e-14;

/// Sparse generator over empty states `0..num_links` and hired states
/// `num_links + slot`.
#[derive(Clone, Debug)]
pub struct ChainSpec {
    num_links: usize,
    rates: Vec<Vec<(usize, f64)>>,
    recurrent: Vec<bool>,
}

impl ChainSpec {
    pub fn num_states(&self) -> usize {
        self.rates.len()
    }

    pub fn num_links(&self) -> usize {
        self.num_links
    }

    pub fn hired_state(&self, slot: usize) -> usize {
        self.num_links + slot
    }

    /// Off-diagonal rates out of `state`.
    pub fn rates(&self, state: usize) -> &[(usize, f64)] {
        &self.rates[state]
    }

    /// Total outflow rate of `state` (minus the diagonal entry).
    pub fn outflow(&self, state: usize) -> f64 {
        self.rates[state].iter().map(|&(_, r)| r).sum()
    }

    pub fn is_recurrent(&self, state: usize) -> bool {
        self.recurrent[state]
    }

    pub fn recurrent_states(&self) -> Vec<usize> {
        (0..self.num_states()).filter(|&s| self.recurrent[s]).collect()
    }

    /// Dense generator (rows sum to zero). Intended for small chains.
    pub fn generator(&self) -> DMatrix<f64> {
        let k = self.num_states();
        let mut q = DMatrix::zeros(k, k);
        for s in 0..k {
            for &(t, r) in &self.rates[s] {
                q[(s, t)] += r;
                q[(s, s)] -= r;
            }
        }
        q
    }

    /// `||pi Q||_inf` for a distribution over all states.
    pub fn balance_residual(&self, pi: &[f64]) -> f64 {
        let mut flow = vec![0.0; self.num_states()];
        for (s, row) in self.rates.iter().enumerate() {
            for &(t, r) in row {
                flow[t] += pi[s] * r;
                flow[s] -= pi[s] * r;
            }
        }
        flow.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Builds the generator for fixed policies and link environment.
pub fn build_chain(
    policies: &Policies,
    env: &LinkEnv,
    network: &Network,
    demand: &DemandModel,
) -> Result<ChainSpec> {
    check_env(env, network)?;
    let n = network.num_nodes();
    let nl = network.num_links();
    let idx = network.hired_index();
    let mut rates = vec![Vec::new(); nl + idx.len()];

    for (a_prev, link) in network.links().iter().enumerate() {
        let i = link.head;
        let inv_t = 1.0 / env.t[a_prev];
        let m = env.m[a_prev];
        let accept: f64 = (0..n)
            .filter(|&d| d != i)
            .map(|d| demand.dest_prob(i, d) * policies.xi(i, d))
            .sum();
        let stay = 1.0 - m * accept;
        let row = &mut rates[a_prev];
        for &a in network.out_links(i) {
            push(row, a, stay * policies.p[a] * inv_t);
        }
        if m > 0.0 {
            for d in (0..n).filter(|&d| d != i) {
                let hire = m * demand.dest_prob(i, d) * policies.xi(i, d);
                if hire <= 0.0 {
                    continue;
                }
                for &a in network.out_links(i) {
                    let s = idx.slot(a, d).expect("tail != d");
                    push(row, nl + s, hire * policies.q[s] * inv_t);
                }
            }
        }
    }

    for (s_prev, &(a_prev, d)) in idx.entries().iter().enumerate() {
        let i = network.link(a_prev).head;
        let inv_t = 1.0 / env.t[a_prev];
        let row = &mut rates[nl + s_prev];
        for &a in network.out_links(i) {
            if i == d {
                push(row, a, policies.p[a] * inv_t);
            } else {
                let s = idx.slot(a, d).expect("tail != d");
                push(row, nl + s, policies.q[s] * inv_t);
            }
        }
    }

    let states = rates.len();
    Ok(ChainSpec {
        num_links: nl,
        rates,
        recurrent: vec![true; states],
    })
}

fn push(row: &mut Vec<(usize, f64)>, to: usize, rate: f64) {
    if rate > 0.0 {
        row.push((to, rate));
    }
}

/// Which rules removed which states.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PruneReport {
    /// No link has a positive matching probability.
    pub no_matching: bool,
    /// The only node where orders can be received, if there is exactly one.
    pub single_matching_node: Option<usize>,
    /// Destinations no order can be placed for.
    pub unserved_destinations: Vec<usize>,
    /// States removed by the reachability sweep beyond the rules above.
    pub unreachable: usize,
    pub recurrent: usize,
}

/// Marks transient states. The remaining states form a single closed
/// communicating class, otherwise a structural error is returned.
pub fn prune_transient(
    mut chain: ChainSpec,
    env: &LinkEnv,
    network: &Network,
    demand: &DemandModel,
) -> Result<(ChainSpec, PruneReport)> {
    let n = network.num_nodes();
    let nl = network.num_links();
    let idx = network.hired_index();
    let mut report = PruneReport::default();
    let mut pruned = vec![false; chain.num_states()];
    let prune_dest = |d: usize, pruned: &mut [bool]| {
        for s in idx.dest_range(d) {
            pruned[nl + s] = true;
        }
    };

    if env.m.iter().all(|&m| m == 0.0) {
        report.no_matching = true;
        (0..n).for_each(|d| prune_dest(d, &mut pruned));
    } else {
        let matching_nodes: Vec<usize> = (0..n)
            .filter(|&i| network.in_links(i).iter().any(|&a| env.m[a] > 0.0))
            .collect();
        if let [i] = matching_nodes[..] {
            report.single_matching_node = Some(i);
            prune_dest(i, &mut pruned);
        }
        for d in 0..n {
            let weight: f64 = (0..n)
                .filter(|&i| i != d)
                .map(|i| {
                    let m: f64 = network.in_links(i).iter().map(|&a| env.m[a]).sum();
                    m * demand.dest_prob(i, d)
                })
                .sum();
            if weight == 0.0 {
                report.unserved_destinations.push(d);
                prune_dest(d, &mut pruned);
            }
        }
    }
    let by_rules = pruned.iter().filter(|&&p| p).count();

    let mut g = DiGraph::<(), ()>::with_capacity(chain.num_states(), 0);
    let nodes: Vec<_> = (0..chain.num_states()).map(|_| g.add_node(())).collect();
    for (s, row) in chain.rates.iter().enumerate() {
        for &(t, _) in row {
            g.add_edge(nodes[s], nodes[t], ());
        }
    }
    let sccs = tarjan_scc(&g);
    let mut comp = vec![0usize; chain.num_states()];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            comp[v.index()] = c;
        }
    }
    let mut closed = vec![true; sccs.len()];
    for (s, row) in chain.rates.iter().enumerate() {
        if row.iter().any(|&(t, _)| comp[t] != comp[s]) {
            closed[comp[s]] = false;
        }
    }
    let closed_classes: Vec<usize> = (0..sccs.len()).filter(|&c| closed[c]).collect();
    if closed_classes.len() != 1 {
        return Err(MterError::Structural(format!(
            "vehicle chain has {} closed classes, expected exactly one",
            closed_classes.len()
        )));
    }
    let rec = closed_classes[0];
    for s in 0..chain.num_states() {
        let recurrent = comp[s] == rec;
        if recurrent && pruned[s] {
            return Err(MterError::Structural(format!(
                "state {s} was pruned by rule but is recurrent"
            )));
        }
        pruned[s] = !recurrent;
    }
    let transient = pruned.iter().filter(|&&p| p).count();
    report.unreachable = transient - by_rules;
    report.recurrent = chain.num_states() - transient;
    chain.recurrent = pruned.iter().map(|&p| !p).collect();
    Ok((chain, report))
}

/// Stationary distribution over the recurrent class scaled to `pool`
/// vehicles. Transient states get exactly zero mass.
pub fn stationary_masses(chain: &ChainSpec, pool: f64, solver: StationarySolver) -> Result<MassDistribution> {
    let rec = chain.recurrent_states();
    if rec.is_empty() {
        return Err(MterError::Structural("empty recurrent class".into()));
    }
    let mut pos = vec![usize::MAX; chain.num_states()];
    for (k, &s) in rec.iter().enumerate() {
        pos[s] = k;
    }
    let pi_rec = match solver {
        StationarySolver::Power => power_iteration(chain, &rec, &pos)?,
        _ => direct_solve(chain, &rec, &pos)?,
    };
    let mut pi = vec![0.0; chain.num_states()];
    for (k, &s) in rec.iter().enumerate() {
        pi[s] = pi_rec[k];
    }
    let max_rate = (0..chain.num_states())
        .map(|s| chain.outflow(s))
        .fold(1.0, f64::max);
    let residual = chain.balance_residual(&pi);
    if residual > 1e-10 * max_rate {
        return Err(MterError::Numerical(format!(
            "stationary balance residual {residual:e} exceeds tolerance"
        )));
    }
    let nl = chain.num_links();
    Ok(MassDistribution {
        x: pi[..nl].iter().map(|p| p * pool).collect(),
        y: pi[nl..].iter().map(|p| p * pool).collect(),
    })
}

fn direct_solve(chain: &ChainSpec, rec: &[usize], pos: &[usize]) -> Result<Vec<f64>> {
    let k = rec.len();
    if k > DENSE_LIMIT {
        return Err(MterError::Numerical(format!(
            "{k} recurrent states exceed the dense solver limit of {DENSE_LIMIT}; use the blocked solver"
        )));
    }
    // Transposed generator restricted to the class; last balance row replaced
    // by the normalization.
    let mut a = DMatrix::<f64>::zeros(k, k);
    for (col, &s) in rec.iter().enumerate() {
        for &(t, r) in chain.rates(s) {
            if pos[t] != usize::MAX {
                a[(pos[t], col)] += r;
            }
            a[(col, col)] -= r;
        }
    }
    for c in 0..k {
        a[(k - 1, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(k);
    b[k - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| MterError::Numerical("singular rank-completed generator".into()))?;
    Ok(clip_normalize(x.iter().copied().collect()))
}

fn power_iteration(chain: &ChainSpec, rec: &[usize], pos: &[usize]) -> Result<Vec<f64>> {
    let k = rec.len();
    let lambda = 1.05
        * rec
            .iter()
            .map(|&s| chain.outflow(s))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
    let local: Vec<Vec<(usize, f64)>> = rec
        .iter()
        .map(|&s| {
            chain
                .rates(s)
                .iter()
                .filter(|&&(t, _)| pos[t] != usize::MAX)
                .map(|&(t, r)| (pos[t], r / lambda))
                .collect()
        })
        .collect();
    let stay: Vec<f64> = rec.iter().map(|&s| 1.0 - chain.outflow(s) / lambda).collect();
    let mut pi = vec![1.0 / k as f64; k];
    let mut next = vec![0.0; k];
    let mut change = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        for (nx, (p, st)) in next.iter_mut().zip(pi.iter().zip(&stay)) {
            *nx = p * st;
        }
        for (s, row) in local.iter().enumerate() {
            for &(t, r) in row {
                next[t] += pi[s] * r;
            }
        }
        let total: f64 = next.iter().sum();
        change = 0.0;
        for (p, nx) in pi.iter_mut().zip(&next) {
            let v = nx / total;
            change += (v - *p).abs();
            *p = v;
        }
        if change <= POWER_TOL {
            return Ok(pi);
        }
    }
    Err(MterError::Convergence {
        stage: "power iteration",
        iterations: POWER_MAX_ITER,
        residual: change,
    })
}

pub(super) fn clip_normalize(mut v: Vec<f64>) -> Vec<f64> {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}
