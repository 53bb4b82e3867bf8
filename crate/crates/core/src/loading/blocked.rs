//! Node-level reduction of the vehicle chain.
//!
//! Let `E_k` be the rate at which empty vehicles leave node `k`. An empty
//! vehicle leaving `k` on link `a` next leaves empty from `head(a)` if it is
//! not hired there, or from the order's destination after the hired trip. So
//! `E` is stationary for the node-level stochastic matrix `K` below, and the
//! hired flows to each destination solve one linear system given `E`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::chain::clip_normalize;
use super::{check_env, LinkEnv, MassDistribution};
use crate::error::{MterError, Result};
use crate::network::{DemandModel, Network};
use crate::smdp::Policies;

const DENSE_NODES: usize = 2500;
const DENSE_DEST: usize = 400;
const ITER_TOL: f64 = 1e-13;
const ITER_MAX: usize = 1_000_000;

/// Stationary masses via the node-level reduction.
pub fn load_blocked(
    policies: &Policies,
    env: &LinkEnv,
    network: &Network,
    demand: &DemandModel,
    pool: f64,
) -> Result<MassDistribution> {
    check_env(env, network)?;
    let n = network.num_nodes();
    let idx = network.hired_index();

    // Per-link hiring probability to each destination at the head node.
    let accept: Vec<f64> = (0..n)
        .map(|j| {
            (0..n)
                .filter(|&d| d != j)
                .map(|d| demand.dest_prob(j, d) * policies.xi(j, d))
                .sum()
        })
        .collect();

    let mut k = vec![0.0; n * n];
    for (a, link) in network.links().iter().enumerate() {
        let (from, j) = (link.tail, link.head);
        let p = policies.p[a];
        let m = env.m[a];
        let row = &mut k[from * n..(from + 1) * n];
        row[j] += p * (1.0 - m * accept[j]);
        if m > 0.0 {
            for d in (0..n).filter(|&d| d != j) {
                row[d] += p * m * demand.dest_prob(j, d) * policies.xi(j, d);
            }
        }
    }
    let departures = if n <= DENSE_NODES {
        dense_stationary(&k, n)?
    } else {
        iterative_stationary(&k, n)?
    };

    let f: Vec<f64> = network
        .links()
        .iter()
        .enumerate()
        .map(|(a, l)| policies.p[a] * departures[l.tail])
        .collect();

    // Pickups by destination at each node.
    let pickups = |d: usize| -> Vec<f64> {
        let mut s = vec![0.0; n];
        for (a, link) in network.links().iter().enumerate() {
            let j = link.head;
            if j != d && env.m[a] > 0.0 {
                s[j] += f[a] * env.m[a] * demand.dest_prob(j, d) * policies.xi(j, d);
            }
        }
        s
    };
    let solve_dest = |d: usize| -> Result<Vec<f64>> {
        let s = pickups(d);
        let range = idx.dest_range(d);
        let mut h = vec![0.0; range.len()];
        if s.iter().all(|&v| v == 0.0) {
            return Ok(h);
        }
        let g = if n <= DENSE_DEST {
            dense_hired(network, policies, &s, d)?
        } else {
            iterative_hired(network, policies, &s, d)?
        };
        for (k, slot) in range.clone().enumerate() {
            let (a, _) = idx.entry(slot);
            h[k] = policies.q[slot] * g[network.link(a).tail];
        }
        Ok(h)
    };
    let per_dest: Vec<Vec<f64>> = if idx.len() >= 1 << 15 {
        (0..n).into_par_iter().map(solve_dest).collect::<Result<_>>()?
    } else {
        (0..n).map(solve_dest).collect::<Result<_>>()?
    };

    let mut dist = MassDistribution {
        x: f.iter().zip(&env.t).map(|(f, t)| f * t).collect(),
        y: Vec::with_capacity(idx.len()),
    };
    for h in per_dest {
        dist.y.extend(h);
    }
    for (slot, y) in dist.y.iter_mut().enumerate() {
        *y *= env.t[idx.entry(slot).0];
    }
    let total = dist.total();
    if !(total > 0.0) || !total.is_finite() {
        return Err(MterError::Numerical(format!("loaded mass is {total}")));
    }
    dist.scale(pool / total);
    Ok(dist)
}

/// Left stationary vector of row-stochastic `k` by a rank-completed solve.
fn dense_stationary(k: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut a = DMatrix::<f64>::zeros(n, n);
    for from in 0..n {
        for to in 0..n {
            a[(to, from)] = k[from * n + to];
        }
        a[(from, from)] -= 1.0;
    }
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| MterError::Structural("empty-vehicle node chain is not unichain".into()))?;
    Ok(clip_normalize(x.iter().copied().collect()))
}

fn iterative_stationary(k: &[f64], n: usize) -> Result<Vec<f64>> {
    // Lazy chain, aperiodic by construction.
    let mut e = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut change = f64::INFINITY;
    for _ in 0..ITER_MAX {
        next.par_iter_mut().enumerate().for_each(|(to, v)| {
            let inflow: f64 = (0..n).map(|from| e[from] * k[from * n + to]).sum();
            *v = 0.5 * (e[to] + inflow);
        });
        change = e.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut e, &mut next);
        if change <= ITER_TOL {
            return Ok(clip_normalize(e));
        }
    }
    Err(MterError::Convergence {
        stage: "node-level stationary solve",
        iterations: ITER_MAX,
        residual: change,
    })
}

/// Hired departure rates from each node towards `d`:
/// `g_i = s_i + sum_{a: k -> i, k != d} q_a g_k` for `i != d`.
fn dense_hired(network: &Network, policies: &Policies, s: &[f64], d: usize) -> Result<Vec<f64>> {
    let n = network.num_nodes();
    let pos = |i: usize| if i < d { i } else { i - 1 };
    let mut a = DMatrix::<f64>::identity(n - 1, n - 1);
    let mut b = DVector::zeros(n - 1);
    let idx = network.hired_index();
    for i in (0..n).filter(|&i| i != d) {
        b[pos(i)] = s[i];
        for &l in network.in_links(i) {
            let from = network.link(l).tail;
            if from != d {
                a[(pos(i), pos(from))] -= policies.q[idx.slot(l, d).expect("tail != d")];
            }
        }
    }
    let x = a.lu().solve(&b).ok_or_else(|| {
        MterError::Structural(format!(
            "hired vehicles cannot reach destination {}",
            network.label(d)
        ))
    })?;
    let mut g = vec![0.0; n];
    for i in (0..n).filter(|&i| i != d) {
        g[i] = x[pos(i)].max(0.0);
    }
    Ok(g)
}

fn iterative_hired(network: &Network, policies: &Policies, s: &[f64], d: usize) -> Result<Vec<f64>> {
    let n = network.num_nodes();
    let idx = network.hired_index();
    let mut g = s.to_vec();
    g[d] = 0.0;
    let scale = s.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let mut change = f64::INFINITY;
    for _ in 0..ITER_MAX {
        change = 0.0;
        for i in (0..n).filter(|&i| i != d) {
            let mut v = s[i];
            for &l in network.in_links(i) {
                let from = network.link(l).tail;
                if from != d {
                    v += policies.q[idx.slot(l, d).expect("tail != d")] * g[from];
                }
            }
            change = f64::max(change, (v - g[i]).abs());
            g[i] = v;
        }
        if change <= ITER_TOL * scale {
            return Ok(g);
        }
    }
    Err(MterError::Convergence {
        stage: "hired flow solve",
        iterations: ITER_MAX,
        residual: change,
    })
}
