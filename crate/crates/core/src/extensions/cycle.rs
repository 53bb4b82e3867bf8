use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{MterError, Result};
use crate::network::{Network, TravelTimeFn};

/// Points per link on `[0, M]` used to validate the time functions.
const GRID: usize = 1000;

/// A single directed cycle with total mass `mass`. Links are in cycle order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleProblem {
    pub times: Vec<TravelTimeFn>,
    pub mass: f64,
}

impl CycleProblem {
    pub fn new(times: Vec<TravelTimeFn>, mass: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(MterError::Structural("cycle has no links".into()));
        }
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(MterError::Validation(format!(
                "cycle mass {mass} must be positive"
            )));
        }
        Ok(CycleProblem { times, mass })
    }

    /// Extracts the cycle from a network in which every node has exactly one
    /// outgoing link and those links form one loop.
    pub fn from_network(network: &Network) -> Result<Self> {
        let n = network.num_nodes();
        if (0..n).any(|i| network.out_links(i).len() != 1) {
            return Err(MterError::Structural(
                "every node of a cycle needs exactly one outgoing link".into(),
            ));
        }
        let mut order = Vec::with_capacity(n);
        let mut node = 0;
        for _ in 0..n {
            let a = network.out_links(node)[0];
            order.push(a);
            node = network.link(a).head;
            if node == 0 {
                break;
            }
        }
        if order.len() != n || node != 0 {
            return Err(MterError::Structural("links do not form a single cycle".into()));
        }
        let times = order.iter().map(|&a| network.link(a).time_fn).collect();
        CycleProblem::new(times, network.pool_size())
    }

    /// `max u t'(u) / t(u)` over the validation grid. Fails if `u / t(u)` is
    /// not strictly increasing there, i.e. some link is hypercongested.
    pub fn kappa_hat(&self) -> Result<f64> {
        let mut kappa: f64 = 0.0;
        for (a, f) in self.times.iter().enumerate() {
            let mut prev = 0.0;
            for k in 0..=GRID {
                let u = self.mass * k as f64 / GRID as f64;
                let t = f.eval(u);
                if !(t > 0.0) || !t.is_finite() {
                    return Err(MterError::Domain(format!(
                        "link {a}: travel time undefined at mass {u}"
                    )));
                }
                let ratio = u * f.derivative(u) / t;
                let flow = u / t;
                if k > 0 && !(flow > prev) {
                    return Err(MterError::Domain(format!(
                        "link {a}: flow u/t(u) stops increasing at mass {u}"
                    )));
                }
                prev = flow;
                kappa = kappa.max(ratio);
            }
        }
        if kappa >= 1.0 {
            return Err(MterError::Domain(format!(
                "contraction bound {kappa} is not below 1; the cycle is hypercongested"
            )));
        }
        Ok(kappa)
    }

    /// `Phi_a(u) = M t_a(u_a) / sum t(u)`.
    pub fn map(&self, u: &[f64]) -> Vec<f64> {
        let t: Vec<f64> = self.times.iter().zip(u).map(|(f, &x)| f.eval(x)).collect();
        let total: f64 = t.iter().sum();
        t.iter().map(|&x| self.mass * x / total).collect()
    }
}

/// `ln(max_a u_a/v_a) - ln(min_a u_a/v_a)` for positive vectors.
pub fn spread(u: &[f64], v: &[f64]) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in u.iter().zip(v) {
        let r = (a / b).ln();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    hi - lo
}

/// Random interior point of the simplex scaled to `mass`.
pub fn cycle_start(len: usize, mass: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e: Vec<f64> = (0..len).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| mass * x / total).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleSolution {
    pub masses: Vec<f64>,
    /// Common link flow `u_a / t_a(u_a)`.
    pub rho: f64,
    pub kappa_hat: f64,
    /// Largest observed ratio of successive spreads.
    pub empirical_factor: f64,
    /// Spread between successive iterates.
    pub spreads: Vec<f64>,
    pub iterations: usize,
}

/// Iterates the cycle map from `start` (uniform when `None`) until the spread
/// between successive iterates is at most `tol`.
pub fn solve_cycle(
    problem: &CycleProblem,
    start: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<CycleSolution> {
    let kappa_hat = problem.kappa_hat()?;
    let n = problem.times.len();
    let mut u = match start {
        Some(s) if s.len() != n || s.iter().any(|&x| !(x > 0.0)) => {
            return Err(MterError::Validation(
                "cycle start must be positive on every link".into(),
            ))
        }
        Some(s) => {
            let total: f64 = s.iter().sum();
            s.iter().map(|x| problem.mass * x / total).collect()
        }
        None => vec![problem.mass / n as f64; n],
    };
    let mut spreads = Vec::new();
    let mut empirical: f64 = 0.0;
    for k in 1..=max_iter {
        let next = problem.map(&u);
        let d = spread(&next, &u);
        if let Some(&prev) = spreads.last() {
            if prev > 0.0 {
                empirical = empirical.max(d / prev);
            }
        }
        spreads.push(d);
        u = next;
        if d <= tol {
            let rho = u[0] / problem.times[0].eval(u[0]);
            return Ok(CycleSolution {
                masses: u,
                rho,
                kappa_hat,
                empirical_factor: empirical,
                spreads,
                iterations: k,
            });
        }
    }
    Err(MterError::Convergence {
        stage: "cycle map",
        iterations: max_iter,
        residual: spreads.last().copied().unwrap_or(f64::INFINITY),
    })
}
