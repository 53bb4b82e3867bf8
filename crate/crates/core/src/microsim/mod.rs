//! Agent-level simulation of the fleet under frozen times, matching
//! probabilities and policies. Used as an independent check on loading.
//!
//! Each vehicle alternates deterministic link traversals with instantaneous
//! decisions at the head node. Time-average occupancy over the window after
//! warm-up estimates the stationary masses; standard errors come from batch
//! means.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MterError, Result};
use crate::loading::{LinkEnv, MassDistribution};
use crate::network::{DemandModel, Network};
use crate::smdp::Policies;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// End of the simulated window, hours.
    pub horizon: f64,
    /// Start of the averaging window, hours.
    pub warmup: f64,
    pub vehicles: usize,
    pub seed: u64,
    /// Number of batches for batch-means standard errors.
    pub batches: usize,
    /// Record trajectories for this many vehicles.
    pub trajectory_vehicles: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 1e4,
            warmup: 100.0,
            vehicles: 200,
            seed: 0,
            batches: 32,
            trajectory_vehicles: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup >= 0.0) || !(self.horizon > self.warmup) || !self.horizon.is_finite() {
            return Err(MterError::Validation(format!(
                "need 0 <= warmup < horizon, got warmup {} horizon {}",
                self.warmup, self.horizon
            )));
        }
        if self.vehicles == 0 {
            return Err(MterError::Validation("at least one vehicle is required".into()));
        }
        if self.batches < 2 {
            return Err(MterError::Validation("at least two batches are required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Empty,
    Hired,
}

/// Entry of a link by one vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub time: f64,
    pub vehicle: usize,
    pub link: usize,
    pub status: Status,
    pub destination: Option<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimResult {
    /// Time-average masses scaled to the pool.
    pub masses: MassDistribution,
    /// Batch-means standard error of each mass, same layout as `masses`.
    pub std_errors: MassDistribution,
    /// Link traversals completed inside the window.
    pub traversals: u64,
    pub trajectory: Vec<TrajectoryRow>,
}

/// Cumulative choice tables over each node's out-links.
struct Tables {
    empty: Vec<Vec<f64>>,
    /// `hired[d * n + j]`, empty when `j == d`.
    hired: Vec<Vec<f64>>,
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

impl Tables {
    fn new(network: &Network, policies: &Policies) -> Self {
        let n = network.num_nodes();
        let empty = (0..n)
            .map(|j| cumulative(network.out_links(j).iter().map(|&a| policies.p[a])))
            .collect();
        let mut hired = vec![Vec::new(); n * n];
        for d in 0..n {
            for j in (0..n).filter(|&j| j != d) {
                hired[d * n + j] = cumulative(
                    network
                        .out_links(j)
                        .iter()
                        .map(|&a| policies.q(network, a, d).unwrap_or(0.0)),
                );
            }
        }
        Tables { empty, hired }
    }
}

fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u = rng.random::<f64>() * cdf.last().copied().unwrap_or(0.0);
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

fn draw_dest(row: &[f64], rng: &mut ChaCha8Rng) -> Option<usize> {
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    for (d, &w) in row.iter().enumerate() {
        if u < w {
            return Some(d);
        }
        u -= w;
    }
    row.iter().rposition(|&w| w > 0.0)
}

struct Ctx<'a> {
    network: &'a Network,
    demand: &'a DemandModel,
    env: &'a LinkEnv,
    policies: &'a Policies,
    tables: Tables,
    config: &'a SimConfig,
    num_states: usize,
}

/// Occupancy time per (batch, state) plus the traversal count.
struct Acc {
    occ: Vec<f64>,
    traversals: u64,
}

impl Ctx<'_> {
    fn batch_len(&self) -> f64 {
        (self.config.horizon - self.config.warmup) / self.config.batches as f64
    }

    /// Adds the part of `[s, e)` inside the window to `state`.
    fn credit(&self, acc: &mut Acc, state: usize, s: f64, e: f64) {
        let (w0, w1) = (self.config.warmup, self.config.horizon);
        let (mut s, e) = (s.max(w0), e.min(w1));
        let len = self.batch_len();
        while s < e {
            let b = (((s - w0) / len) as usize).min(self.config.batches - 1);
            let end = if b + 1 == self.config.batches {
                w1
            } else {
                w0 + (b + 1) as f64 * len
            };
            let stop = e.min(end);
            acc.occ[b * self.num_states + state] += stop - s;
            s = stop;
        }
    }

    fn run_vehicle(&self, v: usize, acc: &mut Acc, traj: Option<&mut Vec<TrajectoryRow>>) {
        let net = self.network;
        let n = net.num_nodes();
        let idx = net.hired_index();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(v as u64);
        let mut link = rng.random_range(0..net.num_links());
        let mut dest: Option<usize> = None;
        let mut now = 0.0;
        let mut traj = traj;
        while now < self.config.horizon {
            let state = match dest {
                None => link,
                Some(d) => net.num_links() + idx.slot(link, d).expect("hired state exists"),
            };
            if let Some(rows) = traj.as_deref_mut() {
                rows.push(TrajectoryRow {
                    time: now,
                    vehicle: v,
                    link: net.link(link).id,
                    status: if dest.is_some() {
                        Status::Hired
                    } else {
                        Status::Empty
                    },
                    destination: dest.map(|d| net.label(d)),
                });
            }
            let end = now + self.env.t[link];
            self.credit(acc, state, now, end);
            if end > self.config.warmup && end <= self.config.horizon {
                acc.traversals += 1;
            }
            now = end;
            let j = net.link(link).head;
            dest = match dest {
                Some(d) if d != j => Some(d),
                Some(_) => None,
                None => {
                    let matched = rng.random::<f64>() < self.env.m[link];
                    if matched {
                        draw_dest(self.demand.dest_row(j), &mut rng)
                            .filter(|&d| d != j && rng.random::<f64>() < self.policies.xi(j, d))
                    } else {
                        None
                    }
                }
            };
            let (cdf, outs) = match dest {
                None => (&self.tables.empty[j], net.out_links(j)),
                Some(d) => (&self.tables.hired[d * n + j], net.out_links(j)),
            };
            link = outs[draw(cdf, &mut rng)];
        }
    }
}

/// Simulates `config.vehicles` independent vehicles. Results depend only on
/// the seed, not on the thread count.
pub fn simulate(
    network: &Network,
    demand: &DemandModel,
    env: &LinkEnv,
    policies: &Policies,
    pool: f64,
    config: &SimConfig,
) -> Result<SimResult> {
    config.validate()?;
    if env.t.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(MterError::Domain(
            "travel times must be positive and finite".into(),
        ));
    }
    if !(pool > 0.0) {
        return Err(MterError::Validation("pool must be positive".into()));
    }
    let ctx = Ctx {
        network,
        demand,
        env,
        policies,
        tables: Tables::new(network, policies),
        config,
        num_states: network.num_links() + network.num_hired_states(),
    };
    let blank = || Acc {
        occ: vec![0.0; config.batches * ctx.num_states],
        traversals: 0,
    };
    const CHUNK: usize = 16;
    let chunks: Vec<(Acc, Vec<TrajectoryRow>)> = (0..config.vehicles)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|vs| {
            let mut acc = blank();
            let mut rows = Vec::new();
            for &v in vs {
                let traj = (v < config.trajectory_vehicles).then_some(&mut rows);
                ctx.run_vehicle(v, &mut acc, traj);
            }
            (acc, rows)
        })
        .collect();

    let mut total = blank();
    let mut trajectory = Vec::new();
    for (acc, rows) in chunks {
        for (t, a) in total.occ.iter_mut().zip(&acc.occ) {
            *t += a;
        }
        total.traversals += acc.traversals;
        trajectory.extend(rows);
    }

    // per-batch mass: pool * occupancy / (vehicles * batch length)
    let scale = pool / (config.vehicles as f64 * ctx.batch_len());
    let b = config.batches as f64;
    let mut mean = vec![0.0; ctx.num_states];
    let mut se = vec![0.0; ctx.num_states];
    for s in 0..ctx.num_states {
        let vals: Vec<f64> = (0..config.batches)
            .map(|k| total.occ[k * ctx.num_states + s] * scale)
            .collect();
        let m = vals.iter().sum::<f64>() / b;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (b - 1.0);
        mean[s] = m;
        se[s] = (var / b).sqrt();
    }
    let split = |v: Vec<f64>| {
        let mut d = MassDistribution::zeros(network);
        d.x.copy_from_slice(&v[..network.num_links()]);
        d.y.copy_from_slice(&v[network.num_links()..]);
        d
    };
    Ok(SimResult {
        masses: split(mean),
        std_errors: split(se),
        traversals: total.traversals,
        trajectory,
    })
}

/// Writes `time,vehicle,link,status,destination`.
pub fn write_trajectory<W: Write>(rows: &[TrajectoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "vehicle", "link", "status", "destination"])
        .map_err(|e| MterError::Io(std::io::Error::other(e)))?;
    for r in rows {
        let status = match r.status {
            Status::Empty => "empty",
            Status::Hired => "hired",
        };
        w.write_record([
            format!("{:.9}", r.time),
            r.vehicle.to_string(),
            r.link.to_string(),
            status.to_string(),
            r.destination.map(|d| d.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| MterError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
