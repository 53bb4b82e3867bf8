//! Road network, passenger demand and the two exogenous response functions
//! (link travel time and matching probability).

mod demand;
mod fares;
mod tntp;

use serde::{Deserialize, Serialize};

use crate::error::{MterError, Result};

pub use demand::{apply_lambda_overrides, apply_tolls, derive_demand, OdMatrix};
pub use fares::{compute_fares, free_flow_times, FareParams};
pub use tntp::{
    parse_link_file, parse_network, parse_od_file, CapacitySource, LengthSource, ParseOptions, ParseReport,
    TimeUnit,
};

pub const KM_PER_MILE: f64 = 1.609344;

/// Link travel time as a function of link mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TravelTimeFn {
    /// `t0 * (1 + u / c)`.
    Linear { free_flow: f64, jam_capacity: f64 },
    /// `t0 / (1 - u / c)`, defined for `u < c`.
    Hyperbolic { free_flow: f64, jam_capacity: f64 },
}

impl TravelTimeFn {
    pub fn linear(free_flow: f64, jam_capacity: f64) -> Self {
        TravelTimeFn::Linear {
            free_flow,
            jam_capacity,
        }
    }

    pub fn free_flow(&self) -> f64 {
        match *self {
            TravelTimeFn::Linear { free_flow, .. } | TravelTimeFn::Hyperbolic { free_flow, .. } => free_flow,
        }
    }

    pub fn jam_capacity(&self) -> f64 {
        match *self {
            TravelTimeFn::Linear { jam_capacity, .. } | TravelTimeFn::Hyperbolic { jam_capacity, .. } => {
                jam_capacity
            }
        }
    }

    /// Evaluates the travel time. `u` is assumed nonnegative.
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            TravelTimeFn::Linear {
                free_flow,
                jam_capacity,
            } => free_flow * (1.0 + u / jam_capacity),
            TravelTimeFn::Hyperbolic {
                free_flow,
                jam_capacity,
            } => {
                if u >= jam_capacity {
                    f64::INFINITY
                } else {
                    free_flow / (1.0 - u / jam_capacity)
                }
            }
        }
    }

    /// d t / d u.
    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            TravelTimeFn::Linear {
                free_flow,
                jam_capacity,
            } => free_flow / jam_capacity,
            TravelTimeFn::Hyperbolic {
                free_flow,
                jam_capacity,
            } => {
                let r = 1.0 - u / jam_capacity;
                free_flow / (jam_capacity * r * r)
            }
        }
    }

    pub fn with_free_flow(self, t0: f64) -> Self {
        match self {
            TravelTimeFn::Linear { jam_capacity, .. } => TravelTimeFn::Linear {
                free_flow: t0,
                jam_capacity,
            },
            TravelTimeFn::Hyperbolic { jam_capacity, .. } => TravelTimeFn::Hyperbolic {
                free_flow: t0,
                jam_capacity,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// 1-based position in the source file.
    pub id: usize,
    pub tail: usize,
    pub head: usize,
    pub time_fn: TravelTimeFn,
    pub length_km: f64,
    /// Passenger arrivals per hour.
    pub arrival_rate: f64,
    pub toll: f64,
    /// Matching friction.
    pub friction: f64,
    /// Constant non-fleet mass added to the link.
    #[serde(default)]
    pub background: f64,
}

impl Link {
    pub fn new(id: usize, tail: usize, head: usize, time_fn: TravelTimeFn, length_km: f64) -> Self {
        Link {
            id,
            tail,
            head,
            time_fn,
            length_km,
            arrival_rate: 0.0,
            toll: 0.0,
            friction: 0.8,
            background: 0.0,
        }
    }

    pub fn free_flow_time(&self) -> f64 {
        self.time_fn.free_flow()
    }

    /// Travel time at fleet mass `u` (background traffic included).
    #[inline]
    pub fn time_at(&self, u: f64) -> f64 {
        self.time_fn.eval(u + self.background)
    }

    /// Matching probability at empty flow `f` (vehicles per hour).
    #[inline]
    pub fn matching_at(&self, f: f64) -> f64 {
        let lambda = self.arrival_rate;
        if lambda <= 0.0 {
            return 0.0;
        }
        if f <= 0.0 {
            return 1.0;
        }
        let ratio = lambda / f;
        ratio.min(-(-self.friction * ratio).exp_m1())
    }

    fn validate(&self) -> Result<()> {
        let t0 = self.free_flow_time();
        if !(t0 > 0.0) || !t0.is_finite() {
            return Err(MterError::Validation(format!(
                "link {} has non-positive free-flow time {t0}",
                self.id
            )));
        }
        if !(self.time_fn.jam_capacity() > 0.0) {
            return Err(MterError::Validation(format!(
                "link {} has non-positive jam capacity",
                self.id
            )));
        }
        if !(self.arrival_rate >= 0.0) {
            return Err(MterError::Validation(format!(
                "link {} has negative arrival rate",
                self.id
            )));
        }
        if !(self.friction > 0.0) {
            return Err(MterError::Validation(format!(
                "link {} has non-positive friction",
                self.id
            )));
        }
        if !(self.toll >= 0.0) || !(self.background >= 0.0) || !(self.length_km >= 0.0) {
            return Err(MterError::Validation(format!(
                "link {} has a negative toll, length or background mass",
                self.id
            )));
        }
        Ok(())
    }
}

/// Travel time with a domain check on `u`.
pub fn travel_time(link: &Link, u: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(MterError::Domain(format!("negative link mass {u}")));
    }
    Ok(link.time_at(u))
}

/// Probability that an empty vehicle finishing the link has received an order,
/// given empty flow `f`.
pub fn matching_probability(link: &Link, f: f64) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(MterError::Domain(format!("negative empty flow {f}")));
    }
    Ok(link.matching_at(f))
}

/// Compressed index over hired states `(link, destination)` with the link not
/// leaving the destination.
#[derive(Clone, Debug)]
pub struct HiredIndex {
    num_links: usize,
    slots: Vec<u32>,
    start: Vec<usize>,
    entries: Vec<(usize, usize)>,
}

const NO_SLOT: u32 = u32::MAX;

impl HiredIndex {
    fn build(num_nodes: usize, links: &[Link]) -> Self {
        let num_links = links.len();
        let mut slots = vec![NO_SLOT; num_links * num_nodes];
        let mut start = Vec::with_capacity(num_nodes + 1);
        let mut entries = Vec::new();
        for d in 0..num_nodes {
            start.push(entries.len());
            for (a, link) in links.iter().enumerate() {
                if link.tail != d {
                    slots[d * num_links + a] = entries.len() as u32;
                    entries.push((a, d));
                }
            }
        }
        start.push(entries.len());
        HiredIndex {
            num_links,
            slots,
            start,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Slot of `(link, dest)`, `None` when the link leaves `dest`.
    #[inline]
    pub fn slot(&self, link: usize, dest: usize) -> Option<usize> {
        let s = self.slots[dest * self.num_links + link];
        (s != NO_SLOT).then_some(s as usize)
    }

    /// `(link, dest)` of a slot.
    #[inline]
    pub fn entry(&self, slot: usize) -> (usize, usize) {
        self.entries[slot]
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    /// Slot range holding destination `dest`.
    pub fn dest_range(&self, dest: usize) -> std::ops::Range<usize> {
        self.start[dest]..self.start[dest + 1]
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    labels: Vec<u32>,
    links: Vec<Link>,
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
    pool_size: f64,
    hired: HiredIndex,
}

impl Network {
    /// Builds a network over nodes `0..labels.len()`; link endpoints are node
    /// indices.
    pub fn new(labels: Vec<u32>, links: Vec<Link>, pool_size: f64) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(MterError::Structural("network has no nodes".into()));
        }
        if links.is_empty() {
            return Err(MterError::Structural("network has no links".into()));
        }
        if !(pool_size > 0.0) {
            return Err(MterError::Validation(format!(
                "pool size must be positive, got {pool_size}"
            )));
        }
        let mut out_links = vec![Vec::new(); n];
        let mut in_links = vec![Vec::new(); n];
        for (a, link) in links.iter().enumerate() {
            if link.tail >= n || link.head >= n {
                return Err(MterError::Structural(format!(
                    "link {} references a node outside 0..{n}",
                    link.id
                )));
            }
            if link.tail == link.head {
                return Err(MterError::Structural(format!(
                    "link {} is a self-loop at node {}",
                    link.id, labels[link.tail]
                )));
            }
            link.validate()?;
            out_links[link.tail].push(a);
            in_links[link.head].push(a);
        }
        for i in 0..n {
            if out_links[i].is_empty() || in_links[i].is_empty() {
                return Err(MterError::Structural(format!(
                    "node {} needs at least one incoming and one outgoing link",
                    labels[i]
                )));
            }
        }
        let hired = HiredIndex::build(n, &links);
        let net = Network {
            labels,
            links,
            out_links,
            in_links,
            pool_size,
            hired,
        };
        if !net.is_strongly_connected() {
            log::warn!("network is not strongly connected");
        }
        Ok(net)
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> u32 {
        self.labels[node]
    }

    pub fn node_of_label(&self, label: u32) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, a: usize) -> &Link {
        &self.links[a]
    }

    pub fn out_links(&self, node: usize) -> &[usize] {
        &self.out_links[node]
    }

    pub fn in_links(&self, node: usize) -> &[usize] {
        &self.in_links[node]
    }

    pub fn pool_size(&self) -> f64 {
        self.pool_size
    }

    pub fn hired_index(&self) -> &HiredIndex {
        &self.hired
    }

    /// Number of hired states `(a, d)` with `a` not leaving `d`.
    pub fn num_hired_states(&self) -> usize {
        self.hired.len()
    }

    pub fn find_link(&self, tail_label: u32, head_label: u32) -> Option<usize> {
        let tail = self.node_of_label(tail_label)?;
        self.out_links[tail]
            .iter()
            .copied()
            .find(|&a| self.labels[self.links[a].head] == head_label)
    }

    pub fn min_free_flow_time(&self) -> f64 {
        self.links
            .iter()
            .map(Link::free_flow_time)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn total_arrival_rate(&self) -> f64 {
        self.links.iter().map(|l| l.arrival_rate).sum()
    }

    pub fn is_strongly_connected(&self) -> bool {
        let reach = |adj: &dyn Fn(usize) -> Vec<usize>| {
            let mut seen = vec![false; self.num_nodes()];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in adj(i) {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(&|i| self.out_links[i].iter().map(|&a| self.links[a].head).collect())
            && reach(&|i| self.in_links[i].iter().map(|&a| self.links[a].tail).collect())
    }

    pub fn with_pool_size(mut self, pool_size: f64) -> Result<Self> {
        if !(pool_size > 0.0) {
            return Err(MterError::Validation(format!(
                "pool size must be positive, got {pool_size}"
            )));
        }
        self.pool_size = pool_size;
        Ok(self)
    }

    /// Mutable access to link attributes that do not change the topology.
    pub fn update_links(&mut self, f: impl FnOnce(&mut [Link])) -> Result<()> {
        f(&mut self.links);
        for link in &self.links {
            link.validate()?;
        }
        Ok(())
    }
}

/// Destination probabilities and fares, both `n x n` row-major by origin.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DemandModel {
    num_nodes: usize,
    dest_prob: Vec<f64>,
    fares: Vec<f64>,
}

impl DemandModel {
    pub fn new(num_nodes: usize, dest_prob: Vec<f64>, fares: Vec<f64>) -> Result<Self> {
        if dest_prob.len() != num_nodes * num_nodes || fares.len() != num_nodes * num_nodes {
            return Err(MterError::Validation("demand matrices must be n x n".into()));
        }
        Ok(DemandModel {
            num_nodes,
            dest_prob,
            fares,
        })
    }

    /// Builds a model from per-origin destination probability rows.
    pub fn from_rows(dest_prob: &[Vec<f64>], fares: &[Vec<f64>]) -> Result<Self> {
        let n = dest_prob.len();
        let flat = |rows: &[Vec<f64>]| -> Result<Vec<f64>> {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(MterError::Validation("demand rows must be n x n".into()));
            }
            Ok(rows.iter().flatten().copied().collect())
        };
        DemandModel::new(n, flat(dest_prob)?, flat(fares)?)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn dest_prob(&self, origin: usize, dest: usize) -> f64 {
        self.dest_prob[origin * self.num_nodes + dest]
    }

    pub fn dest_row(&self, origin: usize) -> &[f64] {
        &self.dest_prob[origin * self.num_nodes..(origin + 1) * self.num_nodes]
    }

    #[inline]
    pub fn fare(&self, origin: usize, dest: usize) -> f64 {
        self.fares[origin * self.num_nodes + dest]
    }

    pub fn fare_row(&self, origin: usize) -> &[f64] {
        &self.fares[origin * self.num_nodes..(origin + 1) * self.num_nodes]
    }

    pub fn set_fares(&mut self, fares: Vec<f64>) -> Result<()> {
        if fares.len() != self.num_nodes * self.num_nodes {
            return Err(MterError::Validation("fare matrix must be n x n".into()));
        }
        self.fares = fares;
        Ok(())
    }

    pub fn scale_fares(&mut self, factor: f64) {
        for f in &mut self.fares {
            *f *= factor;
        }
    }

    /// Checks the simplex invariant at every node with positive incoming
    /// arrivals and the base-fare floor.
    pub fn validate(&self, network: &Network, base_fare: f64) -> Result<()> {
        if self.num_nodes != network.num_nodes() {
            return Err(MterError::Validation(
                "demand model and network disagree on node count".into(),
            ));
        }
        for i in 0..self.num_nodes {
            let row = self.dest_row(i);
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(MterError::Validation(format!(
                    "negative destination probability at node {}",
                    network.label(i)
                )));
            }
            let incoming: f64 = network
                .in_links(i)
                .iter()
                .map(|&a| network.link(a).arrival_rate)
                .sum();
            if incoming > 0.0 {
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-9 || row[i] != 0.0 {
                    return Err(MterError::Validation(format!(
                        "destination probabilities at node {} do not form a simplex over other nodes",
                        network.label(i)
                    )));
                }
            }
            for (d, &pr) in row.iter().enumerate() {
                if d != i && pr > 0.0 && self.fare(i, d) < base_fare - 1e-12 {
                    return Err(MterError::Validation(format!(
                        "fare {}->{} below the base fare",
                        network.label(i),
                        network.label(d)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A network together with its demand model.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub network: Network,
    pub demand: DemandModel,
}

impl Scenario {
    pub fn new(network: Network, demand: DemandModel) -> Result<Self> {
        if demand.num_nodes() != network.num_nodes() {
            return Err(MterError::Validation(
                "demand model and network disagree on node count".into(),
            ));
        }
        Ok(Scenario { network, demand })
    }
}
