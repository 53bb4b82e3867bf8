use petgraph::algo::dijkstra;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{MterError, Result};

/// Distance-based fare schedule: `base + per_unit * miles / unit_miles`, with
/// miles taken as fastest free-flow time times `speed_mph`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FareParams {
    pub base: f64,
    pub per_unit: f64,
    pub unit_miles: f64,
    pub speed_mph: f64,
}

impl Default for FareParams {
    fn default() -> Self {
        FareParams {
            base: 3.0,
            per_unit: 0.70,
            unit_miles: 0.2,
            speed_mph: 40.0,
        }
    }
}

impl FareParams {
    pub fn fare_for_time(&self, hours: f64) -> f64 {
        self.base + self.per_unit * hours * self.speed_mph / self.unit_miles
    }
}

/// All-pairs fastest free-flow times (hours); `INFINITY` when unreachable.
pub fn free_flow_times(network: &Network) -> Vec<f64> {
    let n = network.num_nodes();
    let mut g = DiGraph::<(), f64>::with_capacity(n, network.num_links());
    let nodes: Vec<NodeIndex> = (0..n).map(|_| g.add_node(())).collect();
    for link in network.links() {
        g.add_edge(nodes[link.tail], nodes[link.head], link.free_flow_time());
    }
    let mut out = vec![f64::INFINITY; n * n];
    for (i, &src) in nodes.iter().enumerate() {
        for (node, dist) in dijkstra(&g, src, None, |e| *e.weight()) {
            out[i * n + node.index()] = dist;
        }
    }
    out
}

/// Fare matrix (row-major by origin) for every pair with positive destination
/// probability. Pairs never demanded get the base fare.
pub fn compute_fares(network: &Network, dest_prob: &[f64], params: &FareParams) -> Result<Vec<f64>> {
    let n = network.num_nodes();
    let times = free_flow_times(network);
    let mut fares = vec![params.base; n * n];
    for j in 0..n {
        for d in 0..n {
            if j == d {
                continue;
            }
            let t = times[j * n + d];
            if t.is_finite() {
                fares[j * n + d] = params.fare_for_time(t);
            } else if dest_prob[j * n + d] > 0.0 {
                return Err(MterError::Structural(format!(
                    "destination {} is unreachable from {} but has positive demand",
                    network.label(d),
                    network.label(j)
                )));
            }
        }
    }
    Ok(fares)
}
