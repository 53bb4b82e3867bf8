//! Small reference networks used by tests, the command line and the demo.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::network::{
    compute_fares, parse_network, DemandModel, FareParams, Link, Network, ParseOptions, ParseReport,
    Scenario, TravelTimeFn, KM_PER_MILE,
};

fn fare_scenario(network: Network, dest_prob: Vec<f64>) -> Result<Scenario> {
    let fares = compute_fares(&network, &dest_prob, &FareParams::default())?;
    let demand = DemandModel::new(network.num_nodes(), dest_prob, fares)?;
    Scenario::new(network, demand)
}

fn uniform_rows(n: usize) -> Vec<f64> {
    let mut rows = vec![0.0; n * n];
    if n > 1 {
        for i in 0..n {
            for d in (0..n).filter(|&d| d != i) {
                rows[i * n + d] = 1.0 / (n - 1) as f64;
            }
        }
    }
    rows
}

fn ff_length_km(t0: f64) -> f64 {
    t0 * 40.0 * KM_PER_MILE
}

/// Two nodes joined by one link each way, no passengers.
pub fn two_cycle(free_flow: f64, capacity: f64, pool: f64) -> Result<Scenario> {
    let f = TravelTimeFn::linear(free_flow, capacity);
    let links = vec![
        Link::new(1, 0, 1, f, ff_length_km(free_flow)),
        Link::new(2, 1, 0, f, ff_length_km(free_flow)),
    ];
    fare_scenario(Network::new(vec![1, 2], links, pool)?, uniform_rows(2))
}

/// Two nodes joined by a 15 km link each way with arrivals `lambda` on both.
pub fn shuttle(lambda: f64, friction: f64, pool: f64) -> Result<Scenario> {
    let t0 = 15.0 / (40.0 * KM_PER_MILE);
    let mut links = vec![
        Link::new(1, 0, 1, TravelTimeFn::linear(t0, 5000.0), 15.0),
        Link::new(2, 1, 0, TravelTimeFn::linear(t0, 5000.0), 15.0),
    ];
    for l in &mut links {
        l.arrival_rate = lambda;
        l.friction = friction;
    }
    fare_scenario(Network::new(vec![1, 2], links, pool)?, uniform_rows(2))
}

/// Two parallel links `1 -> 2` with `t = 1/(1 - 2u)` and a return link
/// `2 -> 1` with `t = 1/(1 - u)`; unit pool, all passengers board at node 1
/// and ride to node 2.
pub fn continuum() -> Result<Scenario> {
    let par = TravelTimeFn::Hyperbolic {
        free_flow: 1.0,
        jam_capacity: 0.5,
    };
    let back = TravelTimeFn::Hyperbolic {
        free_flow: 1.0,
        jam_capacity: 1.0,
    };
    let mut links = vec![
        Link::new(1, 0, 1, par, 1.0),
        Link::new(2, 0, 1, par, 1.0),
        Link::new(3, 1, 0, back, 1.0),
    ];
    links[2].arrival_rate = 1.0;
    let network = Network::new(vec![1, 2], links, 1.0)?;
    let demand = DemandModel::new(2, vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 10.0, 10.0, 0.0])?;
    Scenario::new(network, demand)
}

/// Single directed cycle `0 -> 1 -> ... -> 0` with linear times, no
/// passengers.
pub fn directed_cycle(free_flow: &[f64], capacity: f64, pool: f64) -> Result<Scenario> {
    let n = free_flow.len();
    let links = free_flow
        .iter()
        .enumerate()
        .map(|(k, &t0)| {
            Link::new(
                k + 1,
                k,
                (k + 1) % n,
                TravelTimeFn::linear(t0, capacity),
                ff_length_km(t0),
            )
        })
        .collect();
    fare_scenario(
        Network::new((1..=n as u32).collect(), links, pool)?,
        uniform_rows(n),
    )
}

/// The four-node Braess network: origin 0, destination 3, passengers arrive
/// on the return link `3 -> 0`. With `bridge`, a zero-time uncongestible link
/// `1 -> 2` is added.
pub fn braess(bridge: bool, lambda: f64, pool: f64) -> Result<Scenario> {
    let mk = |id, tail, head, t0: f64, cap| {
        Link::new(id, tail, head, TravelTimeFn::linear(t0, cap), ff_length_km(t0))
    };
    let mut links = vec![
        mk(1, 0, 1, 0.009, 150.0),
        mk(2, 1, 3, 0.012, 200.0),
        mk(3, 0, 2, 0.012, 200.0),
        mk(4, 2, 3, 0.009, 200.0),
        mk(5, 3, 0, 0.012, 200.0),
    ];
    links[4].arrival_rate = lambda;
    if bridge {
        links.push(mk(6, 1, 2, 1e-6, 1e12));
    }
    let network = Network::new(vec![0, 1, 2, 3], links, pool)?;
    let mut dest = uniform_rows(4);
    dest[..4].copy_from_slice(&[0.0, 0.0, 0.0, 1.0]);
    fare_scenario(network, dest)
}

/// Seven-node network of the myopic-driver study: downtown nodes 1-4, airport
/// node 5, suburbs 6-7.
pub fn myopic_study(pool: f64) -> Result<Scenario> {
    // (a, b, km, hours) for each bidirectional pair, labels 1-based.
    let pairs = [
        (1, 2, 15.0, 0.3),
        (1, 5, 15.0, 0.3),
        (2, 3, 5.0, 0.1),
        (2, 4, 5.0, 0.1),
        (3, 4, 5.0, 0.1),
        (5, 6, 5.0, 0.1),
        (5, 7, 5.0, 0.1),
        (6, 7, 5.0, 0.1),
    ];
    let low = [1u32, 5, 6, 7];
    let mut links = Vec::new();
    for &(a, b, km, t0) in &pairs {
        let cap = 2.0 * km * 1000.0 / 6.0;
        for (tail, head) in [(a, b), (b, a)] {
            let mut l = Link::new(
                links.len() + 1,
                tail as usize - 1,
                head as usize - 1,
                TravelTimeFn::linear(t0, cap),
                km,
            );
            l.arrival_rate = if low.contains(&tail) && low.contains(&head) {
                1000.0
            } else {
                5000.0
            };
            links.push(l);
        }
    }
    let network = Network::new((1..=7).collect(), links, pool)?;
    #[rustfmt::skip]
    let dest = vec![
        0.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.0,
        0.1, 0.0, 0.9, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.1, 0.0, 0.0, 0.0, 0.0, 0.9, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0,
    ];
    fare_scenario(network, dest)
}

/// Random strongly connected network on `nodes` nodes (a bidirectional ring
/// plus random chords) with random times, arrivals and destinations.
pub fn random_small(seed: u64, nodes: usize, pool: f64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arcs: Vec<(usize, usize)> = Vec::new();
    for i in 0..nodes {
        for arc in [(i, (i + 1) % nodes), ((i + 1) % nodes, i)] {
            if !arcs.contains(&arc) {
                arcs.push(arc);
            }
        }
    }
    for i in 0..nodes {
        for j in 0..nodes {
            if i != j && !arcs.contains(&(i, j)) && rng.random::<f64>() < 0.3 {
                arcs.push((i, j));
            }
        }
    }
    let links = arcs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let t0 = rng.random_range(0.05..0.3);
            let mut l = Link::new(
                k + 1,
                i,
                j,
                TravelTimeFn::linear(t0, rng.random_range(20.0..80.0)),
                ff_length_km(t0),
            );
            l.arrival_rate = if rng.random::<f64>() < 0.8 {
                rng.random_range(5.0..60.0)
            } else {
                0.0
            };
            l.friction = rng.random_range(0.5..1.2);
            l
        })
        .collect();
    let network = Network::new((1..=nodes as u32).collect(), links, pool)?;
    let mut dest = vec![0.0; nodes * nodes];
    for i in 0..nodes {
        let w: Vec<f64> = (0..nodes)
            .map(|d| if d == i { 0.0 } else { rng.random_range(0.1..1.0) })
            .collect();
        let total: f64 = w.iter().sum();
        for d in 0..nodes {
            dest[i * nodes + d] = w[d] / total;
        }
    }
    fare_scenario(network, dest)
}

/// Sioux Falls from `dir` with the default parse options.
pub fn sioux_falls(dir: &Path, pool: f64) -> Result<(Scenario, ParseReport)> {
    let opts = ParseOptions {
        pool_size: pool,
        ..ParseOptions::default()
    };
    let (network, demand, report) = parse_network(
        &dir.join("SiouxFalls_net.tntp"),
        &dir.join("SiouxFalls_trips.tntp"),
        &opts,
    )?;
    Ok((Scenario::new(network, demand)?, report))
}
