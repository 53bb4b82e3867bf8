use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::fixtures;
use crate::network::Scenario;
use crate::smdp::{choice_probabilities, solve_values, SmdpParams};

fn env_and_policies(s: &Scenario, seed: u64) -> (LinkEnv, Policies) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = &s.network;
    let mut dist = MassDistribution::zeros(net);
    dist.x.iter_mut().for_each(|x| *x = rng.random_range(0.0..1.0));
    dist.y.iter_mut().for_each(|y| *y = rng.random_range(0.0..0.2));
    dist.scale(net.pool_size() / dist.total());
    let env = masses_to_env(&dist, net);
    let params = SmdpParams::default();
    let v = solve_values(&env, &params, net, &s.demand, &Default::default(), None).unwrap();
    let pol = choice_probabilities(&v.values, &params, net, &s.demand);
    (env, pol)
}

fn rel_diff(a: &MassDistribution, b: &MassDistribution) -> f64 {
    let scale = a.iter().copied().fold(0.0, f64::max);
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

#[test]
fn generator_rows_sum_to_zero() {
    for seed in 0..4 {
        let s = fixtures::random_small(seed, 5, 100.0).unwrap();
        let (env, pol) = env_and_policies(&s, seed);
        let chain = build_chain(&pol, &env, &s.network, &s.demand).unwrap();
        let q = chain.generator();
        for r in 0..q.nrows() {
            assert!(q.row(r).iter().enumerate().all(|(c, &v)| c == r || v >= 0.0));
            assert!(q.row(r).sum().abs() <= 1e-12 * chain.outflow(r).max(1.0));
        }
    }
}

#[test]
fn solvers_agree() {
    for seed in 0..4 {
        let s = fixtures::random_small(seed + 10, 5, 100.0).unwrap();
        let (env, pol) = env_and_policies(&s, seed);
        let pool = s.network.pool_size();
        let direct = load(&pol, &env, &s.network, &s.demand, pool, StationarySolver::Direct).unwrap();
        let power = load(&pol, &env, &s.network, &s.demand, pool, StationarySolver::Power).unwrap();
        let blocked = load(&pol, &env, &s.network, &s.demand, pool, StationarySolver::Blocked).unwrap();
        assert!(
            rel_diff(&direct, &power) <= 1e-8,
            "power {}",
            rel_diff(&direct, &power)
        );
        assert!(
            rel_diff(&direct, &blocked) <= 1e-10,
            "blocked {}",
            rel_diff(&direct, &blocked)
        );
        assert!((blocked.total() - pool).abs() <= 1e-8 * pool);
        assert!(blocked.iter().all(|&v| v >= 0.0));
        let lam = s.network.total_arrival_rate();
        let res = flow_balance_residual(&blocked, &env, &pol, &s.network, &s.demand);
        assert!(res <= 1e-8 * (lam + pool), "residual {res}");
    }
}

#[test]
fn no_matching_leaves_only_empty_states() {
    let s = fixtures::random_small(3, 4, 50.0).unwrap();
    let (mut env, pol) = env_and_policies(&s, 1);
    env.m.iter_mut().for_each(|m| *m = 0.0);
    let chain = build_chain(&pol, &env, &s.network, &s.demand).unwrap();
    let (chain, report) = prune_transient(chain, &env, &s.network, &s.demand).unwrap();
    assert!(report.no_matching);
    assert_eq!(report.recurrent, s.network.num_links());
    let dist = stationary_masses(&chain, 50.0, StationarySolver::Direct).unwrap();
    assert!(dist.y.iter().all(|&y| y == 0.0));
    let blocked = load_blocked(&pol, &env, &s.network, &s.demand, 50.0).unwrap();
    assert!(rel_diff(&dist, &blocked) < 1e-10);
}

#[test]
fn unserved_destination_is_pruned() {
    // Orders only to node 2: hired states bound elsewhere are transient.
    let s = fixtures::random_small(6, 4, 50.0).unwrap();
    let n = 4;
    let mut rows = vec![0.0; n * n];
    for i in 0..n {
        let d = if i == 2 { 0 } else { 2 };
        rows[i * n + d] = 1.0;
    }
    // node 2 sends everybody to 0, but make every link into 2 passenger-free
    let mut net = s.network.clone();
    net.update_links(|links| {
        for l in links.iter_mut().filter(|l| l.head == 2) {
            l.arrival_rate = 0.0;
        }
    })
    .unwrap();
    let fares: Vec<f64> = (0..n * n).map(|k| s.demand.fare(k / n, k % n)).collect();
    let demand = DemandModel::new(n, rows, fares).unwrap();
    let s = Scenario::new(net, demand).unwrap();
    let (env, pol) = env_and_policies(&s, 2);
    let chain = build_chain(&pol, &env, &s.network, &s.demand).unwrap();
    let (chain, report) = prune_transient(chain, &env, &s.network, &s.demand).unwrap();
    assert_eq!(report.unserved_destinations, vec![0, 1, 3]);
    let idx = s.network.hired_index();
    for d in [0, 1, 3] {
        for slot in idx.dest_range(d) {
            assert!(!chain.is_recurrent(chain.hired_state(slot)));
        }
    }
    // pruned states carry no mass in the unpruned power solution either
    let full = build_chain(&pol, &env, &s.network, &s.demand).unwrap();
    let all = stationary_masses(&full, 1.0, StationarySolver::Power);
    // the unpruned chain has transient states, so power iteration from a
    // uniform start still converges onto the recurrent class
    let all = all.unwrap();
    for d in [0, 1, 3] {
        for slot in idx.dest_range(d) {
            assert!(all.y[slot] <= 1e-12);
        }
    }
}

#[test]
fn fully_positive_chain_prunes_nothing() {
    let s = fixtures::shuttle(30.0, 0.8, 10.0).unwrap();
    let (env, pol) = env_and_policies(&s, 0);
    let chain = build_chain(&pol, &env, &s.network, &s.demand).unwrap();
    let states = chain.num_states();
    let (_, report) = prune_transient(chain, &env, &s.network, &s.demand).unwrap();
    assert_eq!(report.recurrent, states);
    assert_eq!(report.unreachable, 0);
}

#[test]
fn symmetric_two_cycle_splits_evenly() {
    let s = fixtures::two_cycle(0.2, 50.0, 10.0).unwrap();
    let env = LinkEnv::free_flow(&s.network);
    let params = SmdpParams::default();
    let v = solve_values(&env, &params, &s.network, &s.demand, &Default::default(), None).unwrap();
    let pol = choice_probabilities(&v.values, &params, &s.network, &s.demand);
    for solver in [
        StationarySolver::Blocked,
        StationarySolver::Direct,
        StationarySolver::Power,
    ] {
        let d = load(&pol, &env, &s.network, &s.demand, 10.0, solver).unwrap();
        assert!((d.x[0] - 5.0).abs() < 1e-12 && (d.x[1] - 5.0).abs() < 1e-12);
    }
    let q = build_chain(&pol, &env, &s.network, &s.demand)
        .unwrap()
        .generator();
    assert_eq!(q[(0, 1)], q[(1, 0)]);
}

#[test]
fn env_from_masses() {
    let s = fixtures::random_small(0, 4, 50.0).unwrap();
    let env = LinkEnv::free_flow(&s.network);
    for (l, (&t, &m)) in s.network.links().iter().zip(env.t.iter().zip(&env.m)) {
        assert_eq!(t, l.free_flow_time());
        assert_eq!(m, if l.arrival_rate > 0.0 { 1.0 } else { 0.0 });
    }
    // x = 10 on a link with t(10) = 0.2 gives f = 50
    let s = fixtures::two_cycle(0.1, 10.0, 10.0).unwrap();
    let mut d = MassDistribution::zeros(&s.network);
    d.x[0] = 10.0;
    let env = masses_to_env(&d, &s.network);
    assert!((env.t[0] - 0.2).abs() < 1e-15);
    assert!((env.f[0] - 50.0).abs() < 1e-12);
    assert_eq!(env.u, vec![10.0, 0.0]);
}

#[test]
fn rejects_nonpositive_time() {
    let s = fixtures::shuttle(30.0, 0.8, 10.0).unwrap();
    let (mut env, pol) = env_and_policies(&s, 0);
    env.t[1] = -1.0;
    assert!(matches!(
        build_chain(&pol, &env, &s.network, &s.demand),
        Err(MterError::Domain(_))
    ));
}
