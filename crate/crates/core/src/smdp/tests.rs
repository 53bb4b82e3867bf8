use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::fixtures;
use crate::network::Scenario;

fn random_env(s: &Scenario, rng: &mut ChaCha8Rng) -> LinkEnv {
    let net = &s.network;
    let t: Vec<f64> = net
        .links()
        .iter()
        .map(|l| l.free_flow_time() * rng.random_range(1.0..2.0))
        .collect();
    let m = net
        .links()
        .iter()
        .map(|l| {
            if l.arrival_rate > 0.0 {
                rng.random_range(0.0..1.0)
            } else {
                0.0
            }
        })
        .collect();
    LinkEnv {
        u: vec![0.0; net.num_links()],
        f: vec![0.0; net.num_links()],
        t,
        m,
    }
}

fn random_values(net: &Network, rng: &mut ChaCha8Rng, scale: f64) -> ValueFunctions {
    let mut v = ValueFunctions::zeros(net);
    v.z.iter_mut().for_each(|x| *x = rng.random_range(-scale..scale));
    v.w.iter_mut().for_each(|x| *x = rng.random_range(-scale..scale));
    v
}

#[test]
fn contraction_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = fixtures::random_small(3, 5, 100.0).unwrap();
    let params = SmdpParams::default();
    for _ in 0..100 {
        let env = random_env(&s, &mut rng);
        let op = BellmanOperator::new(&s.network, &s.demand, &env, &params).unwrap();
        let v = random_values(&s.network, &mut rng, 50.0);
        let w = random_values(&s.network, &mut rng, 50.0);
        let lhs = op.apply(&v).action_distance(&op.apply(&w));
        let tmin = env.t.iter().copied().fold(f64::INFINITY, f64::min);
        let modulus = (-params.discount_rate * tmin).exp();
        assert!((op.modulus() - modulus).abs() < 1e-15);
        assert!(lhs <= modulus * v.action_distance(&w) + 1e-12);
    }
}

fn fd_surplus(values: &[f64], k: usize, scale: f64) -> f64 {
    let h = 1e-5;
    let mut up = values.to_vec();
    let mut dn = values.to_vec();
    up[k] += h;
    dn[k] -= h;
    (social_surplus(&up, scale).unwrap() - social_surplus(&dn, scale).unwrap()) / (2.0 * h)
}

#[test]
fn probabilities_are_surplus_derivatives() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = fixtures::random_small(5, 6, 100.0).unwrap();
    let net = &s.network;
    let params = SmdpParams::default();
    let env = random_env(&s, &mut rng);
    let v = solve_values(
        &env,
        &params,
        net,
        &s.demand,
        &ValueIterationConfig::default(),
        None,
    )
    .unwrap()
    .values;
    let pol = choice_probabilities(&v, &params, net, &s.demand);
    let idx = net.hired_index();
    for i in 0..net.num_nodes() {
        let outs = net.out_links(i);
        let zs: Vec<f64> = outs.iter().map(|&a| v.z[a]).collect();
        for (k, &a) in outs.iter().enumerate() {
            assert!((pol.p[a] - fd_surplus(&zs, k, params.link_scale)).abs() <= 1e-6);
        }
        assert!((outs.iter().map(|&a| pol.p[a]).sum::<f64>() - 1.0).abs() <= 1e-12);
        for d in (0..net.num_nodes()).filter(|&d| d != i) {
            let ws: Vec<f64> = outs.iter().map(|&a| v.w[idx.slot(a, d).unwrap()]).collect();
            let mut total = 0.0;
            for (k, &a) in outs.iter().enumerate() {
                let q = pol.q(net, a, d).unwrap();
                assert!(q > 0.0);
                assert!((q - fd_surplus(&ws, k, params.link_scale)).abs() <= 1e-6);
                total += q;
            }
            assert!((total - 1.0).abs() <= 1e-12);
            let pair = [s.demand.fare(i, d) + v.tau(i, d), v.sigma[i]];
            // saturates to exactly 0 or 1 in floating point for large gaps
            let xi = pol.xi(i, d);
            assert!((0.0..=1.0).contains(&xi));
            assert!((xi - fd_surplus(&pair, 0, params.accept_scale)).abs() <= 1e-6);
            assert!((xi + fd_surplus(&pair, 1, params.accept_scale) - 1.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn logit_examples() {
    let mut p = [0.0; 2];
    Logit::new(10.0).probabilities(&[0.0, 0.1], &mut p);
    assert!((p[0] - 0.2689).abs() < 1e-4 && (p[1] - 0.7311).abs() < 1e-4);
    Logit::new(10.0).probabilities(&[3.0, 3.0], &mut p);
    assert_eq!(p, [0.5, 0.5]);
    assert_eq!(Logit::new(10.0).pair_prob(1.5, 1.5), 0.5);
}

#[test]
fn choices_invariant_to_node_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = fixtures::random_small(8, 5, 50.0).unwrap();
    let net = &s.network;
    let params = SmdpParams::default();
    let v = random_values(net, &mut rng, 5.0);
    let base = choice_probabilities(&v, &params, net, &s.demand);
    let mut shifted = v.clone();
    for i in 0..net.num_nodes() {
        let c = rng.random_range(-100.0..100.0);
        for &a in net.out_links(i) {
            shifted.z[a] += c;
            for d in (0..net.num_nodes()).filter(|&d| d != i) {
                shifted.w[net.hired_index().slot(a, d).unwrap()] += c;
            }
        }
    }
    let moved = choice_probabilities(&shifted, &params, net, &s.demand);
    for (a, b) in base.p.iter().zip(&moved.p).chain(base.q.iter().zip(&moved.q)) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn acceptance_increases_with_fare() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = fixtures::random_small(2, 4, 50.0).unwrap();
    let params = SmdpParams::default();
    let v = random_values(&s.network, &mut rng, 1.0);
    let mut demand = s.demand.clone();
    demand.scale_fares(0.05);
    let before = choice_probabilities(&v, &params, &s.network, &demand);
    demand.scale_fares(1.01);
    let after = choice_probabilities(&v, &params, &s.network, &demand);
    for i in 0..4 {
        for d in (0..4).filter(|&d| d != i) {
            assert!(after.xi(i, d) > before.xi(i, d));
        }
    }
}

#[test]
fn boundary_condition_after_every_apply() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = fixtures::random_small(1, 5, 50.0).unwrap();
    let n = s.network.num_nodes();
    for boundary in [Boundary::ForwardLooking, Boundary::Myopic] {
        let params = SmdpParams {
            boundary,
            ..SmdpParams::default()
        };
        let env = random_env(&s, &mut rng);
        let mut v = random_values(&s.network, &mut rng, 10.0);
        for _ in 0..5 {
            v = bellman_apply(&v, &env, &params, &s.network, &s.demand).unwrap();
            for d in 0..n {
                let expected = match boundary {
                    Boundary::ForwardLooking => v.sigma[d],
                    Boundary::Myopic => 0.0,
                };
                assert_eq!(v.tau(d, d), expected);
            }
        }
    }
}

#[test]
fn zero_rewards_on_a_cycle_give_zero_values() {
    let s = fixtures::directed_cycle(&[0.1, 0.2, 0.3], 100.0, 10.0).unwrap();
    let mut demand = s.demand.clone();
    demand.scale_fares(0.0);
    let env = LinkEnv::free_flow(&s.network);
    for boundary in [Boundary::ForwardLooking, Boundary::Myopic] {
        let params = SmdpParams {
            empty_cost_per_hour: 0.0,
            hired_cost_per_hour: 0.0,
            boundary,
            ..SmdpParams::default()
        };
        let sol = solve_values(&env, &params, &s.network, &demand, &Default::default(), None).unwrap();
        assert!(sol.values.z.iter().chain(&sol.values.w).all(|&x| x == 0.0));
        let pol = choice_probabilities(&sol.values, &params, &s.network, &demand);
        assert!(pol.p.iter().all(|&p| p == 1.0));
    }
}

#[test]
fn warm_and_cold_starts_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = fixtures::random_small(4, 5, 50.0).unwrap();
    let params = SmdpParams::default();
    let env = random_env(&s, &mut rng);
    let cfg = ValueIterationConfig {
        tol: 1e-9,
        ..Default::default()
    };
    let cold = solve_values(&env, &params, &s.network, &s.demand, &cfg, None).unwrap();
    let mut start = cold.values.clone();
    start.z.iter_mut().for_each(|x| *x += rng.random_range(-1.0..1.0));
    let warm = solve_values(&env, &params, &s.network, &s.demand, &cfg, Some(&start)).unwrap();
    let tmin = env.t.iter().copied().fold(f64::INFINITY, f64::min);
    let bound = 2.0 * cfg.tol / (1.0 - (-params.discount_rate * tmin).exp());
    assert!(cold.values.action_distance(&warm.values) <= bound);
    assert!(cold.residual <= cfg.tol);
}

#[test]
fn max_iterations_reports_residual() {
    let s = fixtures::random_small(4, 4, 50.0).unwrap();
    let cfg = ValueIterationConfig {
        tol: 1e-12,
        max_iter: 3,
    };
    let env = LinkEnv::free_flow(&s.network);
    let err = solve_values(&env, &SmdpParams::default(), &s.network, &s.demand, &cfg, None).unwrap_err();
    assert!(matches!(err, MterError::Convergence { iterations: 3, residual, .. } if residual > 0.0));
}

/// Scalar value iteration for the two-node shuttle, where every node has one
/// outgoing link and all orders go to the other node.
fn shuttle_oracle(t: [f64; 2], m: [f64; 2], fare: [f64; 2], params: &SmdpParams) -> [f64; 2] {
    let lse = |a: f64, b: f64, s: f64| {
        let hi = a.max(b);
        hi + ((s * (a - hi)).exp() + (s * (b - hi)).exp()).ln() / s
    };
    let delta = [0, 1].map(|k| (-params.discount_rate * t[k]).exp());
    let cost = [0, 1].map(|k| params.empty_cost_per_hour * t[k]);
    // link 0 goes 0 -> 1, link 1 goes 1 -> 0; sigma[j] is the value of the
    // link leaving j.
    let mut z = [0.0f64; 2];
    for _ in 0..200_000 {
        let sigma = [z[0], z[1]];
        let mut next = [0.0; 2];
        for k in 0..2 {
            let j = 1 - k;
            // a hired vehicle at j heading to k takes link j and becomes empty
            let tau = -params.hired_cost_per_hour * t[j] + delta[j] * sigma[k];
            let accept = lse(fare[j] + tau, sigma[j], params.accept_scale);
            next[k] = -cost[k] + delta[k] * ((1.0 - m[k]) * sigma[j] + m[k] * accept);
        }
        let change = (next[0] - z[0]).abs().max((next[1] - z[1]).abs());
        z = next;
        if change < 1e-13 {
            break;
        }
    }
    z
}

#[test]
fn shuttle_matches_scalar_oracle() {
    let s = fixtures::shuttle(20.0, 0.8, 10.0).unwrap();
    let params = SmdpParams::default();
    let env = LinkEnv {
        u: vec![0.0; 2],
        f: vec![0.0; 2],
        t: vec![0.25, 0.4],
        m: vec![0.3, 0.7],
    };
    let cfg = ValueIterationConfig {
        tol: 1e-10,
        ..Default::default()
    };
    let sol = solve_values(&env, &params, &s.network, &s.demand, &cfg, None).unwrap();
    let fare = [s.demand.fare(0, 1), s.demand.fare(1, 0)];
    let oracle = shuttle_oracle([0.25, 0.4], [0.3, 0.7], fare, &params);
    let bound = 1e-10 / (1.0 - (-0.1f64 * 0.25).exp()) + 1e-10;
    assert!(
        (sol.values.z[0] - oracle[0]).abs() <= bound,
        "{} vs {}",
        sol.values.z[0],
        oracle[0]
    );
    assert!((sol.values.z[1] - oracle[1]).abs() <= bound);
}

#[test]
fn symmetric_cycle_has_equal_node_values() {
    let s = fixtures::two_cycle(0.2, 50.0, 10.0).unwrap();
    let env = LinkEnv::free_flow(&s.network);
    let sol = solve_values(
        &env,
        &SmdpParams::default(),
        &s.network,
        &s.demand,
        &Default::default(),
        None,
    )
    .unwrap();
    assert_eq!(sol.values.sigma[0], sol.values.sigma[1]);
}

#[test]
fn rejects_bad_inputs() {
    let s = fixtures::two_cycle(0.2, 50.0, 10.0).unwrap();
    let mut env = LinkEnv::free_flow(&s.network);
    env.t[0] = 0.0;
    let v = ValueFunctions::zeros(&s.network);
    assert!(bellman_apply(&v, &env, &SmdpParams::default(), &s.network, &s.demand).is_err());
    let bad = SmdpParams {
        link_scale: 0.0,
        ..SmdpParams::default()
    };
    assert!(bad.validate().is_err());
}
