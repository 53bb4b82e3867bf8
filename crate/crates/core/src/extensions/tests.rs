use super::*;
use crate::equilibrium::{solve_equilibrium, SolverConfig};
use crate::fixtures;
use crate::network::TravelTimeFn;
use crate::smdp::{bellman_apply, Boundary, SmdpParams, ValueFunctions};

fn linear_cycle(t0: &[f64], cap: f64, mass: f64) -> CycleProblem {
    CycleProblem::new(t0.iter().map(|&t| TravelTimeFn::linear(t, cap)).collect(), mass).unwrap()
}

#[test]
fn participation_logistic() {
    let p = ParticipationParams::uniform(4, 100.0, 0.01);
    assert_eq!(p.probabilities(&[0.0; 4]), vec![0.5; 4]);
    assert!((ParticipationTarget(&p).target(&[0.0; 4]) - 50.0).abs() < 1e-12);
    let tiny = ParticipationParams {
        zeta: 1e-12,
        ..p.clone()
    };
    for pr in tiny.probabilities(&[500.0, -300.0, 0.0, 1e4]) {
        assert!((pr - 0.5).abs() < 1e-8);
    }
    let outside = ParticipationParams { outside: 100.0, ..p };
    assert_eq!(outside.probabilities(&[100.0])[0], 0.5);
}

use crate::equilibrium::MassTarget;

#[test]
fn participation_validation() {
    let s = fixtures::shuttle(30.0, 0.8, 10.0).unwrap();
    let cfg = SolverConfig::default();
    let params = SmdpParams::default();
    for bad in [
        ParticipationParams::uniform(3, 10.0, 0.01),
        ParticipationParams::uniform(2, 0.0, 0.01),
        ParticipationParams::uniform(2, 10.0, 0.0),
    ] {
        assert!(matches!(
            solve_participation(&s.network, &s.demand, &params, &bad, &cfg),
            Err(crate::MterError::Validation(_))
        ));
    }
}

#[test]
fn participation_converges_to_consistent_mass() {
    let s = fixtures::random_small(8, 5, 1.0).unwrap();
    let part = ParticipationParams::uniform(5, 40.0, 0.01);
    let cfg = SolverConfig {
        tol: 1e-7,
        max_iter: 5000,
        ..Default::default()
    };
    let r = solve_participation(&s.network, &s.demand, &SmdpParams::default(), &part, &cfg).unwrap();
    assert!(r.result.converged);
    let expected: f64 = r
        .probabilities
        .iter()
        .zip(&part.potential)
        .map(|(p, m)| p * m)
        .sum();
    assert!((r.result.masses.total() - expected).abs() <= 1e-6 * expected);
    assert!((r.rate - expected / 40.0).abs() <= 1e-6);
}

#[test]
fn participation_sweeps_are_monotone() {
    let s = fixtures::random_small(8, 5, 1.0).unwrap();
    let part = ParticipationParams::uniform(5, 40.0, 0.01);
    let cfg = SolverConfig {
        tol: 1e-6,
        max_iter: 5000,
        starts: 1,
        ..Default::default()
    };
    let params = SmdpParams::default();
    let pools = [10.0, 20.0, 40.0, 60.0, 80.0];
    let rows = run_sweep(&s, &params, Some(&part), &cfg, SweepParam::PoolSize, &pools).unwrap();
    for w in rows.windows(2) {
        assert!(w[0].converged && w[1].converged);
        assert!(w[1].participation <= w[0].participation + 1e-9, "{rows:?}");
    }
    let gammas = [0.4, 0.6, 0.8, 1.0, 1.2];
    let rows = run_sweep(&s, &params, Some(&part), &cfg, SweepParam::Friction, &gammas).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].participation >= w[0].participation - 1e-9, "{rows:?}");
    }
    assert_eq!(rows.iter().map(|r| r.param_value).collect::<Vec<_>>(), gammas);
}

#[test]
fn myopic_and_forward_agree_without_rewards() {
    let mut s = fixtures::directed_cycle(&[0.1, 0.2, 0.3], 50.0, 10.0).unwrap();
    s.demand.scale_fares(0.0);
    let params = SmdpParams {
        empty_cost_per_hour: 0.0,
        hired_cost_per_hour: 0.0,
        ..Default::default()
    };
    let cfg = SolverConfig {
        tol: 1e-10,
        ..Default::default()
    };
    let fwd = solve_equilibrium(&s.network, &s.demand, &params, &cfg).unwrap();
    let myo = solve_myopic(&s.network, &s.demand, &params, &cfg).unwrap();
    assert!(fwd
        .values
        .sigma
        .iter()
        .chain(&myo.values.sigma)
        .all(|&v| v.abs() < 1e-12));
    assert_eq!(fwd.policies.p, myo.policies.p);
}

#[test]
fn myopic_boundary_is_zero() {
    let s = fixtures::random_small(2, 4, 30.0).unwrap();
    let params = SmdpParams {
        boundary: Boundary::Myopic,
        ..Default::default()
    };
    let env = crate::loading::LinkEnv::free_flow(&s.network);
    let mut v = ValueFunctions::zeros(&s.network);
    v.sigma.iter_mut().for_each(|x| *x = 7.0);
    for _ in 0..5 {
        v = bellman_apply(&v, &env, &params, &s.network, &s.demand).unwrap();
        for d in 0..4 {
            assert_eq!(v.tau(d, d), 0.0);
        }
    }
}

#[test]
fn uncongested_network_gives_identical_phases() {
    let s = fixtures::random_small(3, 4, 40.0).unwrap();
    let mut net = s.network.clone();
    net.update_links(|links| {
        for l in links {
            l.time_fn = TravelTimeFn::linear(l.free_flow_time(), 1e15);
        }
    })
    .unwrap();
    let cfg = SolverConfig {
        tol: 1e-8,
        max_iter: 5000,
        ..Default::default()
    };
    let params = SmdpParams::default();
    let cu = congestion_unaware_load(&net, &s.demand, &params, &cfg).unwrap();
    let plain = solve_equilibrium(&net, &s.demand, &params, &cfg).unwrap();
    assert!(cu.loaded.converged);
    assert_eq!(cu.loaded.policies, cu.planned.policies);
    let d = crate::equilibrium::gap(&cu.loaded.masses, &plain.masses).unwrap();
    assert!(d <= 1e-5, "{d}");
}

#[test]
fn frozen_policies_survive_congested_loading() {
    let s = fixtures::random_small(4, 5, 150.0).unwrap();
    let cfg = SolverConfig {
        tol: 1e-7,
        max_iter: 5000,
        ..Default::default()
    };
    let cu = congestion_unaware_load(&s.network, &s.demand, &SmdpParams::default(), &cfg).unwrap();
    assert_eq!(cu.loaded.policies, cu.planned.policies);
    assert!(cu.loaded.converged);
    assert!((cu.loaded.masses.total() - 150.0).abs() < 1e-8);
    // the loaded environment reflects congestion, the plan does not
    assert!(cu
        .planned
        .env
        .t
        .iter()
        .zip(s.network.links())
        .all(|(t, l)| *t == l.free_flow_time()));
    assert!(cu
        .loaded
        .env
        .t
        .iter()
        .zip(s.network.links())
        .any(|(t, l)| *t > l.free_flow_time()));
}

#[test]
fn cordon_tolls_entering_links_only() {
    let mut s = fixtures::myopic_study(100.0).unwrap();
    let n = cordon_tolls(&mut s.network, &[2, 3, 4], 2.0).unwrap();
    // only link 1 -> 2 crosses into the downtown cordon
    assert_eq!(n, 1);
    let a = s.network.find_link(1, 2).unwrap();
    assert_eq!(s.network.link(a).toll, 2.0);
    assert!(cordon_tolls(&mut s.network, &[99], 2.0).is_err());
}

#[test]
fn identical_cycle_links_share_mass() {
    let p = linear_cycle(&[0.2; 4], 50.0, 40.0);
    let start = cycle_start(4, 40.0, 3);
    let sol = solve_cycle(&p, Some(&start), 1e-14, 10_000).unwrap();
    for u in &sol.masses {
        assert!((u - 10.0).abs() < 1e-10);
    }
}

#[test]
fn cycle_matches_bisection_oracle() {
    let t0 = [0.1, 0.2, 0.3];
    let (cap, m) = (100.0, 60.0);
    let p = linear_cycle(&t0, cap, m);
    // u = rho t0 (1 + u/cap)  =>  u = rho t0 / (1 - rho t0 / cap)
    let masses = |rho: f64| -> Vec<f64> { t0.iter().map(|&t| rho * t / (1.0 - rho * t / cap)).collect() };
    let (mut lo, mut hi) = (0.0, cap / 0.3);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if masses(mid).iter().sum::<f64>() < m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rho = 0.5 * (lo + hi);
    let oracle = masses(rho);
    let sol = solve_cycle(&p, None, 1e-15, 10_000).unwrap();
    for (a, b) in sol.masses.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-10, "{a} {b}");
    }
    assert!((sol.rho - rho).abs() <= 1e-9 * rho);
    assert!((sol.kappa_hat - 0.6 / 1.6).abs() < 1e-12);
}

#[test]
fn cycle_starts_agree_and_spread_contracts() {
    let p = linear_cycle(&[0.1, 0.25, 0.4, 0.15, 0.3], 30.0, 80.0);
    let sols: Vec<_> = (0..3)
        .map(|seed| solve_cycle(&p, Some(&cycle_start(5, 80.0, seed)), 1e-14, 10_000).unwrap())
        .collect();
    for s in &sols[1..] {
        let diff = s
            .masses
            .iter()
            .zip(&sols[0].masses)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-8);
    }
    for s in &sols {
        assert!(s.kappa_hat < 1.0);
        for w in s.spreads.windows(2).filter(|w| w[0] > 1e-12) {
            assert!(w[1] / w[0] <= s.kappa_hat + 1e-9);
        }
    }
    for seed in 0..200 {
        let u = cycle_start(5, 80.0, 1000 + seed);
        let v = cycle_start(5, 80.0, 5000 + seed);
        assert!(spread(&p.map(&u), &p.map(&v)) <= sols[0].kappa_hat * spread(&u, &v) + 1e-12);
    }
}

#[test]
fn hypercongested_cycle_is_rejected() {
    let hyper = TravelTimeFn::Hyperbolic {
        free_flow: 0.1,
        jam_capacity: 30.0,
    };
    // beyond u = 15 the bound u t'/t exceeds one
    let p = CycleProblem::new(vec![hyper; 3], 25.0).unwrap();
    assert!(matches!(p.kappa_hat(), Err(crate::MterError::Domain(_))));
    let ok = CycleProblem::new(vec![hyper; 3], 10.0).unwrap();
    assert!(ok.kappa_hat().unwrap() < 1.0);
}

#[test]
fn cycle_from_network() {
    let s = fixtures::directed_cycle(&[0.1, 0.2, 0.3], 100.0, 60.0).unwrap();
    let p = CycleProblem::from_network(&s.network).unwrap();
    assert_eq!(p.times.len(), 3);
    assert_eq!(p.mass, 60.0);
    let sol = solve_cycle(&p, None, 1e-14, 1000).unwrap();
    let cfg = SolverConfig {
        tol: 1e-10,
        max_iter: 5000,
        ..Default::default()
    };
    let full = solve_equilibrium(&s.network, &s.demand, &SmdpParams::default(), &cfg).unwrap();
    for (a, b) in sol.masses.iter().zip(&full.masses.x) {
        assert!((a - b).abs() < 1e-7);
    }
    let braess = fixtures::braess(false, 10.0, 10.0).unwrap();
    assert!(CycleProblem::from_network(&braess.network).is_err());
}
