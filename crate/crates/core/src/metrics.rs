//! System-level steady-state metrics.

use serde::{Deserialize, Serialize};

use crate::loading::{LinkEnv, MassDistribution};
use crate::network::{DemandModel, Network};
use crate::smdp::{Policies, SmdpParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    /// Report matched-only fulfillment as the headline figure.
    pub matched_only: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    /// Fare revenue, dollars per hour.
    pub revenue_rate: f64,
    /// Operating cost including tolls, dollars per hour.
    pub cost_rate: f64,
    pub profit_rate: f64,
    /// Headline fulfillment (accepted matches unless configured otherwise).
    pub fulfillment: f64,
    pub fulfillment_accepted: f64,
    pub fulfillment_matched: f64,
    /// Set when there is no passenger demand and fulfillment is reported as 1.
    pub no_demand: bool,
    /// Empty over hired mass; infinite (serialized as null) without hired mass.
    #[serde(deserialize_with = "null_as_infinity")]
    pub vacant_hired_ratio: f64,
    /// Mass-weighted mean link speed, km per hour.
    pub avg_speed: f64,
    /// Tolls paid, dollars per hour.
    pub toll_revenue_rate: f64,
    pub empty_mass: f64,
    pub hired_mass: f64,
}

/// Reads `null` back as `+inf`, the inverse of JSON's lossy encoding.
pub fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Metrics at a mass distribution with its environment and policies.
pub fn compute_metrics(
    dist: &MassDistribution,
    env: &LinkEnv,
    policies: &Policies,
    network: &Network,
    demand: &DemandModel,
    params: &SmdpParams,
    options: &MetricsOptions,
) -> MetricsBundle {
    let n = network.num_nodes();
    let idx = network.hired_index();
    let mut hired_flow = vec![0.0; network.num_links()];
    for (slot, &y) in dist.y.iter().enumerate() {
        let a = idx.entry(slot).0;
        hired_flow[a] += y / env.t[a];
    }

    let mut revenue = 0.0;
    let mut cost = 0.0;
    let mut tolls = 0.0;
    let mut matched = 0.0;
    let mut accepted = 0.0;
    let mut speed_num = 0.0;
    let mut mass = 0.0;
    for (a, link) in network.links().iter().enumerate() {
        let t = env.t[a];
        let f = dist.x[a] / t;
        let h = hired_flow[a];
        let j = link.head;
        let m = env.m[a];
        let mut accept = 0.0;
        let mut fare = 0.0;
        for d in (0..n).filter(|&d| d != j) {
            let w = demand.dest_prob(j, d) * policies.xi(j, d);
            accept += w;
            fare += w * demand.fare(j, d);
        }
        revenue += f * m * fare;
        matched += f * m;
        accepted += f * m * accept;
        cost += f * (params.empty_cost_per_hour * t + link.toll)
            + h * (params.hired_cost_per_hour * t + link.toll);
        tolls += (f + h) * link.toll;
        let u = dist.x[a] + dist.y_link(a, network);
        speed_num += u * link.length_km / t;
        mass += u;
    }
    let lambda = network.total_arrival_rate();
    let no_demand = lambda <= 0.0;
    let (fa, fm) = if no_demand {
        (1.0, 1.0)
    } else {
        (accepted / lambda, matched / lambda)
    };
    let empty = dist.empty_total();
    let hired = dist.hired_total();
    MetricsBundle {
        revenue_rate: revenue,
        cost_rate: cost,
        profit_rate: revenue - cost,
        fulfillment: if options.matched_only { fm } else { fa },
        fulfillment_accepted: fa,
        fulfillment_matched: fm,
        no_demand,
        vacant_hired_ratio: if hired > 0.0 { empty / hired } else { f64::INFINITY },
        avg_speed: if mass > 0.0 { speed_num / mass } else { 0.0 },
        toll_revenue_rate: tolls,
        empty_mass: empty,
        hired_mass: hired,
    }
}

impl MassDistribution {
    /// Hired mass on link `a` summed over destinations.
    pub fn y_link(&self, a: usize, network: &Network) -> f64 {
        (0..network.num_nodes()).map(|d| self.y(network, a, d)).sum()
    }
}

/// Per-link fulfillment `f m(f) / lambda`.
pub fn link_fulfillment(link: &crate::network::Link, f: f64) -> f64 {
    if link.arrival_rate <= 0.0 {
        return 1.0;
    }
    f * link.matching_at(f) / link.arrival_rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::loading::{load, masses_to_env, StationarySolver};
    use crate::smdp::{choice_probabilities, solve_values};

    fn solved(s: &crate::network::Scenario) -> (MassDistribution, LinkEnv, Policies) {
        let params = SmdpParams::default();
        let mut dist = MassDistribution::zeros(&s.network);
        dist.x.iter_mut().for_each(|x| *x = 1.0);
        dist.scale(s.network.pool_size() / dist.total());
        let env = masses_to_env(&dist, &s.network);
        let v = solve_values(&env, &params, &s.network, &s.demand, &Default::default(), None).unwrap();
        let pol = choice_probabilities(&v.values, &params, &s.network, &s.demand);
        let d = load(
            &pol,
            &env,
            &s.network,
            &s.demand,
            s.network.pool_size(),
            StationarySolver::Blocked,
        )
        .unwrap();
        let env = masses_to_env(&d, &s.network);
        (d, env, pol)
    }

    #[test]
    fn cost_telescopes_to_six_m() {
        let s = fixtures::random_small(1, 5, 80.0).unwrap();
        let (d, env, pol) = solved(&s);
        let m = compute_metrics(
            &d,
            &env,
            &pol,
            &s.network,
            &s.demand,
            &SmdpParams::default(),
            &Default::default(),
        );
        assert!((m.cost_rate - 6.0 * 80.0).abs() <= 1e-9 * 480.0);
        assert!(((m.profit_rate + m.cost_rate) - m.revenue_rate).abs() <= 1e-9 * m.revenue_rate.abs());
        assert!(m.fulfillment <= 1.0 && m.fulfillment_accepted <= m.fulfillment_matched);
        let speeds: Vec<f64> = s
            .network
            .links()
            .iter()
            .zip(&env.t)
            .map(|(l, t)| l.length_km / t)
            .collect();
        let lo = speeds.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = speeds.iter().copied().fold(0.0, f64::max);
        assert!(m.avg_speed >= lo - 1e-9 && m.avg_speed <= hi + 1e-9);
    }

    #[test]
    fn no_demand_network() {
        let s = fixtures::two_cycle(0.1, 50.0, 10.0).unwrap();
        let (d, env, pol) = solved(&s);
        let m = compute_metrics(
            &d,
            &env,
            &pol,
            &s.network,
            &s.demand,
            &SmdpParams::default(),
            &Default::default(),
        );
        assert_eq!(m.revenue_rate, 0.0);
        assert_eq!(m.profit_rate, -m.cost_rate);
        assert!(m.no_demand && m.fulfillment == 1.0);
        assert!(m.vacant_hired_ratio.is_infinite());
    }

    #[test]
    fn toll_revenue_is_fee_times_entering_flow() {
        let mut s = fixtures::two_cycle(0.1, 50.0, 10.0).unwrap();
        s.network.update_links(|l| l[0].toll = 2.0).unwrap();
        let (d, env, pol) = solved(&s);
        let m = compute_metrics(
            &d,
            &env,
            &pol,
            &s.network,
            &s.demand,
            &SmdpParams::default(),
            &Default::default(),
        );
        let entering = d.link_mass(&s.network)[0] / env.t[0];
        assert!((m.toll_revenue_rate - 2.0 * entering).abs() <= 1e-10);
        assert!((m.cost_rate - 6.0 * 10.0 - m.toll_revenue_rate).abs() <= 1e-9);
    }

    #[test]
    fn fulfillment_approaches_min_one_gamma() {
        for gamma in [0.5, 0.8, 1.0, 1.5] {
            let mut link =
                crate::network::Link::new(1, 0, 1, crate::network::TravelTimeFn::linear(0.1, 10.0), 1.0);
            link.arrival_rate = 80.0;
            link.friction = gamma;
            let r = link_fulfillment(&link, 1e4 * 80.0);
            let target = f64::min(1.0, gamma);
            assert!((r - target).abs() <= 0.01 * target);
        }
    }
}
