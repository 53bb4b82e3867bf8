use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::participation::{solve_participation, ParticipationParams};
use crate::equilibrium::{multi_start, SolverConfig};
use crate::error::{MterError, Result};
use crate::network::Scenario;
use crate::smdp::SmdpParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Fleet size, or total potential pool under participation.
    PoolSize,
    /// Matching friction on every link.
    Friction,
    DiscountRate,
    /// Participation dispersion.
    Zeta,
}

/// One sweep point. `participation` is the participating share, 1 without a
/// participation model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param_value: f64,
    pub profit: f64,
    pub fulfillment: f64,
    #[serde(deserialize_with = "crate::metrics::null_as_infinity")]
    pub vh_ratio: f64,
    pub avg_speed: f64,
    pub participation: f64,
    pub converged: bool,
}

fn point(
    scenario: &Scenario,
    params: &SmdpParams,
    participation: Option<&ParticipationParams>,
    config: &SolverConfig,
    param: SweepParam,
    value: f64,
) -> Result<SweepRow> {
    let mut net = scenario.network.clone();
    let mut params = params.clone();
    let mut part = participation.cloned();
    match param {
        SweepParam::PoolSize => match part.as_mut() {
            Some(p) => {
                let scale = value / p.potential_total();
                p.potential.iter_mut().for_each(|m| *m *= scale);
            }
            None => net = net.with_pool_size(value)?,
        },
        SweepParam::Friction => {
            net.update_links(|links| links.iter_mut().for_each(|l| l.friction = value))?
        }
        SweepParam::DiscountRate => params.discount_rate = value,
        SweepParam::Zeta => match part.as_mut() {
            Some(p) => p.zeta = value,
            None => {
                return Err(MterError::Validation(
                    "a dispersion sweep needs a participation model".into(),
                ))
            }
        },
    }
    let demand = &scenario.demand;
    let (r, rate) = match &part {
        Some(p) => {
            let out = solve_participation(&net, demand, &params, p, config)?;
            (out.result, out.rate)
        }
        None => (multi_start(&net, demand, &params, config)?.into_best(), 1.0),
    };
    Ok(SweepRow {
        param_value: value,
        profit: r.metrics.profit_rate,
        fulfillment: r.metrics.fulfillment,
        vh_ratio: r.metrics.vacant_hired_ratio,
        avg_speed: r.metrics.avg_speed,
        participation: rate,
        converged: r.converged,
    })
}

/// Solves at every value concurrently; rows come back in input order.
pub fn run_sweep(
    scenario: &Scenario,
    params: &SmdpParams,
    participation: Option<&ParticipationParams>,
    config: &SolverConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    values
        .par_iter()
        .map(|&v| {
            point(scenario, params, participation, config, param, v).map_err(|e| e.in_stage("sweep point"))
        })
        .collect()
}
