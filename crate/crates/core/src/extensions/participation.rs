use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    iterate_from, random_start, EquilibriumResult, FixedPointMap, MassTarget, SolverConfig,
};
use crate::error::{MterError, Result};
use crate::network::{DemandModel, Network};
use crate::smdp::SmdpParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipationParams {
    /// Potential drivers per node.
    pub potential: Vec<f64>,
    /// Logistic dispersion, per dollar.
    pub zeta: f64,
    /// Value of the outside option, dollars.
    #[serde(default)]
    pub outside: f64,
}

impl ParticipationParams {
    /// `total` potential drivers spread evenly over the nodes.
    pub fn uniform(num_nodes: usize, total: f64, zeta: f64) -> Self {
        ParticipationParams {
            potential: vec![total / num_nodes as f64; num_nodes],
            zeta,
            outside: 0.0,
        }
    }

    pub fn validate(&self, network: &Network) -> Result<()> {
        if self.potential.len() != network.num_nodes() {
            return Err(MterError::Validation(format!(
                "{} potential pools for {} nodes",
                self.potential.len(),
                network.num_nodes()
            )));
        }
        if self.potential.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(MterError::Validation(
                "potential pools must be nonnegative".into(),
            ));
        }
        if !(self.potential_total() > 0.0) {
            return Err(MterError::Validation(
                "total potential pool must be positive".into(),
            ));
        }
        if !(self.zeta > 0.0) || !self.zeta.is_finite() {
            return Err(MterError::Validation(format!(
                "dispersion {} must be positive",
                self.zeta
            )));
        }
        Ok(())
    }

    pub fn potential_total(&self) -> f64 {
        self.potential.iter().sum()
    }

    /// Participation probability at each node.
    pub fn probabilities(&self, sigma: &[f64]) -> Vec<f64> {
        sigma
            .iter()
            .map(|&s| 1.0 / (1.0 + (-self.zeta * (s - self.outside)).exp()))
            .collect()
    }
}

/// Normalization by the participating mass.
pub struct ParticipationTarget<'a>(pub &'a ParticipationParams);

impl MassTarget for ParticipationTarget<'_> {
    fn target(&self, sigma: &[f64]) -> f64 {
        self.0
            .probabilities(sigma)
            .iter()
            .zip(&self.0.potential)
            .map(|(p, m)| p * m)
            .sum()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParticipationResult {
    pub result: EquilibriumResult,
    /// Per-node participation probabilities at the solution.
    pub probabilities: Vec<f64>,
    /// Participating share of the potential pool.
    pub rate: f64,
}

/// Equilibrium with the fleet size set by drivers' participation choices.
/// Only the aggregate participating mass enters the loading step.
pub fn solve_participation(
    network: &Network,
    demand: &DemandModel,
    params: &SmdpParams,
    part: &ParticipationParams,
    config: &SolverConfig,
) -> Result<ParticipationResult> {
    params.validate()?;
    part.validate(network)?;
    let target = ParticipationTarget(part);
    let start = random_start(network, 0.5 * part.potential_total(), config.seed);
    let mut map = FixedPointMap::new(network, demand, params, config, &target);
    let result = iterate_from(&mut map, start, config.seed)?;
    let probabilities = part.probabilities(&result.values.sigma);
    let rate = result.total_mass / part.potential_total();
    Ok(ParticipationResult {
        result,
        probabilities,
        rate,
    })
}
