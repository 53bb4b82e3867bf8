//! The `result.json` schema.

use serde::{Deserialize, Serialize};

use mter::equilibrium::{Certificates, EquilibriumResult};
use mter::loading::{LinkEnv, MassDistribution};
use mter::metrics::{compute_metrics, MetricsBundle, MetricsOptions};
use mter::network::Network;
use mter::smdp::Policies;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRow {
    pub id: usize,
    pub tail: u32,
    pub head: u32,
    pub empty_mass: f64,
    pub hired_mass: f64,
    /// Empty-vehicle flow, vehicles per hour.
    pub empty_flow: f64,
    pub time: f64,
    pub matching: f64,
    pub toll: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultFile {
    pub mode: String,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(deserialize_with = "mter::metrics::null_as_infinity")]
    pub gap: f64,
    pub total_mass: f64,
    pub certificates: Option<Certificates>,
    pub metrics: Option<MetricsBundle>,
    pub links: Vec<LinkRow>,
    pub masses: Option<MassDistribution>,
    pub env: Option<LinkEnv>,
    pub policies: Option<Policies>,
    /// Empty-vehicle node values.
    pub sigma: Option<Vec<f64>>,
    /// Mode-specific output.
    pub extra: serde_json::Value,
    /// The resolved configuration; rerunning from it reproduces the run.
    pub config: RunConfig,
}

impl ResultFile {
    pub fn from_equilibrium(mode: &str, r: &EquilibriumResult, net: &Network, config: &RunConfig) -> Self {
        let masses = r.masses.link_mass(net);
        let links = net
            .links()
            .iter()
            .enumerate()
            .map(|(a, l)| LinkRow {
                id: l.id,
                tail: net.label(l.tail),
                head: net.label(l.head),
                empty_mass: r.masses.x[a],
                hired_mass: masses[a] - r.masses.x[a],
                empty_flow: r.env.f[a],
                time: r.env.t[a],
                matching: r.env.m[a],
                toll: l.toll,
            })
            .collect();
        ResultFile {
            mode: mode.to_string(),
            seed: r.seed,
            converged: r.converged,
            iterations: r.iterations,
            gap: r.gap,
            total_mass: r.total_mass,
            certificates: Some(r.certificates),
            metrics: Some(r.metrics),
            links,
            masses: Some(r.masses.clone()),
            env: Some(r.env.clone()),
            policies: Some(r.policies.clone()),
            sigma: Some(r.values.sigma.clone()),
            extra: serde_json::Value::Null,
            config: config.clone(),
        }
    }

    pub fn read(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Metrics recomputed from the stored state and the echoed configuration.
    pub fn recompute_metrics(&self) -> Result<MetricsBundle, CliError> {
        let (Some(x), Some(env), Some(pol)) = (&self.masses, &self.env, &self.policies) else {
            return Err(CliError::Config("result holds no equilibrium state".into()));
        };
        let s = crate::scenario::build(&self.config)?;
        let opts = MetricsOptions::default();
        Ok(compute_metrics(
            x,
            env,
            pol,
            &s.network,
            &s.demand,
            &self.config.model,
            &opts,
        ))
    }
}
