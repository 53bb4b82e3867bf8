//! Run configuration: a TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mter::equilibrium::SolverConfig;
use mter::extensions::SweepParam;
use mter::microsim::SimConfig;
use mter::network::{FareParams, ParseOptions};
use mter::smdp::SmdpParams;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    SiouxFalls,
    TwoCycle,
    Shuttle,
    DirectedCycle,
    Braess,
    BraessBridge,
    MyopicStudy,
    RandomSmall,
    Continuum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cordon {
    pub nodes: Vec<u32>,
    pub fee: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// A built-in network; used when no link file is given.
    pub builtin: Option<Builtin>,
    pub link_file: Option<PathBuf>,
    pub trips_file: Option<PathBuf>,
    /// `link_id,lambda_per_hour,gamma` CSV.
    pub lambda_overrides: Option<PathBuf>,
    /// `link_id,toll_dollars` CSV.
    pub tolls: Option<PathBuf>,
    /// Directory holding `SiouxFalls_net.tntp` and `SiouxFalls_trips.tntp`.
    pub data_dir: Option<PathBuf>,
    pub pool_size: f64,
    /// Overrides the matching friction on every link.
    pub friction: Option<f64>,
    pub cordon: Option<Cordon>,
    pub parse: ParseOptions,
    /// Free-flow times (hours) of the built-in directed cycle.
    pub cycle_free_flow: Vec<f64>,
    pub capacity: f64,
    /// Arrival rate of the built-in shuttle and Braess networks.
    pub lambda: f64,
    pub nodes: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            builtin: None,
            link_file: None,
            trips_file: None,
            lambda_overrides: None,
            tolls: None,
            data_dir: None,
            pool_size: 20_000.0,
            friction: None,
            cordon: None,
            parse: ParseOptions::default(),
            cycle_free_flow: vec![0.1, 0.2, 0.3],
            capacity: 100.0,
            lambda: 100.0,
            nodes: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticipationConfig {
    /// Total potential drivers, spread evenly over nodes unless `per_node` is set.
    pub potential_total: f64,
    pub per_node: Option<Vec<f64>>,
    pub zeta: f64,
    pub outside: f64,
}

impl Default for ParticipationConfig {
    fn default() -> Self {
        ParticipationConfig {
            potential_total: 40_000.0,
            per_node: None,
            zeta: 0.01,
            outside: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Sweep the participation model instead of a fixed pool.
    #[serde(default)]
    pub participation: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    /// Node labels whose internal links form the reported region.
    pub region_nodes: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig {
            tol: 1e-13,
            max_iter: 100_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub model: SmdpParams,
    pub fares: Option<FareParams>,
    pub solver: SolverConfig,
    pub participation: ParticipationConfig,
    pub microsim: SimConfig,
    pub sweep: Option<SweepConfig>,
    pub compare: CompareConfig,
    pub cycle: CycleConfig,
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts = key.split('.').peekable();
    let mut cur = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(CliError::Config(format!("bad override key `{key}`")));
        }
        if parts.peek().is_none() {
            cur.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("`{part}` in `{key}` is not a table"))),
        };
    }
    unreachable!("split yields at least one part")
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Reads `path` (if any), applies overrides and resolves relative paths
    /// against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Config(format!("invalid configuration: {e}")))?;
        if let Some(base) = path.and_then(Path::parent) {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        let n = &mut self.network;
        for p in [
            &mut n.link_file,
            &mut n.trips_file,
            &mut n.lambda_overrides,
            &mut n.tolls,
            &mut n.data_dir,
            &mut self.compare.a,
            &mut self.compare.b,
        ] {
            fix(p);
        }
    }

    /// Checks referenced files and scalar domains before any work is done.
    pub fn validate(&self) -> Result<(), CliError> {
        let n = &self.network;
        for p in [&n.link_file, &n.trips_file, &n.lambda_overrides, &n.tolls]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return Err(CliError::Config(format!("file not found: {}", p.display())));
            }
        }
        if n.link_file.is_some() != n.trips_file.is_some() {
            return Err(CliError::Config(
                "link_file and trips_file must be given together".into(),
            ));
        }
        if n.link_file.is_none() && n.builtin.is_none() {
            return Err(CliError::Config(
                "no network: set network.builtin or network.link_file".into(),
            ));
        }
        if n.pool_size.is_nan() || n.pool_size <= 0.0 {
            return Err(CliError::Config("network.pool_size must be positive".into()));
        }
        self.model.validate()?;
        self.solver.validate()?;
        Ok(())
    }
}
