use mter::extensions::cordon_tolls;
use mter::fixtures;
use mter::network::{apply_lambda_overrides, apply_tolls, compute_fares, parse_network, Scenario};

use crate::config::{Builtin, RunConfig};
use crate::error::CliError;

/// Builds the scenario described by the network section.
pub fn build(cfg: &RunConfig) -> Result<Scenario, CliError> {
    let n = &cfg.network;
    let pool = n.pool_size;
    let mut s = match (&n.link_file, &n.trips_file, n.builtin) {
        (Some(link), Some(trips), _) => {
            let mut opts = n.parse.clone();
            opts.pool_size = pool;
            if let Some(f) = cfg.fares {
                opts.fares = f;
            }
            let (network, demand, report) = parse_network(link, trips, &opts)?;
            log::info!(
                "parsed {} nodes, {} links, {} OD pairs",
                report.nodes,
                report.links,
                report.od_pairs
            );
            Scenario::new(network, demand)?
        }
        (_, _, Some(b)) => match b {
            Builtin::SiouxFalls => {
                let dir = n.data_dir.clone().ok_or_else(|| {
                    CliError::Config("the sioux_falls builtin needs network.data_dir".into())
                })?;
                fixtures::sioux_falls(&dir, pool)?.0
            }
            Builtin::TwoCycle => fixtures::two_cycle(n.cycle_free_flow[0], n.capacity, pool)?,
            Builtin::Shuttle => fixtures::shuttle(n.lambda, n.friction.unwrap_or(0.8), pool)?,
            Builtin::DirectedCycle => fixtures::directed_cycle(&n.cycle_free_flow, n.capacity, pool)?,
            Builtin::Braess => fixtures::braess(false, n.lambda, pool)?,
            Builtin::BraessBridge => fixtures::braess(true, n.lambda, pool)?,
            Builtin::MyopicStudy => fixtures::myopic_study(pool)?,
            Builtin::RandomSmall => fixtures::random_small(n.seed, n.nodes, pool)?,
            Builtin::Continuum => {
                let s = fixtures::continuum()?;
                Scenario::new(s.network.with_pool_size(pool)?, s.demand)?
            }
        },
        _ => return Err(CliError::Config("no network configured".into())),
    };
    if let Some(path) = &n.lambda_overrides {
        apply_lambda_overrides(&mut s.network, path)?;
    }
    if let Some(g) = n.friction {
        s.network
            .update_links(|links| links.iter_mut().for_each(|l| l.friction = g))?;
    }
    if let Some(path) = &n.tolls {
        apply_tolls(&mut s.network, path)?;
    }
    if let Some(c) = &n.cordon {
        let k = cordon_tolls(&mut s.network, &c.nodes, c.fee)?;
        log::info!("cordon toll {} on {k} links", c.fee);
    }
    if let (Some(f), None) = (cfg.fares, &n.link_file) {
        let rows: Vec<f64> = (0..s.demand.num_nodes())
            .flat_map(|i| s.demand.dest_row(i).to_vec())
            .collect();
        let fares = compute_fares(&s.network, &rows, &f)?;
        s.demand.set_fares(fares)?;
    }
    Ok(s)
}
