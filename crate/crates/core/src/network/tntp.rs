//! Readers for the plain-text link and trip tables used by the common
//! transportation test networks.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::demand::{derive_demand, OdMatrix};
use super::fares::{compute_fares, FareParams};
use super::{DemandModel, Link, Network, TravelTimeFn, KM_PER_MILE};
use crate::error::{MterError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    #[default]
    Minutes,
    Hours,
}

impl TimeUnit {
    fn to_hours(self, v: f64) -> f64 {
        match self {
            TimeUnit::Minutes => v / 60.0,
            TimeUnit::Hours => v,
        }
    }
}

/// Where link lengths come from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthSource {
    /// Length column scaled to km by `km_per_unit`.
    Column { km_per_unit: f64 },
    /// Free-flow time times a fixed speed.
    FreeFlow { speed_mph: f64 },
}

impl Default for LengthSource {
    fn default() -> Self {
        LengthSource::FreeFlow { speed_mph: 40.0 }
    }
}

/// Where jam capacities come from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CapacitySource {
    /// Capacity column read as jam mass (vehicles).
    Column,
    /// `lanes * length / vehicle_length`.
    Geometry { lanes: f64, vehicle_length_m: f64 },
}

impl Default for CapacitySource {
    fn default() -> Self {
        CapacitySource::Geometry {
            lanes: 2.0,
            vehicle_length_m: 6.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseOptions {
    pub time_unit: TimeUnit,
    pub length_source: LengthSource,
    pub capacity_source: CapacitySource,
    /// Matching friction applied to every link.
    pub friction: f64,
    pub pool_size: f64,
    pub fares: FareParams,
    /// Zero-based column holding per-link background mass, if any.
    pub background_column: Option<usize>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            time_unit: TimeUnit::Minutes,
            length_source: LengthSource::default(),
            capacity_source: CapacitySource::default(),
            friction: 0.8,
            pool_size: 20_000.0,
            fares: FareParams::default(),
            background_column: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub nodes: usize,
    pub links: usize,
    pub od_pairs: usize,
    pub total_demand: f64,
}

struct RawLink {
    line: usize,
    tail: u32,
    head: u32,
    capacity: f64,
    length: f64,
    free_flow: f64,
    background: f64,
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> MterError {
    MterError::Parse {
        file: file.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Body lines as (1-based line, text).
type Body<'a> = Vec<(usize, &'a str)>;

/// Splits off the metadata block. Returns declared tags and the (1-based line,
/// text) pairs of the body.
fn split_metadata<'a>(file: &Path, text: &'a str) -> Result<(Vec<(String, String)>, Body<'a>)> {
    let mut tags = Vec::new();
    let mut body = Vec::new();
    let has_end = text.contains("<END OF METADATA>");
    let mut in_meta = has_end;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if in_meta {
            if line.starts_with("<END OF METADATA>") {
                in_meta = false;
                continue;
            }
            if let Some(rest) = line.strip_prefix('<') {
                let close = rest
                    .find('>')
                    .ok_or_else(|| parse_err(file, i + 1, "unterminated metadata tag"))?;
                tags.push((
                    rest[..close].trim().to_string(),
                    rest[close + 1..].trim().to_string(),
                ));
            }
            continue;
        }
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        body.push((i + 1, line));
    }
    Ok((tags, body))
}

fn tag_usize(file: &Path, tags: &[(String, String)], name: &str) -> Result<Option<usize>> {
    match tags.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)) {
        None => Ok(None),
        Some((_, v)) => v
            .parse()
            .map(Some)
            .map_err(|_| parse_err(file, 0, format!("bad value for <{name}>: {v}"))),
    }
}

fn read_links(path: &Path, options: &ParseOptions) -> Result<(Option<usize>, Vec<RawLink>)> {
    let text = fs::read_to_string(path)?;
    let (tags, body) = split_metadata(path, &text)?;
    let declared_nodes = tag_usize(path, &tags, "NUMBER OF NODES")?;
    let declared_links = tag_usize(path, &tags, "NUMBER OF LINKS")?;
    let mut links = Vec::with_capacity(body.len());
    for (line, row) in body {
        let row = row.trim_end_matches(';').trim();
        let cols: Vec<&str> = row.split_whitespace().filter(|c| *c != ";").collect();
        if cols.len() < 5 {
            return Err(parse_err(
                path,
                line,
                format!("expected at least 5 columns, found {}", cols.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            cols[k].parse::<f64>().map_err(|_| {
                parse_err(
                    path,
                    line,
                    format!("column {} is not numeric: {}", k + 1, cols[k]),
                )
            })
        };
        let node = |k: usize| -> Result<u32> {
            cols[k]
                .parse::<u32>()
                .map_err(|_| parse_err(path, line, format!("bad node id: {}", cols[k])))
        };
        let background = match options.background_column {
            Some(k) if k < cols.len() => num(k)?,
            Some(_) => {
                return Err(parse_err(path, line, "missing background column"));
            }
            None => 0.0,
        };
        links.push(RawLink {
            line,
            tail: node(0)?,
            head: node(1)?,
            capacity: num(2)?,
            length: num(3)?,
            free_flow: num(4)?,
            background,
        });
    }
    if links.is_empty() {
        return Err(parse_err(path, 0, "link file contains no links"));
    }
    if let Some(n) = declared_links {
        if n != links.len() {
            return Err(parse_err(
                path,
                0,
                format!("metadata declares {n} links, found {}", links.len()),
            ));
        }
    }
    Ok((declared_nodes, links))
}

/// Reads a link table into a network (arrival rates zero).
pub fn parse_link_file(path: &Path, options: &ParseOptions) -> Result<Network> {
    let (declared_nodes, raw) = read_links(path, options)?;
    let labels: Vec<u32> = match declared_nodes {
        Some(n) => (1..=n as u32).collect(),
        None => {
            let set: BTreeSet<u32> = raw.iter().flat_map(|l| [l.tail, l.head]).collect();
            set.into_iter().collect()
        }
    };
    let index_of = |label: u32, line: usize| -> Result<usize> {
        match declared_nodes {
            Some(n) if label >= 1 && (label as usize) <= n => Ok(label as usize - 1),
            Some(n) => Err(MterError::Structural(format!(
                "{}:{line}: node {label} outside declared range 1..={n}",
                path.display()
            ))),
            None => Ok(labels.binary_search(&label).expect("label collected above")),
        }
    };
    let mut links = Vec::with_capacity(raw.len());
    for (k, r) in raw.iter().enumerate() {
        let tail = index_of(r.tail, r.line)?;
        let head = index_of(r.head, r.line)?;
        let free_flow = options.time_unit.to_hours(r.free_flow);
        if !(free_flow > 0.0) {
            return Err(MterError::Validation(format!(
                "{}:{}: non-positive free-flow time {}",
                path.display(),
                r.line,
                r.free_flow
            )));
        }
        let length_km = match options.length_source {
            LengthSource::Column { km_per_unit } => r.length * km_per_unit,
            LengthSource::FreeFlow { speed_mph } => free_flow * speed_mph * KM_PER_MILE,
        };
        let jam_capacity = match options.capacity_source {
            CapacitySource::Column if r.capacity > 0.0 => r.capacity,
            CapacitySource::Column | CapacitySource::Geometry { .. } => {
                let (lanes, veh) = match options.capacity_source {
                    CapacitySource::Geometry {
                        lanes,
                        vehicle_length_m,
                    } => (lanes, vehicle_length_m),
                    CapacitySource::Column => (2.0, 6.0),
                };
                lanes * length_km * 1000.0 / veh
            }
        };
        let mut link = Link::new(
            k + 1,
            tail,
            head,
            TravelTimeFn::linear(free_flow, jam_capacity),
            length_km,
        );
        link.friction = options.friction;
        link.background = r.background;
        links.push(link);
    }
    Network::new(labels, links, options.pool_size)
}

/// Reads an origin-destination trip table (`Origin k` blocks of `d : flow;`).
pub fn parse_od_file(path: &Path, network: &Network) -> Result<OdMatrix> {
    let text = fs::read_to_string(path)?;
    let (_, body) = split_metadata(path, &text)?;
    let n = network.num_nodes();
    let mut od = OdMatrix::zeros(n);
    let mut origin: Option<usize> = None;
    let lookup = |label: u32, line: usize| -> Result<usize> {
        network.node_of_label(label).ok_or_else(|| {
            MterError::Structural(format!(
                "{}:{line}: node {label} is not in the network",
                path.display()
            ))
        })
    };
    for (line, row) in body {
        if let Some(rest) = row.strip_prefix("Origin") {
            let label: u32 = rest
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad origin: {rest}")))?;
            origin = Some(lookup(label, line)?);
            continue;
        }
        let o = origin.ok_or_else(|| parse_err(path, line, "entry before any Origin line"))?;
        for entry in row.split(';') {
            let entry = entry.trim();
            if entry.is_empty() {
                continue;
            }
            let (d, v) = entry
                .split_once(':')
                .ok_or_else(|| parse_err(path, line, format!("expected `dest : flow`, got {entry}")))?;
            let d: u32 = d
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad destination: {d}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad flow: {v}")))?;
            let d = lookup(d, line)?;
            od.add(o, d, v);
        }
    }
    Ok(od)
}

/// Reads link and trip files, derives per-link arrival rates and destination
/// probabilities and computes fares.
pub fn parse_network(
    link_file: &Path,
    demand_file: &Path,
    options: &ParseOptions,
) -> Result<(Network, DemandModel, ParseReport)> {
    let mut network = parse_link_file(link_file, options)?;
    let od = parse_od_file(demand_file, &network)?;
    let dest_prob = derive_demand(&od, &mut network)?;
    let fares = compute_fares(&network, &dest_prob, &options.fares)?;
    let demand = DemandModel::new(network.num_nodes(), dest_prob, fares)?;
    let report = ParseReport {
        nodes: network.num_nodes(),
        links: network.num_links(),
        od_pairs: od.positive_pairs(),
        total_demand: od.total(),
    };
    Ok((network, demand, report))
}
