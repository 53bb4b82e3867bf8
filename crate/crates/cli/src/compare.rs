//! Differences between two results, "(a) minus (b)".

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::output::{num, write_table};
use crate::result::ResultFile;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Comparison {
    pub links: Vec<LinkDelta>,
    pub metrics: Vec<(String, f64, f64)>,
    pub region_mass_a: f64,
    pub region_mass_b: f64,
    /// Toll revenue of (a) over (b); `null` when (b) collects none.
    pub toll_revenue_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinkDelta {
    pub id: usize,
    pub tail: u32,
    pub head: u32,
    pub mass_a: f64,
    pub mass_b: f64,
    pub time_a: f64,
    pub time_b: f64,
}

/// Per-link and aggregate deltas. Fails if the two results were computed on
/// different link sets.
pub fn compare(a: &ResultFile, b: &ResultFile, region: &[u32]) -> Result<Comparison, CliError> {
    let mut mismatched = Vec::new();
    if a.links.len() != b.links.len() {
        return Err(CliError::Config(format!(
            "results have {} and {} links",
            a.links.len(),
            b.links.len()
        )));
    }
    for (la, lb) in a.links.iter().zip(&b.links) {
        if (la.id, la.tail, la.head) != (lb.id, lb.tail, lb.head) {
            mismatched.push(format!(
                "{} ({}->{}) vs {} ({}->{})",
                la.id, la.tail, la.head, lb.id, lb.tail, lb.head
            ));
        }
    }
    if !mismatched.is_empty() {
        return Err(CliError::Config(format!(
            "networks differ at links: {}",
            mismatched.join(", ")
        )));
    }
    let links: Vec<LinkDelta> = a
        .links
        .iter()
        .zip(&b.links)
        .map(|(la, lb)| LinkDelta {
            id: la.id,
            tail: la.tail,
            head: la.head,
            mass_a: la.empty_mass + la.hired_mass,
            mass_b: lb.empty_mass + lb.hired_mass,
            time_a: la.time,
            time_b: lb.time,
        })
        .collect();
    let in_region = |d: &&LinkDelta| region.contains(&d.tail) && region.contains(&d.head);
    let region_mass_a = links.iter().filter(in_region).map(|d| d.mass_a).sum();
    let region_mass_b = links.iter().filter(in_region).map(|d| d.mass_b).sum();
    let metrics = match (&a.metrics, &b.metrics) {
        (Some(ma), Some(mb)) => {
            let va = serde_json::to_value(ma)?;
            let vb = serde_json::to_value(mb)?;
            let obj_b = vb.as_object().cloned().unwrap_or_default();
            va.as_object()
                .map(|o| {
                    o.iter()
                        .filter_map(|(k, x)| {
                            let x = x.as_f64().unwrap_or(f64::INFINITY);
                            let y = obj_b.get(k)?.as_f64().unwrap_or(f64::INFINITY);
                            Some((k.clone(), x, y))
                        })
                        .collect()
                })
                .unwrap_or_default()
        }
        _ => Vec::new(),
    };
    let toll =
        |m: &Vec<(String, f64, f64)>| m.iter().find(|r| r.0 == "toll_revenue_rate").map(|r| (r.1, r.2));
    let toll_revenue_ratio = match toll(&metrics) {
        Some((x, y)) if y > 0.0 => x / y,
        _ => f64::NAN,
    };
    Ok(Comparison {
        links,
        metrics,
        region_mass_a,
        region_mass_b,
        toll_revenue_ratio,
    })
}

/// `compare_links.csv` and `compare_metrics.csv` in `dir`.
pub fn write_comparison(dir: &Path, c: &Comparison) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = c
        .links
        .iter()
        .map(|d| {
            vec![
                d.id.to_string(),
                d.tail.to_string(),
                d.head.to_string(),
                num(d.mass_a),
                num(d.mass_b),
                num(d.mass_a - d.mass_b),
                num(d.time_a),
                num(d.time_b),
                num(d.time_a - d.time_b),
            ]
        })
        .collect();
    write_table(
        &dir.join("compare_links.csv"),
        &[
            "link_id",
            "tail",
            "head",
            "mass_a",
            "mass_b",
            "mass_delta",
            "time_a",
            "time_b",
            "time_delta",
        ],
        &rows,
    )?;
    let mut rows: Vec<Vec<String>> = c
        .metrics
        .iter()
        .map(|(k, a, b)| vec![k.clone(), num(*a), num(*b), num(a - b)])
        .collect();
    rows.push(vec![
        "region_mass".into(),
        num(c.region_mass_a),
        num(c.region_mass_b),
        num(c.region_mass_a - c.region_mass_b),
    ]);
    write_table(
        &dir.join("compare_metrics.csv"),
        &["metric", "a", "b", "delta"],
        &rows,
    )
}
