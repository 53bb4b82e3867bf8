use std::path::Path;

use serde::Deserialize;

use super::Network;
use crate::error::{MterError, Result};

/// Dense origin-destination rate matrix (passengers per hour).
#[derive(Clone, Debug, PartialEq)]
pub struct OdMatrix {
    n: usize,
    data: Vec<f64>,
}

impl OdMatrix {
    pub fn zeros(n: usize) -> Self {
        OdMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut od = OdMatrix::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "OD matrix must be square");
            od.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        od
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, o: usize, d: usize) -> f64 {
        self.data[o * self.n + d]
    }

    pub fn add(&mut self, o: usize, d: usize, v: f64) {
        self.data[o * self.n + d] += v;
    }

    /// Total off-diagonal demand.
    pub fn total(&self) -> f64 {
        (0..self.n)
            .flat_map(|o| (0..self.n).filter(move |&d| d != o).map(move |d| (o, d)))
            .map(|(o, d)| self.get(o, d))
            .sum()
    }

    pub fn positive_pairs(&self) -> usize {
        (0..self.n)
            .flat_map(|o| (0..self.n).filter(move |&d| d != o).map(move |d| (o, d)))
            .filter(|&(o, d)| self.get(o, d) > 0.0)
            .count()
    }

    pub fn origin_total(&self, o: usize) -> f64 {
        (0..self.n).filter(|&d| d != o).map(|d| self.get(o, d)).sum()
    }
}

/// Spreads each node's origin total evenly over its incoming links and
/// normalizes destination shares. Returns the `n x n` destination probability
/// matrix; arrival rates are written into the network's links.
pub fn derive_demand(od: &OdMatrix, network: &mut Network) -> Result<Vec<f64>> {
    let n = network.num_nodes();
    if od.size() != n {
        return Err(MterError::Validation(format!(
            "OD matrix is {}x{}, network has {n} nodes",
            od.size(),
            od.size()
        )));
    }
    for o in 0..n {
        for d in 0..n {
            let v = od.get(o, d);
            if !(v >= 0.0) {
                return Err(MterError::Validation(format!(
                    "negative demand {v} from node {} to {}",
                    network.label(o),
                    network.label(d)
                )));
            }
        }
    }
    let mut dest_prob = vec![0.0; n * n];
    let mut lambda = vec![0.0; network.num_links()];
    for j in 0..n {
        let total = od.origin_total(j);
        let row = &mut dest_prob[j * n..(j + 1) * n];
        if total > 0.0 {
            let incoming = network.in_links(j);
            if incoming.is_empty() {
                return Err(MterError::Structural(format!(
                    "node {} has demand but no incoming links",
                    network.label(j)
                )));
            }
            let share = total / incoming.len() as f64;
            for &a in incoming {
                lambda[a] += share;
            }
            for (d, r) in row.iter_mut().enumerate().filter(|&(d, _)| d != j) {
                *r = od.get(j, d) / total;
            }
        } else if n > 1 {
            let u = 1.0 / (n - 1) as f64;
            for (_, r) in row.iter_mut().enumerate().filter(|&(d, _)| d != j) {
                *r = u;
            }
        }
    }
    network.update_links(|links| {
        for (link, l) in links.iter_mut().zip(lambda) {
            link.arrival_rate = l;
        }
    })?;
    Ok(dest_prob)
}

#[derive(Deserialize)]
struct LambdaRow {
    link_id: usize,
    lambda: f64,
    gamma: f64,
}

#[derive(Deserialize)]
struct TollRow {
    link_id: usize,
    toll_dollars: f64,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for (k, rec) in reader.deserialize::<T>().enumerate() {
        rows.push((k + 2, rec.map_err(|e| csv_err(path, e))?));
    }
    Ok(rows)
}

fn csv_err(path: &Path, e: csv::Error) -> MterError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MterError::Io(io),
        kind => MterError::Parse {
            file: path.display().to_string(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

fn link_index(network: &Network, id: usize, path: &Path, line: usize) -> Result<usize> {
    network
        .links()
        .iter()
        .position(|l| l.id == id)
        .ok_or_else(|| MterError::Structural(format!("{}:{line}: unknown link id {id}", path.display())))
}

/// Applies a `link_id,lambda,gamma` CSV on top of the network.
pub fn apply_lambda_overrides(network: &mut Network, path: &Path) -> Result<()> {
    let rows: Vec<(usize, LambdaRow)> = read_csv(path)?;
    let mut updates = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        updates.push((link_index(network, row.link_id, path, line)?, row));
    }
    network.update_links(|links| {
        for (a, row) in updates {
            links[a].arrival_rate = row.lambda;
            links[a].friction = row.gamma;
        }
    })
}

/// Applies a `link_id,toll_dollars` CSV.
pub fn apply_tolls(network: &mut Network, path: &Path) -> Result<()> {
    let rows: Vec<(usize, TollRow)> = read_csv(path)?;
    let mut updates = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        updates.push((link_index(network, row.link_id, path, line)?, row.toll_dollars));
    }
    network.update_links(|links| {
        for (a, toll) in updates {
            links[a].toll = toll;
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Link, TravelTimeFn};

    /// Star around node 0 with four spokes in each direction.
    fn star() -> Network {
        let mut links = Vec::new();
        for k in 1..=4 {
            links.push(Link::new(
                links.len() + 1,
                k,
                0,
                TravelTimeFn::linear(0.1, 50.0),
                1.0,
            ));
            links.push(Link::new(
                links.len() + 1,
                0,
                k,
                TravelTimeFn::linear(0.1, 50.0),
                1.0,
            ));
        }
        Network::new((1..=5).collect(), links, 10.0).unwrap()
    }

    #[test]
    fn uniform_split_over_incoming_links() {
        let mut net = star();
        let mut od = OdMatrix::zeros(5);
        od.add(0, 1, 50.0);
        od.add(0, 2, 50.0);
        let n = derive_demand(&od, &mut net).unwrap();
        for &a in net.in_links(0) {
            assert_eq!(net.link(a).arrival_rate, 25.0);
        }
        assert_eq!(&n[0..5], &[0.0, 0.5, 0.5, 0.0, 0.0]);
        // zero-demand node gets a uniform row
        assert_eq!(&n[5..10], &[0.25, 0.0, 0.25, 0.25, 0.25]);
        assert!((net.total_arrival_rate() - od.total()).abs() < 1e-12);
    }

    #[test]
    fn negative_demand_rejected() {
        let mut net = star();
        let mut od = OdMatrix::zeros(5);
        od.add(2, 1, -1.0);
        assert!(matches!(
            derive_demand(&od, &mut net),
            Err(MterError::Validation(_))
        ));
    }

    #[test]
    fn overrides_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let lp = dir.path().join("lambda.csv");
        std::fs::write(&lp, "link_id,lambda,gamma\n1, 12.5, 0.4\n3,7,1.5\n").unwrap();
        let tp = dir.path().join("tolls.csv");
        std::fs::write(&tp, "link_id,toll_dollars\n2,2.0\n").unwrap();
        let mut net = star();
        apply_lambda_overrides(&mut net, &lp).unwrap();
        apply_tolls(&mut net, &tp).unwrap();
        assert_eq!(net.link(0).arrival_rate, 12.5);
        assert_eq!(net.link(0).friction, 0.4);
        assert_eq!(net.link(2).friction, 1.5);
        assert_eq!(net.link(1).toll, 2.0);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "link_id,toll_dollars\n99,1\n").unwrap();
        assert!(matches!(
            apply_tolls(&mut net, &bad),
            Err(MterError::Structural(_))
        ));
    }
}
