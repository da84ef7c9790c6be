//! Trial structure and CSV ingestion.
//!
//! A [`TrialData`] is a rectangular cluster-by-period table of sizes `n_ij`,
//! event totals `Y_ij+` and treatment indicators `X_ij`. Cluster-periods that
//! were not observed carry `n_ij = 0` and drop out of every estimating
//! equation.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SwgeeError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialData {
    cluster_ids: Vec<String>,
    periods: Vec<String>,
    sizes: Vec<Vec<u64>>,
    totals: Vec<Vec<u64>>,
    treatment: Vec<Vec<u8>>,
}

/// Shape diagnostics for a treatment matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DesignInfo {
    pub is_stepped_wedge: bool,
    /// First treated period (0-based) per cluster.
    pub switch_period: Vec<Option<usize>>,
    pub warnings: Vec<String>,
}

impl TrialData {
    /// Assembles a trial from cluster-by-period matrices. Treatment entries of
    /// unobserved cells are kept but never used.
    pub fn new(
        cluster_ids: Vec<String>,
        periods: Vec<String>,
        sizes: Vec<Vec<u64>>,
        totals: Vec<Vec<u64>>,
        treatment: Vec<Vec<u8>>,
    ) -> Result<Self> {
        let i = cluster_ids.len();
        let j = periods.len();
        if i == 0 || j == 0 {
            return Err(SwgeeError::Input("trial has no clusters or no periods".into()));
        }
        for (name, rows) in [("sizes", &sizes), ("totals", &totals)] {
            if rows.len() != i || rows.iter().any(|r| r.len() != j) {
                return Err(SwgeeError::Integrity(format!("{name} matrix is not {i}x{j}")));
            }
        }
        if treatment.len() != i || treatment.iter().any(|r| r.len() != j) {
            return Err(SwgeeError::Integrity(format!("treatment matrix is not {i}x{j}")));
        }
        for c in 0..i {
            for p in 0..j {
                if totals[c][p] > sizes[c][p] {
                    return Err(SwgeeError::Integrity(format!(
                        "cluster {} period {}: y = {} exceeds n = {}",
                        cluster_ids[c], periods[p], totals[c][p], sizes[c][p]
                    )));
                }
                if treatment[c][p] > 1 {
                    return Err(SwgeeError::Integrity(format!(
                        "cluster {} period {}: treatment must be 0 or 1",
                        cluster_ids[c], periods[p]
                    )));
                }
            }
        }
        let unique: BTreeSet<&String> = cluster_ids.iter().collect();
        if unique.len() != i {
            return Err(SwgeeError::Integrity("duplicate cluster label".into()));
        }
        let unique: BTreeSet<&String> = periods.iter().collect();
        if unique.len() != j {
            return Err(SwgeeError::Integrity("duplicate period label".into()));
        }
        Ok(Self { cluster_ids, periods, sizes, totals, treatment })
    }

    /// Builds a trial with generated labels `c1.., p1..`.
    pub fn from_matrices(
        sizes: Vec<Vec<u64>>,
        totals: Vec<Vec<u64>>,
        treatment: Vec<Vec<u8>>,
    ) -> Result<Self> {
        let i = sizes.len();
        let j = sizes.first().map_or(0, Vec::len);
        let clusters = (1..=i).map(|c| format!("c{c}")).collect();
        let periods = (1..=j).map(|p| format!("p{p}")).collect();
        Self::new(clusters, periods, sizes, totals, treatment)
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    pub fn periods(&self) -> &[String] {
        &self.periods
    }

    pub fn sizes(&self) -> &[Vec<u64>] {
        &self.sizes
    }

    pub fn totals(&self) -> &[Vec<u64>] {
        &self.totals
    }

    pub fn treatment(&self) -> &[Vec<u8>] {
        &self.treatment
    }

    pub fn size(&self, cluster: usize, period: usize) -> u64 {
        self.sizes[cluster][period]
    }

    pub fn total(&self, cluster: usize, period: usize) -> u64 {
        self.totals[cluster][period]
    }

    pub fn treated(&self, cluster: usize, period: usize) -> bool {
        self.treatment[cluster][period] == 1
    }

    /// Cluster-period mean `Y_ij+ / n_ij`, `None` when unobserved.
    pub fn mean(&self, cluster: usize, period: usize) -> Option<f64> {
        let n = self.sizes[cluster][period];
        (n > 0).then(|| self.totals[cluster][period] as f64 / n as f64)
    }

    /// Periods with at least one participant in `cluster`.
    pub fn observed_periods(&self, cluster: usize) -> Vec<usize> {
        (0..self.n_periods()).filter(|&p| self.sizes[cluster][p] > 0).collect()
    }

    /// Returns a copy with clusters in the given order.
    pub fn reorder_clusters(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_clusters() {
            return Err(SwgeeError::InvalidConfig("permutation length mismatch".into()));
        }
        let pick = |rows: &Vec<Vec<u64>>| order.iter().map(|&c| rows[c].clone()).collect();
        Self::new(
            order.iter().map(|&c| self.cluster_ids[c].clone()).collect(),
            self.periods.clone(),
            pick(&self.sizes),
            pick(&self.totals),
            order.iter().map(|&c| self.treatment[c].clone()).collect(),
        )
    }

    /// Writes the cluster-period schema `cluster,period,treatment,n,y`,
    /// skipping unobserved cells.
    pub fn to_cluster_period_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| SwgeeError::Input(e.to_string());
        writer.write_record(["cluster", "period", "treatment", "n", "y"]).map_err(csv_err)?;
        for c in 0..self.n_clusters() {
            for p in 0..self.n_periods() {
                if self.sizes[c][p] == 0 {
                    continue;
                }
                writer
                    .write_record([
                        self.cluster_ids[c].clone(),
                        self.periods[p].clone(),
                        self.treatment[c][p].to_string(),
                        self.sizes[c][p].to_string(),
                        self.totals[c][p].to_string(),
                    ])
                    .map_err(csv_err)?;
            }
        }
        let bytes = writer.into_inner().map_err(|e| SwgeeError::Input(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| SwgeeError::Input(e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
struct IndividualRow {
    cluster: String,
    period: String,
    treatment: String,
    outcome: String,
}

#[derive(Debug, Deserialize)]
struct ClusterPeriodRow {
    cluster: String,
    period: String,
    treatment: String,
    n: String,
    y: String,
}

/// Collapses individual-level rows `cluster,period,treatment,outcome` into
/// cluster-period totals.
pub fn ingest_individual<R: Read>(reader: R) -> Result<TrialData> {
    let mut acc = Accumulator::default();
    for (idx, record) in csv_reader(reader).deserialize::<IndividualRow>().enumerate() {
        let row = idx + 1;
        let rec = record.map_err(|e| schema(row, e.to_string()))?;
        let outcome = parse_binary(&rec.outcome).ok_or_else(|| {
            schema(row, format!("outcome must be 0 or 1, got {:?}", rec.outcome))
        })?;
        let treatment = parse_binary(&rec.treatment).ok_or_else(|| {
            schema(row, format!("treatment must be 0 or 1, got {:?}", rec.treatment))
        })?;
        let cell = acc.cell(&rec.cluster, &rec.period);
        match cell.treatment {
            Some(t) if t != treatment => {
                return Err(SwgeeError::Integrity(format!(
                    "conflicting treatment within cluster {} period {}",
                    rec.cluster, rec.period
                )))
            }
            _ => cell.treatment = Some(treatment),
        }
        cell.n += 1;
        cell.y += u64::from(outcome);
    }
    acc.finish()
}

/// Reads the cluster-period schema `cluster,period,treatment,n,y`.
pub fn ingest_cluster_period<R: Read>(reader: R) -> Result<TrialData> {
    let mut acc = Accumulator::default();
    for (idx, record) in csv_reader(reader).deserialize::<ClusterPeriodRow>().enumerate() {
        let row = idx + 1;
        let rec = record.map_err(|e| schema(row, e.to_string()))?;
        let treatment = parse_binary(&rec.treatment).ok_or_else(|| {
            schema(row, format!("treatment must be 0 or 1, got {:?}", rec.treatment))
        })?;
        let n: u64 = rec
            .n
            .trim()
            .parse()
            .map_err(|_| schema(row, format!("n must be a non-negative integer, got {:?}", rec.n)))?;
        let y: u64 = rec
            .y
            .trim()
            .parse()
            .map_err(|_| schema(row, format!("y must be a non-negative integer, got {:?}", rec.y)))?;
        if y > n {
            return Err(SwgeeError::Integrity(format!(
                "row {row}: y = {y} exceeds n = {n}"
            )));
        }
        let cell = acc.cell(&rec.cluster, &rec.period);
        if cell.treatment.is_some() {
            return Err(SwgeeError::Integrity(format!(
                "duplicate row for cluster {} period {}",
                rec.cluster, rec.period
            )));
        }
        cell.treatment = Some(treatment);
        cell.n = n;
        cell.y = y;
    }
    acc.finish()
}

/// Stepped-wedge diagnostics; never fails.
pub fn validate_design(data: &TrialData) -> DesignInfo {
    let mut warnings = Vec::new();
    let mut monotone = true;
    let mut switch_period = Vec::with_capacity(data.n_clusters());
    for c in 0..data.n_clusters() {
        let observed = data.observed_periods(c);
        let mut prev: Option<u8> = None;
        for &p in &observed {
            let x = data.treatment[c][p];
            if prev == Some(1) && x == 0 {
                monotone = false;
                warnings.push(format!(
                    "cluster {} returns to control in period {}; not a stepped wedge design",
                    data.cluster_ids[c], data.periods[p]
                ));
            }
            prev = Some(x);
        }
        switch_period.push(observed.iter().copied().find(|&p| data.treatment[c][p] == 1));
    }
    if switch_period.iter().all(Option::is_none) {
        warnings.push("no cluster-period receives the intervention".into());
    }
    DesignInfo { is_stepped_wedge: monotone, switch_period, warnings }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader)
}

fn schema(row: usize, message: String) -> SwgeeError {
    SwgeeError::Schema { row, message }
}

fn parse_binary(s: &str) -> Option<u8> {
    match s.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

#[derive(Default)]
struct Cell {
    n: u64,
    y: u64,
    treatment: Option<u8>,
}

#[derive(Default)]
struct Accumulator {
    clusters: Vec<String>,
    cluster_index: HashMap<String, usize>,
    periods: BTreeSet<String>,
    cells: HashMap<(usize, String), Cell>,
}

impl Accumulator {
    fn cell(&mut self, cluster: &str, period: &str) -> &mut Cell {
        let next = self.clusters.len();
        let c = *self.cluster_index.entry(cluster.to_string()).or_insert(next);
        if c == next {
            self.clusters.push(cluster.to_string());
        }
        self.periods.insert(period.to_string());
        self.cells.entry((c, period.to_string())).or_default()
    }

    fn finish(self) -> Result<TrialData> {
        if self.cells.is_empty() {
            return Err(SwgeeError::Input("no data rows".into()));
        }
        let periods = sort_periods(self.periods.into_iter().collect());
        let i = self.clusters.len();
        let j = periods.len();
        let mut sizes = vec![vec![0; j]; i];
        let mut totals = vec![vec![0; j]; i];
        let mut treatment = vec![vec![0; j]; i];
        for ((c, period), cell) in self.cells {
            let p = periods.iter().position(|q| *q == period).expect("period registered");
            sizes[c][p] = cell.n;
            totals[c][p] = cell.y;
            treatment[c][p] = cell.treatment.unwrap_or(0);
        }
        TrialData::new(self.clusters, periods, sizes, totals, treatment)
    }
}

/// Numeric order when every label parses as a number, lexicographic otherwise.
fn sort_periods(mut labels: Vec<String>) -> Vec<String> {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
    match numeric {
        Some(values) if values.iter().all(|v| v.is_finite()) => {
            let mut keyed: Vec<(f64, String)> = values.into_iter().zip(labels).collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            keyed.into_iter().map(|(_, l)| l).collect()
        }
        _ => {
            labels.sort();
            labels
        }
    }
}
