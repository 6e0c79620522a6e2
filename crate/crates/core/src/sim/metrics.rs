use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ProtocolMode;
use crate::error::{Error, Result};
use crate::secagg::ClientId;

pub const CSV_HEADER: [&str; 11] = [
    "round",
    "main_acc",
    "backdoor_acc",
    "bound",
    "median_norm",
    "n_sampled",
    "n_malicious",
    "n_rejected",
    "aborted",
    "mode",
    "checksum",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub mode: ProtocolMode,
    pub sampled: Vec<ClientId>,
    /// Controlled participants that submitted an attack update.
    pub malicious: Vec<ClientId>,
    /// Honest id displaced by a fixed-frequency substitution.
    pub substituted: Option<ClientId>,
    pub declared_norms: Vec<(ClientId, f64)>,
    pub bound: Option<f64>,
    /// Proof bit-width in crypto mode.
    pub range_bits: Option<u32>,
    pub median_norm: f64,
    pub accepted: Vec<ClientId>,
    pub rejected: Vec<(ClientId, String)>,
    pub clipped: Vec<ClientId>,
    pub weights: Vec<(ClientId, f64)>,
    pub empty_aggregate: bool,
    /// Sybil diversification ran out of orthogonal directions.
    pub quasi_orthogonal: bool,
    pub aborted: Option<String>,
    pub main_acc: f64,
    pub backdoor_acc: f64,
    /// Fraction of tail samples not classified as their true class.
    pub tail_error: f64,
    pub wall_ms: f64,
    pub checksum: String,
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    pub main_acc: f64,
    pub backdoor_acc: f64,
    pub bound: Option<f64>,
    pub median_norm: f64,
    pub n_sampled: usize,
    pub n_malicious: usize,
    pub n_rejected: usize,
    pub aborted: bool,
    pub mode: ProtocolMode,
    pub checksum: String,
}

impl MetricsRow {
    /// The row a record produces, with floats rounded to the CSV's 6 decimals.
    pub fn of(r: &RoundRecord) -> Self {
        let six = |x: f64| format!("{x:.6}").parse::<f64>().expect("formatted float parses");
        MetricsRow {
            round: r.round,
            main_acc: six(r.main_acc),
            backdoor_acc: six(r.backdoor_acc),
            bound: r.bound.map(six),
            median_norm: six(r.median_norm),
            n_sampled: r.sampled.len(),
            n_malicious: r.malicious.len(),
            n_rejected: r.rejected.len(),
            aborted: r.aborted.is_some(),
            mode: r.mode,
            checksum: r.checksum.clone(),
        }
    }
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e))
}

pub fn write_metrics(records: &[RoundRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    w.write_record(CSV_HEADER).map_err(csv_error(path))?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            format!("{:.6}", r.main_acc),
            format!("{:.6}", r.backdoor_acc),
            r.bound.map(|b| format!("{b:.6}")).unwrap_or_default(),
            format!("{:.6}", r.median_norm),
            r.sampled.len().to_string(),
            r.malicious.len().to_string(),
            r.rejected.len().to_string(),
            r.aborted.is_some().to_string(),
            r.mode.name().to_string(),
            r.checksum.clone(),
        ])
        .map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    let header = r.headers().map_err(csv_error(path))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Data(format!("{}: unexpected metrics header", path.display())));
    }
    let bad = |line: usize, what: &str| Error::Data(format!("{}: row {line}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error(path))?;
        let line = i + 2;
        let float = |k: usize, what: &str| rec[k].parse::<f64>().map_err(|_| bad(line, what));
        let int = |k: usize, what: &str| rec[k].parse::<usize>().map_err(|_| bad(line, what));
        rows.push(MetricsRow {
            round: rec[0].parse().map_err(|_| bad(line, "round"))?,
            main_acc: float(1, "main_acc")?,
            backdoor_acc: float(2, "backdoor_acc")?,
            bound: if rec[3].is_empty() {
                None
            } else {
                Some(float(3, "bound")?)
            },
            median_norm: float(4, "median_norm")?,
            n_sampled: int(5, "n_sampled")?,
            n_malicious: int(6, "n_malicious")?,
            n_rejected: int(7, "n_rejected")?,
            aborted: rec[8].parse().map_err(|_| bad(line, "aborted"))?,
            mode: rec[9].parse().map_err(|_| bad(line, "mode"))?,
            checksum: rec[10].to_string(),
        });
    }
    Ok(rows)
}
