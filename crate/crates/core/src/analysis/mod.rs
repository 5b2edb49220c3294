//! Offline statistics over record files: grouped median tables, CDFs of
//! relative differences against a baseline protocol, and CSV export.

mod export;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use export::{format_sig, read_cdf_csv, read_table_csv, write_cdf_csv, write_table_csv};

use crate::orchestrator::MeasurementRecord;
use crate::protocol::ProtocolKind;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("records do not match the schema: {0}")]
    Schema(String),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("unknown grouping dimension {0:?}")]
    UnknownDimension(String),
    #[error("baseline must be positive")]
    ZeroBaseline,
    #[error("nothing to export")]
    DataEmpty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    HandshakeMs,
    ResolveMs,
    /// handshake_ms + resolve_ms, with DoUDP's absent handshake counted as 0.
    Total,
    E2eMs,
    HsC2rBytes,
    HsR2cBytes,
    QueryBytes,
    ResponseBytes,
    HandshakeBytes,
    DnsBytes,
    TotalBytes,
}

impl Metric {
    pub const ALL: [Metric; 11] = [
        Metric::HandshakeMs,
        Metric::ResolveMs,
        Metric::Total,
        Metric::E2eMs,
        Metric::HsC2rBytes,
        Metric::HsR2cBytes,
        Metric::QueryBytes,
        Metric::ResponseBytes,
        Metric::HandshakeBytes,
        Metric::DnsBytes,
        Metric::TotalBytes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::HandshakeMs => "handshake_ms",
            Metric::ResolveMs => "resolve_ms",
            Metric::Total => "total",
            Metric::E2eMs => "e2e_ms",
            Metric::HsC2rBytes => "hs_c2r_bytes",
            Metric::HsR2cBytes => "hs_r2c_bytes",
            Metric::QueryBytes => "query_bytes",
            Metric::ResponseBytes => "response_bytes",
            Metric::HandshakeBytes => "handshake_bytes",
            Metric::DnsBytes => "dns_bytes",
            Metric::TotalBytes => "total_bytes",
        }
    }

    /// The metric's value for `r`, or `None` when the record has none.
    /// DoUDP has no handshake, so handshake metrics are absent, not zero.
    pub fn value(self, r: &MeasurementRecord) -> Option<f64> {
        let no_handshake = r.protocol == Some(ProtocolKind::DoUdp);
        let hs_bytes = |v: Option<u64>| {
            if no_handshake {
                None
            } else {
                v.map(|b| b as f64)
            }
        };
        match self {
            Metric::HandshakeMs => r.handshake_ms,
            Metric::ResolveMs => r.resolve_ms,
            Metric::Total => Some(r.resolve_ms? + r.handshake_ms.unwrap_or(0.0)),
            Metric::E2eMs => r.e2e_ms,
            Metric::HsC2rBytes => hs_bytes(r.hs_c2r_bytes),
            Metric::HsR2cBytes => hs_bytes(r.hs_r2c_bytes),
            Metric::QueryBytes => r.query_bytes.map(|b| b as f64),
            Metric::ResponseBytes => r.response_bytes.map(|b| b as f64),
            Metric::HandshakeBytes => hs_bytes(Some(r.hs_c2r_bytes? + r.hs_r2c_bytes?)),
            Metric::DnsBytes => Some((r.query_bytes? + r.response_bytes?) as f64),
            Metric::TotalBytes => Some(
                (r.hs_c2r_bytes? + r.hs_r2c_bytes? + r.query_bytes? + r.response_bytes?) as f64,
            ),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| AnalysisError::UnknownMetric(s.to_string()))
    }
}

/// Row grouping for tables and CDFs. Protocol is always the column axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Vantage,
    Resolver,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Vantage => "vantage",
            Dimension::Resolver => "resolver",
        }
    }

    fn of(self, r: &MeasurementRecord) -> &str {
        match self {
            Dimension::Vantage => &r.vantage_label,
            Dimension::Resolver => &r.resolver,
        }
    }

    /// Parses a comma-separated list such as `vantage,resolver`.
    pub fn parse_list(s: &str) -> Result<Vec<Dimension>, AnalysisError> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| match t {
                "vantage" => Ok(Dimension::Vantage),
                "resolver" => Ok(Dimension::Resolver),
                other => Err(AnalysisError::UnknownDimension(other.to_string())),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalysisOptions {
    /// Count cache-warming legs alongside the measured ones.
    pub include_warm: bool,
}

/// Median of `values`; even counts average the middle two.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

/// `(candidate - baseline) / baseline`.
pub fn relative_difference(candidate: f64, baseline: f64) -> Result<f64, AnalysisError> {
    if baseline <= 0.0 || !baseline.is_finite() {
        return Err(AnalysisError::ZeroBaseline);
    }
    Ok((candidate - baseline) / baseline)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cell {
    /// Absent when no record in the cell carried the metric.
    pub median: Option<f64>,
    pub samples: usize,
    /// Error records in the cell.
    pub losses: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    /// One value per grouping dimension.
    pub key: Vec<String>,
    pub cells: BTreeMap<ProtocolKind, Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianTable {
    pub metric: Metric,
    pub dimensions: Vec<Dimension>,
    pub protocols: Vec<ProtocolKind>,
    pub rows: Vec<TableRow>,
}

impl MedianTable {
    pub fn cell(&self, key: &[&str], p: ProtocolKind) -> Option<&Cell> {
        self.rows
            .iter()
            .find(|r| r.key.iter().map(String::as_str).eq(key.iter().copied()))
            .and_then(|r| r.cells.get(&p))
    }
}

fn selected<'a>(
    records: &'a [MeasurementRecord],
    opts: AnalysisOptions,
) -> impl Iterator<Item = (&'a MeasurementRecord, ProtocolKind)> + 'a {
    records
        .iter()
        .filter(move |r| opts.include_warm || !r.warm)
        .filter_map(|r| r.protocol.map(|p| (r, p)))
}

type Groups<'a> = BTreeMap<Vec<String>, BTreeMap<ProtocolKind, Vec<&'a MeasurementRecord>>>;

fn group<'a>(
    records: &'a [MeasurementRecord],
    dims: &[Dimension],
    opts: AnalysisOptions,
) -> Groups<'a> {
    let mut groups: Groups<'a> = BTreeMap::new();
    for (r, p) in selected(records, opts) {
        let key = dims.iter().map(|d| d.of(r).to_string()).collect();
        groups.entry(key).or_default().entry(p).or_default().push(r);
    }
    groups
}

/// Median of `metric` per group and protocol.
pub fn median_table(
    records: &[MeasurementRecord],
    dims: &[Dimension],
    metric: Metric,
    opts: AnalysisOptions,
) -> MedianTable {
    let groups = group(records, dims, opts);
    let mut protocols: Vec<ProtocolKind> =
        groups.values().flat_map(|g| g.keys().copied()).collect();
    protocols.sort();
    protocols.dedup();
    let rows = groups
        .into_iter()
        .map(|(key, per)| TableRow {
            key,
            cells: per
                .into_iter()
                .map(|(p, rs)| {
                    let values: Vec<f64> = rs
                        .iter()
                        .filter(|r| !r.is_error())
                        .filter_map(|r| metric.value(r))
                        .collect();
                    let cell = Cell {
                        median: median(&values),
                        samples: values.len(),
                        losses: rs.iter().filter(|r| r.is_error()).count(),
                    };
                    (p, cell)
                })
                .collect(),
        })
        .collect();
    MedianTable {
        metric,
        dimensions: dims.to_vec(),
        protocols,
        rows,
    }
}

/// Ungrouped per-protocol medians of every byte metric, laid out like a size table.
pub fn size_table(records: &[MeasurementRecord], opts: AnalysisOptions) -> Vec<MedianTable> {
    [
        Metric::TotalBytes,
        Metric::HsC2rBytes,
        Metric::HsR2cBytes,
        Metric::QueryBytes,
        Metric::ResponseBytes,
    ]
    .into_iter()
    .map(|m| median_table(records, &[], m, opts))
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeCdf {
    pub baseline: ProtocolKind,
    pub metric: Metric,
    /// Sorted `(x, F(x))` points per protocol, one point per distinct x.
    pub series: BTreeMap<ProtocolKind, Vec<(f64, f64)>>,
    /// Groups without a usable baseline median.
    pub dropped_groups: usize,
}

/// Empirical CDF with ties collapsed into a single step.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = f,
            _ => out.push((*x, f)),
        }
    }
    out
}

/// Per group: each protocol's median relative to the baseline's median.
/// Then, per protocol, the CDF of those relative differences over groups.
pub fn relative_cdf(
    records: &[MeasurementRecord],
    baseline: ProtocolKind,
    metric: Metric,
    dims: &[Dimension],
    opts: AnalysisOptions,
) -> RelativeCdf {
    let table = median_table(records, dims, metric, opts);
    let mut diffs: BTreeMap<ProtocolKind, Vec<f64>> = BTreeMap::new();
    let mut dropped = 0;
    for row in &table.rows {
        let base = row.cells.get(&baseline).and_then(|c| c.median);
        let Some(base) = base.filter(|b| *b > 0.0) else {
            dropped += 1;
            continue;
        };
        for (p, cell) in &row.cells {
            if let Some(m) = cell.median {
                if let Ok(d) = relative_difference(m, base) {
                    diffs.entry(*p).or_default().push(d);
                }
            }
        }
    }
    if dropped > 0 {
        tracing::warn!(dropped, %baseline, "groups without a baseline median were dropped");
    }
    RelativeCdf {
        baseline,
        metric,
        series: diffs.into_iter().map(|(p, v)| (p, ecdf(&v))).collect(),
        dropped_groups: dropped,
    }
}

/// Loads a JSONL record file.
pub fn load_records(
    path: impl AsRef<std::path::Path>,
) -> Result<Vec<MeasurementRecord>, AnalysisError> {
    crate::orchestrator::read_records(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => AnalysisError::Schema(e.to_string()),
        _ => AnalysisError::Io(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;

    fn rec(group: &str, p: ProtocolKind, hs: f64) -> MeasurementRecord {
        let mut r: MeasurementRecord = serde_json::from_value(serde_json::json!({
            "timestamp_utc": Utc::now(),
            "round_start_utc": Utc::now(),
            "campaign_round": 0,
            "vantage_label": "v",
            "resolver": group,
            "protocol": p,
            "qname": "google.com",
            "qtype": 1,
            "warm": false,
        }))
        .unwrap();
        r.handshake_ms = Some(hs);
        r.resolve_ms = Some(hs / 2.0);
        r
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&[1.0, 2.0, 3.0, 100.0]), Some(2.5));
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn relative_difference_examples() {
        assert!((relative_difference(110.0, 100.0).unwrap() - 0.10).abs() < 1e-12);
        assert_eq!(relative_difference(100.0, 100.0).unwrap(), 0.0);
        assert!(matches!(
            relative_difference(1.0, 0.0),
            Err(AnalysisError::ZeroBaseline)
        ));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
        }
        assert!(matches!(
            "latency".parse::<Metric>(),
            Err(AnalysisError::UnknownMetric(_))
        ));
    }

    #[test]
    fn empty_cells_and_losses() {
        let mut err = rec("a", ProtocolKind::DoT, 0.0);
        err.handshake_ms = None;
        err.resolve_ms = None;
        err.error = Some("timeout".into());
        let mut warm = rec("a", ProtocolKind::DoT, 999.0);
        warm.warm = true;
        let recs = vec![rec("a", ProtocolKind::DoQ, 10.0), err, warm];
        let t = median_table(
            &recs,
            &[Dimension::Resolver],
            Metric::HandshakeMs,
            AnalysisOptions::default(),
        );
        let dot = t.cell(&["a"], ProtocolKind::DoT).unwrap();
        assert_eq!((dot.median, dot.samples, dot.losses), (None, 0, 1));
        assert_eq!(
            t.cell(&["a"], ProtocolKind::DoQ).unwrap().median,
            Some(10.0)
        );
        let with_warm = median_table(
            &recs,
            &[Dimension::Resolver],
            Metric::HandshakeMs,
            AnalysisOptions { include_warm: true },
        );
        assert_eq!(
            with_warm.cell(&["a"], ProtocolKind::DoT).unwrap().median,
            Some(999.0)
        );
    }

    #[test]
    fn doudp_has_no_handshake_metric() {
        let mut r = rec("a", ProtocolKind::DoUdp, 0.0);
        r.handshake_ms = None;
        r.hs_c2r_bytes = Some(0);
        r.hs_r2c_bytes = Some(0);
        r.query_bytes = Some(59);
        r.response_bytes = Some(63);
        assert_eq!(Metric::HandshakeMs.value(&r), None);
        assert_eq!(Metric::HsC2rBytes.value(&r), None);
        assert_eq!(Metric::TotalBytes.value(&r), Some(122.0));
        assert_eq!(Metric::Total.value(&r), Some(0.0));
    }

    #[test]
    fn cdf_collapses_ties_and_drops_missing_baselines() {
        assert_eq!(ecdf(&[0.0, 0.0, 1.0, 1.0]), vec![(0.0, 0.5), (1.0, 1.0)]);
        let recs = vec![
            rec("g1", ProtocolKind::DoUdp, 100.0),
            rec("g1", ProtocolKind::DoQ, 105.0),
            rec("g2", ProtocolKind::DoQ, 50.0),
        ];
        let cdf = relative_cdf(
            &recs,
            ProtocolKind::DoUdp,
            Metric::HandshakeMs,
            &[Dimension::Resolver],
            AnalysisOptions::default(),
        );
        assert_eq!(cdf.dropped_groups, 1);
        let doq = &cdf.series[&ProtocolKind::DoQ];
        assert_eq!(doq.len(), 1);
        assert!((doq[0].0 - 0.05).abs() < 1e-12);
        assert_eq!(cdf.series[&ProtocolKind::DoUdp], vec![(0.0, 1.0)]);
    }
}
