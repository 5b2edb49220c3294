use std::collections::BTreeMap;
use std::path::Path;

use super::{AnalysisError, Cell, Dimension, MedianTable, Metric, RelativeCdf, TableRow};
use crate::protocol::ProtocolKind;

const SIGNIFICANT: i32 = 6;

/// Renders `x` with six significant digits, trailing zeros trimmed.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() {
            "0".to_string()
        } else {
            x.to_string()
        };
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..SIGNIFICANT).contains(&exp) {
        return format!("{:.*e}", (SIGNIFICANT - 1) as usize, x);
    }
    let decimals = (SIGNIFICANT - 1 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>, AnalysisError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| AnalysisError::Schema(format!("not a number: {s:?}")))
}

fn create_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, AnalysisError> {
    Ok(csv::Writer::from_path(path)?)
}

/// Writes a table as CSV: grouping columns, then median, sample count and
/// loss count per protocol. Empty cells stay empty.
pub fn write_table_csv(table: &MedianTable, path: impl AsRef<Path>) -> Result<(), AnalysisError> {
    if table.rows.is_empty() {
        return Err(AnalysisError::DataEmpty);
    }
    let mut w = create_writer(path.as_ref())?;
    let mut header: Vec<String> = table
        .dimensions
        .iter()
        .map(|d| d.as_str().to_string())
        .collect();
    for p in &table.protocols {
        header.push(format!("{p}_{}", table.metric));
        header.push(format!("{p}_n"));
        header.push(format!("{p}_loss"));
    }
    w.write_record(&header)?;
    for row in &table.rows {
        let mut line = row.key.clone();
        for p in &table.protocols {
            match row.cells.get(p) {
                Some(c) => {
                    line.push(opt(c.median));
                    line.push(c.samples.to_string());
                    line.push(c.losses.to_string());
                }
                None => line.extend([String::new(), String::new(), String::new()]),
            }
        }
        w.write_record(&line)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table_csv(path: impl AsRef<Path>) -> Result<MedianTable, AnalysisError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let dims = header
        .iter()
        .take_while(|h| Dimension::parse_list(h).is_ok())
        .map(|h| Dimension::parse_list(h).map(|v| v[0]))
        .collect::<Result<Vec<_>, _>>()?;
    let rest = &header[dims.len()..];
    if !rest.len().is_multiple_of(3) {
        return Err(AnalysisError::Schema(
            "protocol columns come in threes".into(),
        ));
    }
    let mut protocols = Vec::new();
    let mut metric = None;
    for chunk in rest.chunks(3) {
        let (p, m) = chunk[0]
            .split_once('_')
            .ok_or_else(|| AnalysisError::Schema(format!("bad column {:?}", chunk[0])))?;
        protocols.push(
            p.parse::<ProtocolKind>()
                .map_err(|e| AnalysisError::Schema(e.to_string()))?,
        );
        metric = Some(m.parse::<Metric>()?);
    }
    let metric = metric.ok_or(AnalysisError::DataEmpty)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let key = rec.iter().take(dims.len()).map(str::to_string).collect();
        let mut cells = BTreeMap::new();
        for (i, p) in protocols.iter().enumerate() {
            let base = dims.len() + 3 * i;
            let n = rec.get(base + 1).unwrap_or("");
            if n.is_empty() {
                continue;
            }
            let count = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| AnalysisError::Schema(format!("bad count {s:?}")))
            };
            cells.insert(
                *p,
                Cell {
                    median: parse_opt(rec.get(base).unwrap_or(""))?,
                    samples: count(n)?,
                    losses: count(rec.get(base + 2).unwrap_or("0"))?,
                },
            );
        }
        rows.push(TableRow { key, cells });
    }
    Ok(MedianTable {
        metric,
        dimensions: dims,
        protocols,
        rows,
    })
}

/// Writes a CDF in wide form: an `x` and an `F` column per protocol, rows
/// padded with empty fields where a series is shorter.
pub fn write_cdf_csv(cdf: &RelativeCdf, path: impl AsRef<Path>) -> Result<(), AnalysisError> {
    if cdf.series.values().all(Vec::is_empty) {
        return Err(AnalysisError::DataEmpty);
    }
    let mut w = create_writer(path.as_ref())?;
    let header: Vec<String> = cdf
        .series
        .keys()
        .flat_map(|p| [format!("{p}_x"), format!("{p}_F")])
        .collect();
    w.write_record(&header)?;
    let len = cdf.series.values().map(Vec::len).max().unwrap_or(0);
    for i in 0..len {
        let line: Vec<String> = cdf
            .series
            .values()
            .flat_map(|s| match s.get(i) {
                Some((x, f)) => [format_sig(*x), format_sig(*f)],
                None => [String::new(), String::new()],
            })
            .collect();
        w.write_record(&line)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a wide CDF file back. Baseline and metric are not stored in the
/// file and must be supplied.
pub fn read_cdf_csv(
    path: impl AsRef<Path>,
    baseline: ProtocolKind,
    metric: Metric,
) -> Result<RelativeCdf, AnalysisError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut protocols = Vec::new();
    for pair in header.chunks(2) {
        let p = pair[0]
            .strip_suffix("_x")
            .ok_or_else(|| AnalysisError::Schema(format!("bad column {:?}", pair[0])))?;
        protocols.push(
            p.parse::<ProtocolKind>()
                .map_err(|e| AnalysisError::Schema(e.to_string()))?,
        );
    }
    let mut series: BTreeMap<ProtocolKind, Vec<(f64, f64)>> =
        protocols.iter().map(|p| (*p, Vec::new())).collect();
    for rec in r.records() {
        let rec = rec?;
        for (i, p) in protocols.iter().enumerate() {
            let x = parse_opt(rec.get(2 * i).unwrap_or(""))?;
            let f = parse_opt(rec.get(2 * i + 1).unwrap_or(""))?;
            if let (Some(x), Some(f)) = (x, f) {
                series.get_mut(p).expect("series per header").push((x, f));
            }
        }
    }
    Ok(RelativeCdf {
        baseline,
        metric,
        series,
        dropped_groups: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig(122.0), "122");
        assert_eq!(format_sig(1.0 / 3.0), "0.333333");
        assert_eq!(format_sig(187.123456), "187.123");
        assert_eq!(format_sig(-0.05), "-0.05");
        assert_eq!(format_sig(12345678.0), "1.23457e7");
        assert_eq!(format_sig(0.0), "0");
    }

    #[test]
    fn empty_export_creates_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let table = MedianTable {
            metric: Metric::Total,
            dimensions: vec![],
            protocols: vec![],
            rows: vec![],
        };
        assert!(matches!(
            write_table_csv(&table, &path),
            Err(AnalysisError::DataEmpty)
        ));
        let cdf = RelativeCdf {
            baseline: ProtocolKind::DoUdp,
            metric: Metric::Total,
            series: BTreeMap::new(),
            dropped_groups: 0,
        };
        assert!(matches!(
            write_cdf_csv(&cdf, &path),
            Err(AnalysisError::DataEmpty)
        ));
        assert!(!path.exists());
    }

    #[test]
    fn cdf_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cdf.csv");
        let mut series = BTreeMap::new();
        series.insert(ProtocolKind::DoQ, vec![(0.05, 0.5), (0.15, 1.0)]);
        series.insert(ProtocolKind::DoH, vec![(1.0 / 3.0, 1.0)]);
        let cdf = RelativeCdf {
            baseline: ProtocolKind::DoUdp,
            metric: Metric::HandshakeMs,
            series,
            dropped_groups: 0,
        };
        write_cdf_csv(&cdf, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("doh_x,doh_F,doq_x,doq_F\n"), "{text}");
        let back = read_cdf_csv(&path, ProtocolKind::DoUdp, Metric::HandshakeMs).unwrap();
        for (p, s) in &cdf.series {
            for (a, b) in s.iter().zip(&back.series[p]) {
                assert!((a.0 - b.0).abs() <= 1e-6 * a.0.abs().max(1.0));
                assert_eq!(a.1, b.1);
            }
        }
    }
}
