//! Median tables, a relative-difference CDF and CSV export over records.

use chrono::Utc;
use doxbench::analysis::{self, AnalysisOptions, Dimension, Metric};
use doxbench::orchestrator::MeasurementRecord;
use doxbench::ProtocolKind;

fn record(
    resolver: &str,
    p: ProtocolKind,
    handshake: Option<f64>,
    resolve: f64,
) -> MeasurementRecord {
    let mut r: MeasurementRecord = serde_json::from_value(serde_json::json!({
        "timestamp_utc": Utc::now(),
        "round_start_utc": Utc::now(),
        "campaign_round": 0,
        "vantage_label": "eu",
        "resolver": resolver,
        "protocol": p,
        "qname": "google.com",
        "qtype": 1,
        "warm": false,
    }))
    .expect("minimal record");
    r.handshake_ms = handshake;
    r.resolve_ms = Some(resolve);
    r
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut records = Vec::new();
    for (i, resolver) in ["192.0.2.1", "192.0.2.2", "192.0.2.3"].iter().enumerate() {
        let rtt = 20.0 * (i + 1) as f64;
        records.push(record(resolver, ProtocolKind::DoUdp, None, rtt));
        records.push(record(resolver, ProtocolKind::DoQ, Some(rtt), rtt));
        records.push(record(
            resolver,
            ProtocolKind::DoH,
            Some(2.0 * rtt),
            rtt * 1.1,
        ));
    }

    let dims = [Dimension::Vantage, Dimension::Resolver];
    let table = analysis::median_table(&records, &dims, Metric::Total, AnalysisOptions::default());
    for row in &table.rows {
        let cells: Vec<String> = row
            .cells
            .iter()
            .map(|(p, c)| {
                format!(
                    "{p}={}",
                    c.median.map(analysis::format_sig).unwrap_or_default()
                )
            })
            .collect();
        println!("{} {}", row.key.join("/"), cells.join(" "));
    }

    let cdf = analysis::relative_cdf(
        &records,
        ProtocolKind::DoUdp,
        Metric::Total,
        &dims,
        AnalysisOptions::default(),
    );
    for (p, points) in &cdf.series {
        println!("{p}: {points:?}");
    }

    let dir = tempfile::tempdir()?;
    analysis::write_table_csv(&table, dir.path().join("total.csv"))?;
    analysis::write_cdf_csv(&cdf, dir.path().join("cdf.csv"))?;
    print!("{}", std::fs::read_to_string(dir.path().join("cdf.csv"))?);
    Ok(())
}
