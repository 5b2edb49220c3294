//! A two-round campaign against the mock, written to a JSONL file.

use std::time::Duration;

use doxbench::mock::{self, MockConfig};
use doxbench::orchestrator::{self, CampaignConfig, JsonlSink};
use doxbench::session::SessionCache;
use doxbench::transport::{Client, ClientOptions, Verification};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mock = mock::serve(MockConfig::default().with_delay_ms(5)).await?;
    let client = Client::new(
        ClientOptions {
            verification: Verification::Roots(vec![mock.ca_cert_der()]),
            ..ClientOptions::default()
        },
        SessionCache::new(),
    )?;
    let config = CampaignConfig {
        resolvers: vec![mock.resolver_target()],
        interval: Duration::from_secs(2),
        rounds: 2,
        vantage_label: "example".into(),
        ..CampaignConfig::default()
    };

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("records.jsonl");
    let mut sink = JsonlSink::open(&path)?;
    let summary = orchestrator::run_campaign(&config, &client, &mut sink).await?;
    println!("{summary:?}");

    for r in orchestrator::read_records(&path)?
        .iter()
        .filter(|r| !r.warm)
    {
        println!(
            "round {} {:<6} hs {:>6.2} ms resolve {:>6.2} ms resumed {}",
            r.campaign_round,
            r.protocol.map(|p| p.as_str()).unwrap_or("-"),
            r.handshake_ms.unwrap_or(0.0),
            r.resolve_ms.unwrap_or(0.0),
            r.resumed
        );
    }
    Ok(())
}
