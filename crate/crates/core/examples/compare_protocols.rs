//! Warm/measure pairs over all five protocols against a mock with a 25 ms
//! one-way delay, next to the round-trip model's prediction.

use std::time::Duration;

use doxbench::codec::DnsQuery;
use doxbench::expectation::{predict_handshake_ms, ExpectationInput};
use doxbench::mock::{self, MockConfig};
use doxbench::session::SessionCache;
use doxbench::transport::{Client, ClientOptions, Target, Verification};
use doxbench::ProtocolKind;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let one_way = Duration::from_millis(25);
    let rtt_ms = 2.0 * one_way.as_secs_f64() * 1000.0;
    let mock = mock::serve(MockConfig::default().with_delay_ms(25)).await?;
    let client = Client::new(
        ClientOptions {
            verification: Verification::Roots(vec![mock.ca_cert_der()]),
            // Loopback TCP connects complete instantly; charge the path's round-trip.
            emulated_connect_rtt: Some(one_way * 2),
            ..ClientOptions::default()
        },
        SessionCache::new(),
    )?;

    println!(
        "{:<6} {:>10} {:>10} {:>10} {:>8} {:>8}",
        "proto", "hs_ms", "model_ms", "resolve", "hs_B", "dns_B"
    );
    for p in ProtocolKind::ALL {
        let pair = client
            .warm_then_measure(
                p,
                &Target::new(mock.addr(p).unwrap()),
                &DnsQuery::a("google.com"),
            )
            .await;
        let out = pair.actual?;
        let model = predict_handshake_ms(rtt_ms, &ExpectationInput::resumed(p));
        println!(
            "{:<6} {:>10.1} {:>10.1} {:>10.1} {:>8} {:>8}",
            p.as_str(),
            out.timing.handshake_ms.unwrap_or(0.0),
            model,
            out.timing.resolve_ms,
            out.bytes.handshake_total(),
            out.bytes.dns_total(),
        );
    }
    Ok(())
}
