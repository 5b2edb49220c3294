//! DoQ session resumption and 0-RTT: the warm leg harvests a ticket and an
//! address-validation token, the measured leg presents both.

use std::time::Duration;

use doxbench::codec::DnsQuery;
use doxbench::mock::{self, MockConfig};
use doxbench::session::{SessionCache, SessionKey};
use doxbench::transport::{Client, ClientOptions, Target, Verification};
use doxbench::ProtocolKind;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mock = mock::serve(MockConfig {
        zero_rtt_enabled: true,
        ..MockConfig::default().with_delay_ms(25)
    })
    .await?;
    let client = Client::new(
        ClientOptions {
            verification: Verification::Roots(vec![mock.ca_cert_der()]),
            harvest_wait: Duration::from_millis(300),
            ..ClientOptions::default()
        },
        SessionCache::new(),
    )?;
    let target = Target::new(mock.addr(ProtocolKind::DoQ).unwrap());
    let pair = client
        .warm_then_measure(ProtocolKind::DoQ, &target, &DnsQuery::a("google.com"))
        .await;

    let key = SessionKey::new(target.addr, ProtocolKind::DoQ);
    println!("ticket cached: {:?}", client.sessions().ticket_info(&key));
    println!("token cached: {}", client.sessions().has_token(&key));
    let warm = pair.warm?;
    let actual = pair.actual?;
    println!(
        "warm   hs {:>6.1} ms  resumed {}",
        warm.timing.handshake_ms.unwrap_or(0.0),
        warm.resumed
    );
    println!(
        "actual hs {:>6.1} ms  resumed {}  0-rtt {}",
        actual.timing.handshake_ms.unwrap_or(0.0),
        actual.resumed,
        actual.zero_rtt_used
    );
    println!("{:?}", mock.counters());
    Ok(())
}
