//! Stateless DoQ discovery: a version-0 probe per port, then a full
//! five-protocol verification of whatever answered.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::time::Duration;

use doxbench::codec::DnsQuery;
use doxbench::discovery::{self, Blocklist, SweepConfig};
use doxbench::mock::{self, MockConfig};
use doxbench::session::SessionCache;
use doxbench::transport::{Client, ClientOptions, Verification};
use doxbench::ProtocolKind;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mock = mock::serve(MockConfig::default()).await?;
    let doq = mock.addr(ProtocolKind::DoQ).unwrap();
    let closed = SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), 9);

    for addr in [doq, closed] {
        let answered = discovery::probe_version_negotiation(addr, Duration::from_millis(500)).await;
        println!(
            "{addr}: {}",
            if answered { "speaks QUIC" } else { "silent" }
        );
    }

    let sweep = discovery::sweep(
        &[doq, closed],
        &SweepConfig {
            linger: Duration::from_millis(300),
            ..SweepConfig::default()
        },
    )
    .await?;
    for r in &sweep {
        println!(
            "sweep {} responded={} versions={:x?}",
            r.addr, r.responded, r.versions
        );
    }

    let client = Client::new(
        ClientOptions {
            verification: Verification::Roots(vec![mock.ca_cert_der()]),
            ..ClientOptions::default()
        },
        SessionCache::new(),
    )?;
    let verified = discovery::verify_dox(
        &client,
        &mock.resolver_target(),
        &DnsQuery::a("google.com"),
        &Blocklist::default(),
    )
    .await;
    println!(
        "support {:?} dox={} alpn={:?}",
        verified.support,
        verified.is_dox(),
        verified.doq_alpn
    );
    Ok(())
}
