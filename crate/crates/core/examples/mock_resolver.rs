//! Start the mock resolver and resolve one name over every protocol.

use std::time::Duration;

use doxbench::codec::DnsQuery;
use doxbench::mock::{self, MockConfig};
use doxbench::session::SessionCache;
use doxbench::transport::{Client, ClientOptions, Target, Verification};
use doxbench::ProtocolKind;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mock = mock::serve(MockConfig::default().with_delay_ms(5)).await?;
    let client = Client::new(
        ClientOptions {
            verification: Verification::Roots(vec![mock.ca_cert_der()]),
            timeout: Duration::from_secs(5),
            ..ClientOptions::default()
        },
        SessionCache::new(),
    )?;
    let query = DnsQuery::a("google.com");
    for p in ProtocolKind::ALL {
        let target = Target::new(mock.addr(p).unwrap());
        let out = client.query(p, &target, &query).await?;
        println!(
            "{p:<6} {:<22} rcode {} answers {} resolve {:.1} ms",
            target.addr.to_string(),
            out.response.rcode,
            out.response.answers.len(),
            out.timing.resolve_ms
        );
    }
    println!("{:?}", mock.counters());
    Ok(())
}
