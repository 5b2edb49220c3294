//! How handshake cost amortizes over a page's queries, in the analytic
//! model and against a live mock.

use std::time::Duration;

use doxbench::mock::{self, MockConfig};
use doxbench::pagesim::{self, AnalyticNetwork, Endpoint, PageProfile};
use doxbench::session::SessionCache;
use doxbench::transport::{Client, ClientOptions, Verification};
use doxbench::ProtocolKind;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let profiles: Vec<PageProfile> = [1, 5, 10, 20]
        .into_iter()
        .map(PageProfile::synthetic)
        .collect::<Result<_, _>>()?;
    let protocols = ProtocolKind::ALL;

    let model = Endpoint::Model(AnalyticNetwork::new(50.0));
    let m = pagesim::run_matrix(&profiles, &protocols, &model, 1, ProtocolKind::DoUdp).await?;
    println!("analytic model, rtt 50 ms, DoQ vs DoUDP:");
    for p in &profiles {
        let c = m.cell(&p.name, ProtocolKind::DoQ).unwrap();
        println!(
            "  k={:<3} {:+.2}",
            p.queries.len(),
            c.relative_difference.unwrap()
        );
    }

    let mock = mock::serve(MockConfig::default().with_delay_ms(25)).await?;
    let client = Client::new(
        ClientOptions {
            verification: Verification::Roots(vec![mock.ca_cert_der()]),
            emulated_connect_rtt: Some(Duration::from_millis(50)),
            harvest_wait: Duration::from_millis(300),
            ..ClientOptions::default()
        },
        SessionCache::new(),
    )?;
    let live = Endpoint::Live {
        client,
        resolver: mock.resolver_target(),
    };
    let page = PageProfile::synthetic(5)?;
    println!("live mock, 25 ms one-way, k=5:");
    for p in protocols {
        let r = pagesim::simulate_pageload(&page, p, &live).await?;
        println!(
            "  {:<6} {:>7.1} ms  connections {}  resumed {}",
            p.as_str(),
            r.total_dns_ms,
            r.connections_opened,
            r.resumed_count
        );
    }
    Ok(())
}
