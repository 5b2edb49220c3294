//! Build a query, frame it for a stream transport and decode an answer.

use doxbench::codec::{self, DnsQuery};
use doxbench::mock::Zone;
use std::net::Ipv4Addr;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let query = DnsQuery::a("example.com").with_id(0x1234);
    let wire = codec::encode_query(&query)?;
    println!(
        "query: {} bytes, id {:#06x}",
        wire.len(),
        codec::message_id(&wire).unwrap()
    );

    let framed = codec::frame(&wire)?;
    let (payload, rest) = codec::unframe(&framed)?;
    assert_eq!(payload, wire.as_slice());
    assert!(rest.is_empty());

    let zone = Zone::new().with("example.com", Ipv4Addr::new(93, 184, 216, 34), 600);
    let answer = zone.answer(&wire).expect("well-formed query");
    let summary = codec::decode_response(&answer)?;
    println!("{summary:?}");
    Ok(())
}
