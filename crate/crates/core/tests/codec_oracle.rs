//! Cross-checks the wire codec against hickory-proto.

use std::net::Ipv4Addr;
use std::str::FromStr;

use doxbench::codec::{self, DnsQuery};
use doxbench::mock::Zone;
use hickory_proto::op::{Message, MessageType, Query, ResponseCode};
use hickory_proto::rr::rdata::A;
use hickory_proto::rr::{Name, RData, Record, RecordType};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = String> {
    "[a-z0-9]([a-z0-9-]{0,20}[a-z0-9])?"
}

fn name() -> impl Strategy<Value = String> {
    prop::collection::vec(label(), 1..5).prop_map(|l| l.join("."))
}

#[test]
fn query_matches_hickory_parse() {
    let wire = codec::encode_query(&DnsQuery::a("www.example.com").with_id(4242)).unwrap();
    let m = Message::from_vec(&wire).unwrap();
    assert_eq!(m.id(), 4242);
    assert_eq!(m.message_type(), MessageType::Query);
    assert!(m.recursion_desired());
    assert_eq!(m.queries().len(), 1);
    assert_eq!(m.queries()[0].name().to_ascii(), "www.example.com.");
    assert_eq!(m.queries()[0].query_type(), RecordType::A);
    assert_eq!(m.max_payload(), 1232);
}

#[test]
fn query_without_edns_has_no_opt_record() {
    let wire = codec::encode_query(&DnsQuery::a("google.com").without_edns()).unwrap();
    let m = Message::from_vec(&wire).unwrap();
    assert!(m.extensions().is_none());
    assert_eq!(wire, {
        let mut h = Message::new();
        h.set_id(0).set_recursion_desired(true);
        h.add_query(Query::query(
            Name::from_ascii("google.com.").unwrap(),
            RecordType::A,
        ));
        h.to_vec().unwrap()
    });
}

#[test]
fn hickory_response_decodes() {
    let name = Name::from_ascii("cdn.example.org.").unwrap();
    let mut m = Message::new();
    m.set_id(7)
        .set_message_type(MessageType::Response)
        .set_response_code(ResponseCode::NoError);
    m.add_query(Query::query(name.clone(), RecordType::A));
    m.add_answer(Record::from_rdata(
        name.clone(),
        60,
        RData::A(A(Ipv4Addr::new(192, 0, 2, 1))),
    ));
    m.add_answer(Record::from_rdata(
        name,
        30,
        RData::A(A(Ipv4Addr::new(192, 0, 2, 2))),
    ));
    let summary = codec::decode_response(&m.to_vec().unwrap()).unwrap();
    assert_eq!(summary.id, 7);
    assert!(summary.is_response);
    assert_eq!(summary.rcode, 0);
    assert_eq!(summary.answers.len(), 2);
    assert_eq!(summary.answers[0].name, "cdn.example.org");
    assert_eq!(summary.answers[1].ttl, 30);
    assert_eq!(summary.answers[1].rdata, [192, 0, 2, 2]);
}

#[test]
fn mock_answers_parse_in_hickory() {
    let zone = Zone::new().with("a.example", Ipv4Addr::new(198, 51, 100, 9), 120);
    for (qname, rcode) in [
        ("a.example", ResponseCode::NoError),
        ("missing.example", ResponseCode::NXDomain),
    ] {
        let wire = codec::encode_query(&DnsQuery::a(qname).with_id(99)).unwrap();
        let m = Message::from_vec(&zone.answer(&wire).unwrap()).unwrap();
        assert_eq!(m.id(), 99);
        assert_eq!(m.message_type(), MessageType::Response);
        assert_eq!(m.response_code(), rcode);
        assert_eq!(
            m.queries()[0].name(),
            &Name::from_str(&format!("{qname}.")).unwrap()
        );
        if rcode == ResponseCode::NoError {
            assert_eq!(
                m.answers()[0].data(),
                Some(&RData::A(A(Ipv4Addr::new(198, 51, 100, 9))))
            );
        }
    }
}

proptest! {
    #[test]
    fn encoded_names_round_trip_through_hickory(n in name(), id: u16, edns: bool) {
        let mut q = DnsQuery::a(n.clone()).with_id(id);
        if !edns {
            q = q.without_edns();
        }
        let wire = codec::encode_query(&q).unwrap();
        let m = Message::from_vec(&wire).unwrap();
        prop_assert_eq!(m.id(), id);
        prop_assert_eq!(m.queries()[0].name().to_ascii(), format!("{n}."));
        prop_assert_eq!(m.extensions().is_some(), edns);
        let parsed = codec::parse_query(&wire).unwrap();
        prop_assert_eq!(parsed.qname, n);
    }

    #[test]
    fn hickory_names_decode(n in name(), ttl in 0u32..1_000_000, octets: [u8; 4]) {
        let owner = Name::from_ascii(format!("{n}.")).unwrap();
        let mut m = Message::new();
        m.set_id(1).set_message_type(MessageType::Response);
        m.add_query(Query::query(owner.clone(), RecordType::A));
        m.add_answer(Record::from_rdata(owner, ttl, RData::A(A(Ipv4Addr::from(octets)))));
        let s = codec::decode_response(&m.to_vec().unwrap()).unwrap();
        prop_assert_eq!(&s.answers[0].name, &n);
        prop_assert_eq!(s.answers[0].ttl, ttl);
        prop_assert_eq!(&s.answers[0].rdata[..], &octets[..]);
    }
}
