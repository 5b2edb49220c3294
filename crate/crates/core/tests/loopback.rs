mod common;

use std::time::Duration;

use common::{client_for, client_with, mock_with, target};
use doxbench::codec::DnsQuery;
use doxbench::mock::MockConfig;
use doxbench::transport::{DohMethod, TransportError};
use doxbench::ProtocolKind;

const GOOGLE: [u8; 4] = [142, 250, 185, 78];

#[tokio::test]
async fn every_protocol_answers_from_the_zone() {
    let mock = mock_with(MockConfig::default()).await;
    let client = client_for(&mock, Duration::ZERO);
    for p in ProtocolKind::ALL {
        let out = client
            .query(
                p,
                &target(&mock, p),
                &DnsQuery::a("google.com").with_id(0x1234),
            )
            .await
            .unwrap_or_else(|e| panic!("{p}: {e}"));
        assert_eq!(out.protocol, p);
        assert_eq!(out.response.id, 0x1234, "{p}");
        assert_eq!(out.response.answers[0].rdata, GOOGLE, "{p}");
        assert!(out.timing.e2e_ms >= out.timing.resolve_ms, "{p}");
        assert_eq!(
            out.timing.handshake_ms.is_some(),
            p != ProtocolKind::DoUdp,
            "{p}"
        );
    }
    let snap = mock.counters();
    for p in ProtocolKind::ALL {
        assert_eq!(snap.get(p).queries_answered, 1, "{p}");
    }
}

#[tokio::test]
async fn unknown_names_get_nxdomain() {
    let mock = mock_with(MockConfig::default()).await;
    let client = client_for(&mock, Duration::ZERO);
    for p in ProtocolKind::ALL {
        let out = client
            .query(p, &target(&mock, p), &DnsQuery::a("nope.example"))
            .await
            .unwrap();
        assert_eq!(out.response.rcode, doxbench::codec::RCODE_NXDOMAIN, "{p}");
        assert!(out.response.answers.is_empty());
    }
}

#[tokio::test]
async fn doh_get_and_wrong_path() {
    let mock = mock_with(MockConfig::default()).await;
    let get = client_with(&mock, Duration::ZERO, |o| o.doh_method = DohMethod::Get);
    let t = target(&mock, ProtocolKind::DoH);
    let out = get
        .query(ProtocolKind::DoH, &t, &DnsQuery::a("google.com"))
        .await
        .unwrap();
    assert_eq!(out.response.answers.len(), 1);
    let err = get
        .query(
            ProtocolKind::DoH,
            &t.clone().with_doh_path("/elsewhere"),
            &DnsQuery::a("google.com"),
        )
        .await
        .unwrap_err();
    assert_eq!(err, TransportError::HttpStatus(404));
}

#[tokio::test]
async fn untrusted_certificate_is_rejected() {
    let mock = mock_with(MockConfig::default()).await;
    let client = client_with(&mock, Duration::ZERO, |o| {
        o.verification = doxbench::transport::Verification::WebPki;
    });
    for p in [ProtocolKind::DoT, ProtocolKind::DoH, ProtocolKind::DoQ] {
        let err = client
            .query(p, &target(&mock, p), &DnsQuery::a("google.com"))
            .await
            .unwrap_err();
        assert_eq!(err.code(), "tls-failure", "{p}: {err}");
    }
}

#[tokio::test]
async fn doq_alpn_fallback_to_draft() {
    let mock = mock_with(MockConfig {
        doq_alpns: vec!["doq-i02".into()],
        ..MockConfig::default()
    })
    .await;
    let client = client_for(&mock, Duration::ZERO);
    let out = client
        .query(
            ProtocolKind::DoQ,
            &target(&mock, ProtocolKind::DoQ),
            &DnsQuery::a("google.com"),
        )
        .await
        .unwrap();
    assert_eq!(out.doq_alpn.as_deref(), Some("doq-i02"));
    assert_eq!(out.response.answers[0].rdata, GOOGLE);
}

#[tokio::test]
async fn warm_leg_enables_resumption() {
    let mock = mock_with(MockConfig::default()).await;
    let client = client_for(&mock, Duration::ZERO);
    for p in [ProtocolKind::DoT, ProtocolKind::DoH, ProtocolKind::DoQ] {
        let pair = client
            .warm_then_measure(p, &target(&mock, p), &DnsQuery::a("google.com"))
            .await;
        let warm = pair.warm.unwrap();
        let actual = pair.actual.unwrap();
        assert!(!warm.resumed, "{p}");
        assert!(actual.resumed, "{p}: {:?}", actual.notes);
        assert!(
            actual.bytes.handshake_total() < warm.bytes.handshake_total(),
            "{p}"
        );
    }
    let snap = mock.counters();
    for p in [ProtocolKind::DoT, ProtocolKind::DoH, ProtocolKind::DoQ] {
        assert_eq!(snap.get(p).resumptions, 1, "{p}");
    }
}

#[tokio::test]
async fn doq_zero_rtt_when_server_accepts() {
    let mock = mock_with(MockConfig {
        zero_rtt_enabled: true,
        ..MockConfig::default()
    })
    .await;
    let client = client_for(&mock, Duration::ZERO);
    let pair = client
        .warm_then_measure(
            ProtocolKind::DoQ,
            &target(&mock, ProtocolKind::DoQ),
            &DnsQuery::a("google.com"),
        )
        .await;
    let actual = pair.actual.unwrap();
    assert!(actual.zero_rtt_used, "{:?}", actual.notes);
    assert!(actual.resumed);
    assert_eq!(mock.counters().get(ProtocolKind::DoQ).zero_rtt_accepts, 1);
}

#[tokio::test]
async fn version_probe_gets_negotiation() {
    let mock = mock_with(MockConfig::default()).await;
    let addr = mock.addr(ProtocolKind::DoQ).unwrap();
    let versions = doxbench::discovery::server_versions(addr, Duration::from_secs(2))
        .await
        .unwrap();
    assert!(
        versions.contains(&doxbench::transport::QUIC_V1),
        "{versions:x?}"
    );
    let silent = mock.addr(ProtocolKind::DoUdp).unwrap();
    assert!(
        !doxbench::discovery::probe_version_negotiation(silent, Duration::from_millis(300)).await
    );
}

#[tokio::test]
async fn open_connection_reuses_one_handshake() {
    let mock = mock_with(MockConfig::default()).await;
    let client = client_for(&mock, Duration::ZERO);
    for p in [ProtocolKind::DoT, ProtocolKind::DoH, ProtocolKind::DoQ] {
        let conn = client.open(p, &target(&mock, p)).await.unwrap();
        let q = DnsQuery::a("google.com");
        let results = futures::future::join_all((0..8u16).map(|i| {
            let q = q.clone().with_id(i);
            let conn = &conn;
            async move { conn.query(&q).await }
        }))
        .await;
        for (i, r) in results.into_iter().enumerate() {
            assert_eq!(r.unwrap().response.id, i as u16, "{p}");
        }
        assert_eq!(conn.connections_opened(), 1);
        conn.close().await;
    }
    let snap = mock.counters();
    for p in [ProtocolKind::DoT, ProtocolKind::DoH, ProtocolKind::DoQ] {
        assert_eq!(snap.get(p).connections_accepted, 1, "{p}");
        assert_eq!(snap.get(p).queries_answered, 8, "{p}");
    }
}

#[tokio::test]
async fn udp_drop_triggers_retransmission() {
    let mock = mock_with(MockConfig {
        udp_drop: doxbench::mock::DropPolicy::FirstN(1),
        ..MockConfig::default()
    })
    .await;
    let client = client_for(&mock, Duration::ZERO);
    let policy = doxbench::transport::RetransmitPolicy {
        retry_after: Duration::from_millis(100),
        max_retries: 1,
    };
    let out = client
        .doudp_query(
            &target(&mock, ProtocolKind::DoUdp),
            &DnsQuery::a("google.com"),
            policy,
        )
        .await
        .unwrap();
    assert_eq!(out.retransmissions, 1);
    assert!(out.timing.resolve_ms >= 100.0);
    let err = client
        .doudp_query(
            &target(&mock, ProtocolKind::DoUdp),
            &DnsQuery::a("google.com"),
            doxbench::transport::RetransmitPolicy::none(),
        )
        .await;
    assert!(err.is_ok(), "second query is not dropped");
}
