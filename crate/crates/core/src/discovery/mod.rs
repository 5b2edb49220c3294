//! Resolver discovery: stateless DoQ probing, ALPN verification and
//! per-protocol capability checks.

mod blocklist;
mod probe;
mod ratelimit;

use std::collections::{BTreeMap, HashMap};
use std::net::{IpAddr, SocketAddr};
use std::time::Duration;

use chrono::{DateTime, Utc};
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use tokio::net::UdpSocket;

pub use blocklist::{Blocklist, BlocklistError};
pub use probe::{
    build_probe, parse_version_negotiation, probe_detailed, probe_version_negotiation,
    server_versions, Probe, ProbeOutcome, MIN_INITIAL_DATAGRAM, PROBE_CID_LEN,
};
pub use ratelimit::TokenBucket;

use crate::codec::DnsQuery;
use crate::protocol::{ProtocolKind, ProtocolSet};
use crate::transport::doq::{self, ConnectParams};
use crate::transport::{Client, Target, TransportError, QUIC_V1};

/// UDP ports probed for DoQ.
pub const DOQ_SCAN_PORTS: [u16; 3] = [784, 853, 8853];

/// A candidate or verified resolver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolverTarget {
    pub ip: IpAddr,
    pub ports: BTreeMap<ProtocolKind, u16>,
    /// Protocols with a verified exchange.
    #[serde(default)]
    pub support: ProtocolSet,
    #[serde(default)]
    pub doq_alpn: Option<String>,
    #[serde(default)]
    pub quic_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tls_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doh_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discovered_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified_at: Option<DateTime<Utc>>,
    /// Last failure per protocol, by error code.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<ProtocolKind, String>,
}

impl ResolverTarget {
    /// A target with every protocol on its default port.
    pub fn new(ip: IpAddr) -> Self {
        Self::with_ports(ip, ProtocolKind::ALL.iter().map(|p| (*p, p.default_port())))
    }

    pub fn with_ports(ip: IpAddr, ports: impl IntoIterator<Item = (ProtocolKind, u16)>) -> Self {
        Self {
            ip,
            ports: ports.into_iter().collect(),
            support: ProtocolSet::empty(),
            doq_alpn: None,
            quic_version: None,
            tls_name: None,
            doh_path: None,
            discovered_at: None,
            verified_at: None,
            errors: BTreeMap::new(),
        }
    }

    pub fn socket_addr(&self, p: ProtocolKind) -> Option<SocketAddr> {
        self.ports
            .get(&p)
            .map(|port| SocketAddr::new(self.ip, *port))
    }

    pub fn target(&self, p: ProtocolKind) -> Option<Target> {
        let mut t = Target::new(self.socket_addr(p)?);
        t.tls_name = self.tls_name.clone();
        t.doh_path = self.doh_path.clone();
        Some(t)
    }

    /// Verified on all five protocols.
    pub fn is_dox(&self) -> bool {
        self.support.is_full()
    }
}

/// Result of one probe in a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepResult {
    pub addr: SocketAddr,
    pub blocked: bool,
    pub responded: bool,
    pub versions: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probed_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub rate_per_sec: f64,
    /// How long to keep listening after the last probe left.
    pub linger: Duration,
    pub blocklist: Blocklist,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rate_per_sec: 1000.0,
            linger: Duration::from_secs(2),
            blocklist: Blocklist::default(),
        }
    }
}

/// Probes every address once from a single shared socket, paced by a token
/// bucket, while a collector matches replies by source address and echoed IDs.
pub async fn sweep(targets: &[SocketAddr], cfg: &SweepConfig) -> std::io::Result<Vec<SweepResult>> {
    let v4 = UdpSocket::bind("0.0.0.0:0").await?;
    let v6 = if targets.iter().any(|a| a.is_ipv6()) {
        Some(UdpSocket::bind("[::]:0").await?)
    } else {
        None
    };
    let mut results: Vec<SweepResult> = targets
        .iter()
        .map(|a| SweepResult {
            addr: *a,
            blocked: cfg.blocklist.contains(a.ip()),
            responded: false,
            versions: Vec::new(),
            probed_at: None,
        })
        .collect();
    let probes: std::sync::Mutex<HashMap<SocketAddr, Probe>> = Default::default();
    let replies: std::sync::Mutex<HashMap<SocketAddr, Vec<u32>>> = Default::default();
    let (done_tx, done_rx) = tokio::sync::watch::channel(false);

    let sender = async {
        let mut bucket = TokenBucket::new(cfg.rate_per_sec, 1);
        let mut rng = rand::thread_rng();
        for r in results.iter_mut().filter(|r| !r.blocked) {
            let sock = match (r.addr.is_ipv6(), &v6) {
                (true, Some(s)) => s,
                _ => &v4,
            };
            bucket.acquire().await;
            let probe = build_probe(&mut rng, MIN_INITIAL_DATAGRAM);
            probes.lock().unwrap().insert(r.addr, probe.clone());
            r.probed_at = Some(Utc::now());
            if let Err(e) = sock.send_to(&probe.bytes, r.addr).await {
                tracing::debug!(addr = %r.addr, error = %e, "probe send failed");
            }
        }
        tokio::time::sleep(cfg.linger).await;
        let _ = done_tx.send(true);
    };

    let collect6 = async {
        if let Some(s) = &v6 {
            collect(s, done_rx.clone(), &probes, &replies).await;
        }
    };
    tokio::join!(
        sender,
        collect(&v4, done_rx.clone(), &probes, &replies),
        collect6
    );

    let replies = replies.into_inner().unwrap();
    for r in &mut results {
        if let Some(v) = replies.get(&r.addr) {
            r.responded = true;
            r.versions = v.clone();
        }
    }
    Ok(results)
}

async fn collect(
    sock: &UdpSocket,
    mut done: tokio::sync::watch::Receiver<bool>,
    probes: &std::sync::Mutex<HashMap<SocketAddr, Probe>>,
    replies: &std::sync::Mutex<HashMap<SocketAddr, Vec<u32>>>,
) {
    let mut buf = vec![0u8; 2048];
    loop {
        tokio::select! {
            _ = done.changed() => break,
            r = sock.recv_from(&mut buf) => {
                let Ok((n, from)) = r else { continue };
                let probe = probes.lock().unwrap().get(&from).cloned();
                if let Some(versions) = probe.and_then(|p| parse_version_negotiation(&buf[..n], &p)) {
                    replies.lock().unwrap().insert(from, versions);
                }
            }
        }
    }
}

/// Outcome of a DoQ handshake check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoqVerification {
    pub alpn: String,
    pub quic_version: u32,
}

/// Completes a fresh QUIC handshake offering `alpns` and reports what was negotiated.
pub async fn verify_doq(
    client: &Client,
    addr: SocketAddr,
    alpns: &[String],
) -> Result<DoqVerification, TransportError> {
    let target = Target::new(addr);
    let attempt = |version| {
        let target = target.clone();
        async move {
            let session = doq::connect_with(
                client,
                &target,
                ConnectParams {
                    alpns,
                    version,
                    use_session: false,
                },
            )
            .await?;
            let v = DoqVerification {
                alpn: session.alpn.clone(),
                quic_version: session.version,
            };
            session.close().await;
            Ok::<_, TransportError>(v)
        }
    };
    let fut = async {
        match attempt(QUIC_V1).await {
            Err(TransportError::VersionNegotiation) => {
                let offered = server_versions(addr, client.options().timeout).await?;
                let chosen = client
                    .options()
                    .quic_versions
                    .iter()
                    .copied()
                    .find(|v| offered.contains(v))
                    .ok_or(TransportError::VersionNegotiation)?;
                attempt(chosen).await
            }
            other => other,
        }
    };
    tokio::time::timeout(client.options().timeout, fut)
        .await
        .unwrap_or(Err(TransportError::Timeout))
}

/// Sends one test query per configured protocol and sets the support bit
/// for every valid answer. Failures are recorded, never fatal.
pub async fn verify_dox(
    client: &Client,
    target: &ResolverTarget,
    query: &DnsQuery,
    blocklist: &Blocklist,
) -> ResolverTarget {
    let mut out = target.clone();
    out.support = ProtocolSet::empty();
    out.errors.clear();
    if blocklist.contains(target.ip) {
        for p in target.ports.keys() {
            out.errors.insert(
                *p,
                TransportError::Blocklisted(target.ip).code().to_string(),
            );
        }
        return out;
    }
    for p in ProtocolKind::ALL {
        let Some(t) = target.target(p) else { continue };
        match client.query(p, &t, query).await {
            Ok(outcome) => {
                out.support.insert(p);
                if p == ProtocolKind::DoQ {
                    out.doq_alpn = outcome.doq_alpn;
                    out.quic_version = outcome.quic_version;
                }
            }
            Err(e) => {
                out.errors.insert(p, e.code().to_string());
            }
        }
    }
    out.verified_at = Some(Utc::now());
    out
}

/// Verifies many targets with bounded parallelism, preserving input order.
pub async fn verify_all(
    client: &Client,
    targets: &[ResolverTarget],
    query: &DnsQuery,
    blocklist: &Blocklist,
    parallelism: usize,
) -> Vec<ResolverTarget> {
    futures::stream::iter(targets.iter())
        .map(|t| verify_dox(client, t, query, blocklist))
        .buffered(parallelism.max(1))
        .collect()
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolver_target_json_shape() {
        let mut t = ResolverTarget::new("192.0.2.1".parse().unwrap());
        t.support.insert(ProtocolKind::DoQ);
        t.doq_alpn = Some("doq".into());
        t.quic_version = Some(1);
        let json = serde_json::to_value(&t).unwrap();
        assert_eq!(json["ports"]["doq"], 853);
        assert_eq!(json["support"], serde_json::json!(["doq"]));
        let back: ResolverTarget = serde_json::from_value(json).unwrap();
        assert_eq!(back, t);
        assert!(!back.is_dox());
    }

    #[tokio::test]
    async fn sweep_skips_blocklisted_and_handles_empty_input() {
        let cfg = SweepConfig {
            linger: Duration::from_millis(50),
            blocklist: Blocklist::parse("127.0.0.0/8").unwrap(),
            ..SweepConfig::default()
        };
        assert!(sweep(&[], &cfg).await.unwrap().is_empty());
        let res = sweep(&["127.0.0.1:9".parse().unwrap()], &cfg)
            .await
            .unwrap();
        assert!(res[0].blocked);
        assert!(!res[0].responded);
        assert!(res[0].probed_at.is_none());
    }
}
