//! Hermetic resolver speaking DoUDP, DoTCP, DoT, DoH and DoQ on loopback.
//!
//! Every protocol answers from the same static [`Zone`]. A configurable
//! one-way delay is applied to each flight at the server's I/O boundary, and
//! counters expose connections, datagrams, resumptions and 0-RTT accepts.

mod certs;
mod counters;
mod delay;
mod quic;
mod tcp;
mod udp;
mod zone;

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use rustls::server::{
    NoServerSessionStorage, ProducesTickets, ServerSessionMemoryCache, StoresServerSessions,
};
use rustls::ServerConfig;
use tokio::task::JoinHandle;

pub use certs::{MockPki, MOCK_SANS};
pub use counters::{CounterSnapshot, MockCounters, ProtocolCounters};
pub use delay::delayed;
pub use zone::{Zone, ZoneError};

use crate::expectation::TlsVersion;
use crate::protocol::{ProtocolKind, ProtocolSet};
use crate::session::MAX_TICKET_LIFETIME_S;

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("invalid mock configuration: {0}")]
    Config(String),
    #[error("binding {protocol} on {addr}: {source}")]
    Bind {
        protocol: ProtocolKind,
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("certificate generation failed: {0}")]
    Cert(#[from] rcgen::Error),
    #[error("TLS setup failed: {0}")]
    Tls(#[from] rustls::Error),
}

/// Which DoUDP queries the mock silently ignores.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DropPolicy {
    #[default]
    None,
    /// Ignore the first `n` datagrams received.
    FirstN(u64),
    /// Ignore each datagram with probability `p`, from a seeded generator.
    Probability { p: f64, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct MockConfig {
    pub zone: Zone,
    pub one_way_delay: Duration,
    /// Lifetime advertised in session tickets.
    pub ticket_lifetime_s: u32,
    pub tickets_enabled: bool,
    /// Accept early data on DoQ.
    pub zero_rtt_enabled: bool,
    /// Filler bytes added to the leaf certificate.
    pub cert_padding_bytes: usize,
    pub enabled_protocols: ProtocolSet,
    pub bind_ip: IpAddr,
    /// Port per protocol; 0 or absent picks an ephemeral port.
    pub ports: BTreeMap<ProtocolKind, u16>,
    /// Further UDP ports answering DoQ.
    pub extra_doq_ports: Vec<u16>,
    pub doq_alpns: Vec<String>,
    pub quic_versions: Vec<u32>,
    /// TLS versions accepted on DoT and DoH.
    pub tls_versions: Vec<TlsVersion>,
    pub doh_path: String,
    pub udp_drop: DropPolicy,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            zone: Zone::new().with("google.com", Ipv4Addr::new(142, 250, 185, 78), 300),
            one_way_delay: Duration::ZERO,
            ticket_lifetime_s: MAX_TICKET_LIFETIME_S,
            tickets_enabled: true,
            zero_rtt_enabled: false,
            cert_padding_bytes: 0,
            enabled_protocols: ProtocolSet::all(),
            bind_ip: IpAddr::V4(Ipv4Addr::LOCALHOST),
            ports: BTreeMap::new(),
            extra_doq_ports: Vec::new(),
            doq_alpns: vec!["doq".to_string()],
            quic_versions: crate::transport::SUPPORTED_QUIC_VERSIONS.to_vec(),
            tls_versions: vec![TlsVersion::Tls13, TlsVersion::Tls12],
            doh_path: "/dns-query".to_string(),
            udp_drop: DropPolicy::None,
        }
    }
}

impl MockConfig {
    pub fn with_delay_ms(mut self, ms: u64) -> Self {
        self.one_way_delay = Duration::from_millis(ms);
        self
    }

    pub fn validate(&self) -> Result<(), MockError> {
        if self.ticket_lifetime_s > MAX_TICKET_LIFETIME_S {
            return Err(MockError::Config(format!(
                "ticket lifetime {} exceeds {MAX_TICKET_LIFETIME_S} s",
                self.ticket_lifetime_s
            )));
        }
        if self.enabled_protocols.is_empty() {
            return Err(MockError::Config("no protocol enabled".into()));
        }
        if self.doq_alpns.is_empty() {
            return Err(MockError::Config("DoQ needs at least one ALPN".into()));
        }
        if self.quic_versions.is_empty() {
            return Err(MockError::Config(
                "DoQ needs at least one QUIC version".into(),
            ));
        }
        if !self.tls_versions.iter().any(|v| *v != TlsVersion::None) {
            return Err(MockError::Config("no TLS version enabled".into()));
        }
        if let DropPolicy::Probability { p, .. } = self.udp_drop {
            if !(0.0..=1.0).contains(&p) {
                return Err(MockError::Config(format!(
                    "drop probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    fn port(&self, p: ProtocolKind) -> u16 {
        self.ports.get(&p).copied().unwrap_or(0)
    }
}

/// Ticket encrypter that reports the configured lifetime and counts
/// tickets it successfully opens.
#[derive(Debug)]
struct CountingTicketer {
    inner: Arc<dyn ProducesTickets>,
    lifetime: u32,
    on_accept: Option<(Arc<MockCounters>, ProtocolKind)>,
}

impl ProducesTickets for CountingTicketer {
    fn enabled(&self) -> bool {
        true
    }

    fn lifetime(&self) -> u32 {
        self.lifetime
    }

    fn encrypt(&self, plain: &[u8]) -> Option<Vec<u8>> {
        self.inner.encrypt(plain)
    }

    fn decrypt(&self, cipher: &[u8]) -> Option<Vec<u8>> {
        let out = self.inner.decrypt(cipher);
        if out.is_some() {
            if let Some((counters, p)) = &self.on_accept {
                counters.resumption(*p);
            }
        }
        out
    }
}

/// Stateful session store, needed for early data, counting resumptions it serves.
#[derive(Debug)]
struct CountingStore {
    inner: Arc<ServerSessionMemoryCache>,
    on_accept: Option<(Arc<MockCounters>, ProtocolKind)>,
}

impl CountingStore {
    fn hit(&self, found: Option<Vec<u8>>) -> Option<Vec<u8>> {
        if found.is_some() {
            if let Some((counters, p)) = &self.on_accept {
                counters.resumption(*p);
            }
        }
        found
    }
}

impl StoresServerSessions for CountingStore {
    fn put(&self, key: Vec<u8>, value: Vec<u8>) -> bool {
        self.inner.put(key, value)
    }

    fn get(&self, key: &[u8]) -> Option<Vec<u8>> {
        self.hit(self.inner.get(key))
    }

    fn take(&self, key: &[u8]) -> Option<Vec<u8>> {
        self.hit(self.inner.take(key))
    }

    fn can_cache(&self) -> bool {
        true
    }
}

pub(crate) struct Shared {
    pub config: MockConfig,
    pub counters: Arc<MockCounters>,
}

fn tls_config(
    cfg: &MockConfig,
    pki: &MockPki,
    versions: &[&'static rustls::SupportedProtocolVersion],
    alpn: Vec<Vec<u8>>,
    early_data: bool,
    count_resumptions: Option<(Arc<MockCounters>, ProtocolKind)>,
) -> Result<ServerConfig, MockError> {
    let provider = crate::transport::tls::provider();
    let mut c = ServerConfig::builder_with_provider(provider)
        .with_protocol_versions(versions)?
        .with_no_client_auth()
        .with_single_cert(pki.chain.clone(), pki.key())?;
    c.alpn_protocols = alpn;
    c.session_storage = Arc::new(NoServerSessionStorage {});
    if !cfg.tickets_enabled {
        c.send_tls13_tickets = 0;
    } else if early_data {
        // Early data requires stateful resumption.
        c.session_storage = Arc::new(CountingStore {
            inner: ServerSessionMemoryCache::new(1024),
            on_accept: count_resumptions,
        });
        c.max_early_data_size = u32::MAX;
    } else {
        c.ticketer = Arc::new(CountingTicketer {
            inner: rustls::crypto::ring::Ticketer::new()?,
            lifetime: cfg.ticket_lifetime_s,
            on_accept: count_resumptions,
        });
    }
    Ok(c)
}

/// A running mock resolver. Dropping the handle stops it.
pub struct MockHandle {
    addrs: BTreeMap<ProtocolKind, SocketAddr>,
    extra_doq: Vec<SocketAddr>,
    counters: Arc<MockCounters>,
    pki: Arc<MockPki>,
    tasks: Vec<JoinHandle<()>>,
    quic_endpoints: Vec<quinn::Endpoint>,
}

impl std::fmt::Debug for MockHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockHandle")
            .field("addrs", &self.addrs)
            .field("extra_doq", &self.extra_doq)
            .finish_non_exhaustive()
    }
}

impl MockHandle {
    /// Listening address for `p`, if enabled.
    pub fn addr(&self, p: ProtocolKind) -> Option<SocketAddr> {
        self.addrs.get(&p).copied()
    }

    pub fn addrs(&self) -> &BTreeMap<ProtocolKind, SocketAddr> {
        &self.addrs
    }

    /// Additional DoQ listeners from [`MockConfig::extra_doq_ports`].
    pub fn extra_doq_addrs(&self) -> &[SocketAddr] {
        &self.extra_doq
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    /// DER of the CA that signed the mock's certificate.
    pub fn ca_cert_der(&self) -> Vec<u8> {
        self.pki.ca_der.to_vec()
    }

    /// Certificate bytes sent in a full handshake.
    pub fn cert_chain_bytes(&self) -> usize {
        self.pki.chain_bytes()
    }

    /// A [`crate::discovery::ResolverTarget`] pointing at every enabled listener.
    pub fn resolver_target(&self) -> crate::discovery::ResolverTarget {
        let ip = self
            .addrs
            .values()
            .next()
            .map(|a| a.ip())
            .unwrap_or(IpAddr::V4(Ipv4Addr::LOCALHOST));
        crate::discovery::ResolverTarget::with_ports(
            ip,
            self.addrs.iter().map(|(p, a)| (*p, a.port())),
        )
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for ep in &self.quic_endpoints {
            ep.close(0u32.into(), b"shutdown");
        }
        for t in self.tasks.drain(..) {
            t.abort();
        }
    }
}

impl Drop for MockHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn bind_err(protocol: ProtocolKind, addr: SocketAddr) -> impl FnOnce(std::io::Error) -> MockError {
    move |source| MockError::Bind {
        protocol,
        addr,
        source,
    }
}

/// Starts every enabled protocol and returns once all listeners are bound.
pub async fn serve(config: MockConfig) -> Result<MockHandle, MockError> {
    config.validate()?;
    let pki = Arc::new(certs::generate(config.cert_padding_bytes)?);
    let counters = Arc::new(MockCounters::default());
    let shared = Arc::new(Shared {
        config: config.clone(),
        counters: counters.clone(),
    });
    let mut addrs = BTreeMap::new();
    let mut tasks = Vec::new();
    let mut quic_endpoints = Vec::new();
    let mut extra_doq = Vec::new();
    let ip = config.bind_ip;

    let tcp_versions: Vec<&'static rustls::SupportedProtocolVersion> = config
        .tls_versions
        .iter()
        .filter_map(|v| match v {
            TlsVersion::Tls13 => Some(&rustls::version::TLS13),
            TlsVersion::Tls12 => Some(&rustls::version::TLS12),
            TlsVersion::None => None,
        })
        .collect();

    if config.enabled_protocols.contains(ProtocolKind::DoUdp) {
        let addr = SocketAddr::new(ip, config.port(ProtocolKind::DoUdp));
        let sock = tokio::net::UdpSocket::bind(addr)
            .await
            .map_err(bind_err(ProtocolKind::DoUdp, addr))?;
        addrs.insert(
            ProtocolKind::DoUdp,
            sock.local_addr()
                .map_err(bind_err(ProtocolKind::DoUdp, addr))?,
        );
        tasks.push(tokio::spawn(udp::run(shared.clone(), sock)));
    }

    for p in [ProtocolKind::DoTcp, ProtocolKind::DoT, ProtocolKind::DoH] {
        if !config.enabled_protocols.contains(p) {
            continue;
        }
        let addr = SocketAddr::new(ip, config.port(p));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(bind_err(p, addr))?;
        addrs.insert(p, listener.local_addr().map_err(bind_err(p, addr))?);
        let acceptor = match p {
            ProtocolKind::DoTcp => None,
            ProtocolKind::DoT => Some(tls_config(
                &config,
                &pki,
                &tcp_versions,
                vec![b"dot".to_vec()],
                false,
                None,
            )?),
            _ => Some(tls_config(
                &config,
                &pki,
                &tcp_versions,
                vec![b"h2".to_vec()],
                false,
                None,
            )?),
        }
        .map(|c| tokio_rustls::TlsAcceptor::from(Arc::new(c)));
        tasks.push(tokio::spawn(tcp::run(
            shared.clone(),
            p,
            listener,
            acceptor,
        )));
    }

    if config.enabled_protocols.contains(ProtocolKind::DoQ) {
        let alpn = config
            .doq_alpns
            .iter()
            .map(|a| a.as_bytes().to_vec())
            .collect();
        let tls = tls_config(
            &config,
            &pki,
            &[&rustls::version::TLS13],
            alpn,
            config.zero_rtt_enabled,
            Some((counters.clone(), ProtocolKind::DoQ)),
        )?;
        let mut ports = vec![config.port(ProtocolKind::DoQ)];
        ports.extend(config.extra_doq_ports.iter().copied());
        let endpoint = quic::endpoint(&config, tls)?;
        let internal = endpoint
            .local_addr()
            .map_err(bind_err(ProtocolKind::DoQ, SocketAddr::new(ip, 0)))?;
        tasks.push(tokio::spawn(quic::accept_loop(
            shared.clone(),
            endpoint.clone(),
        )));
        quic_endpoints.push(endpoint);
        for (i, port) in ports.into_iter().enumerate() {
            let addr = SocketAddr::new(ip, port);
            let sock = tokio::net::UdpSocket::bind(addr)
                .await
                .map_err(bind_err(ProtocolKind::DoQ, addr))?;
            let bound = sock
                .local_addr()
                .map_err(bind_err(ProtocolKind::DoQ, addr))?;
            if i == 0 {
                addrs.insert(ProtocolKind::DoQ, bound);
            } else {
                extra_doq.push(bound);
            }
            tasks.push(tokio::spawn(quic::relay(shared.clone(), sock, internal)));
        }
    }

    Ok(MockHandle {
        addrs,
        extra_doq,
        counters,
        pki,
        tasks,
        quic_endpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_overlong_ticket_lifetime() {
        let cfg = MockConfig {
            ticket_lifetime_s: MAX_TICKET_LIFETIME_S + 1,
            ..MockConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(MockError::Config(_))));
        assert!(MockConfig::default().validate().is_ok());
    }

    #[tokio::test]
    async fn fresh_server_has_zero_counters() {
        let mock = serve(MockConfig::default()).await.unwrap();
        assert!(mock.counters().is_zero());
        assert_eq!(mock.addrs().len(), 5);
    }
}
