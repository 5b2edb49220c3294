//! Instrumented DNS clients for DoUDP, DoTCP, DoT, DoH and DoQ.
//!
//! Every single-query measurement opens a fresh connection, times the
//! handshake and the DNS exchange separately, and attributes bytes to the
//! handshake or DNS phase by the moment the first DNS byte is written.
//! Reusable state (tickets, tokens, QUIC version, ALPN) lives in the
//! [`SessionCache`] held by the [`Client`].

mod counting;
mod doh;
pub(crate) mod doq;
mod quic_socket;
mod stream;
mod tcp;
pub mod tls;
mod udp;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use tokio::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError, DnsQuery, DnsResponseSummary};
use crate::expectation::TlsVersion;
use crate::protocol::ProtocolKind;
use crate::session::{SessionCache, SessionKey};

pub use counting::{CountingStream, IoCounters, IoSnapshot};
pub use doh::{DohMethod, DNS_MESSAGE_MEDIA_TYPE};
pub use doq::{doq_uses_length_prefix, DOQ_ALPNS, QUIC_V1, SUPPORTED_QUIC_VERSIONS};
pub use stream::OpenConnection;
pub use tls::Verification;
pub use udp::RetransmitPolicy;

/// Nominal header sizes used by [`AccountingMode::EstimatedIpPayload`].
pub const UDP_HEADER_BYTES: u64 = 8;
pub const TCP_HEADER_BYTES: u64 = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("timed out waiting for a response")]
    Timeout,
    #[error("connect timed out")]
    ConnectTimeout,
    #[error("connection refused")]
    Refused,
    #[error("connection reset by peer")]
    Reset,
    #[error("network unreachable: {0}")]
    Unreachable(String),
    #[error("TLS failure: {0}")]
    Tls(String),
    #[error("no offered ALPN was accepted")]
    AlpnMismatch,
    #[error("HTTP status {0}")]
    HttpStatus(u16),
    #[error("HTTP/2 failure: {0}")]
    Http(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("server requires a different QUIC version")]
    VersionNegotiation,
    #[error("QUIC failure: {0}")]
    Quic(String),
    #[error("warm-up leg failed: {0}")]
    WarmFailed(String),
    #[error("invalid query: {0}")]
    InvalidQuery(#[from] CodecError),
    #[error("{0} is blocklisted")]
    Blocklisted(std::net::IpAddr),
    #[error("I/O error: {0}")]
    Io(String),
}

impl TransportError {
    /// Stable short code written into measurement records.
    pub fn code(&self) -> &'static str {
        match self {
            TransportError::Timeout => "timeout",
            TransportError::ConnectTimeout => "connect-timeout",
            TransportError::Refused => "connection-refused",
            TransportError::Reset => "reset",
            TransportError::Unreachable(_) => "network-unreachable",
            TransportError::Tls(_) => "tls-failure",
            TransportError::AlpnMismatch => "alpn-mismatch",
            TransportError::HttpStatus(_) => "http-status-error",
            TransportError::Http(_) => "http-error",
            TransportError::Malformed(_) => "malformed-response",
            TransportError::VersionNegotiation => "version-negotiation-required",
            TransportError::Quic(_) => "quic-failure",
            TransportError::WarmFailed(_) => "warm-failed",
            TransportError::InvalidQuery(_) => "invalid-query",
            TransportError::Blocklisted(_) => "blocklisted",
            TransportError::Io(_) => "io-error",
        }
    }

    pub(crate) fn from_io(e: std::io::Error) -> Self {
        use std::io::ErrorKind::*;
        match e.kind() {
            ConnectionRefused => TransportError::Refused,
            ConnectionReset | ConnectionAborted | BrokenPipe => TransportError::Reset,
            TimedOut => TransportError::Timeout,
            NetworkUnreachable | HostUnreachable | AddrNotAvailable => {
                TransportError::Unreachable(e.to_string())
            }
            UnexpectedEof => TransportError::Reset,
            _ => TransportError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        TransportError::from_io(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccountingMode {
    /// Sum of transport payloads written and read.
    #[default]
    TransportPayload,
    /// Transport payload plus nominal UDP/TCP header bytes per PDU.
    EstimatedIpPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingBreakdown {
    /// Absent for DoUDP, which has no handshake.
    pub handshake_ms: Option<f64>,
    pub resolve_ms: f64,
    /// Wall time of the whole leg, connection setup included.
    pub e2e_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ByteAccounting {
    pub hs_c2r_bytes: u64,
    pub hs_r2c_bytes: u64,
    pub query_bytes: u64,
    pub response_bytes: u64,
    pub accounting_mode: AccountingMode,
}

impl ByteAccounting {
    pub fn handshake_total(&self) -> u64 {
        self.hs_c2r_bytes + self.hs_r2c_bytes
    }

    pub fn dns_total(&self) -> u64 {
        self.query_bytes + self.response_bytes
    }

    pub fn total(&self) -> u64 {
        self.handshake_total() + self.dns_total()
    }

    /// Splits stream counters at the handshake boundary. TCP-based protocols
    /// add the SYN, SYN-ACK and ACK segments in estimated mode.
    pub(crate) fn from_stream(
        mode: AccountingMode,
        handshake: &IoSnapshot,
        end: &IoSnapshot,
        tcp_handshake_segments: bool,
    ) -> Self {
        let dns = end.since(handshake);
        let mut acc = ByteAccounting {
            hs_c2r_bytes: handshake.tx_bytes,
            hs_r2c_bytes: handshake.rx_bytes,
            query_bytes: dns.tx_bytes,
            response_bytes: dns.rx_bytes,
            accounting_mode: mode,
        };
        if mode == AccountingMode::EstimatedIpPayload {
            let (syn_c2r, syn_r2c) = if tcp_handshake_segments {
                (2, 1)
            } else {
                (0, 0)
            };
            acc.hs_c2r_bytes += TCP_HEADER_BYTES * (handshake.tx_pdus + syn_c2r);
            acc.hs_r2c_bytes += TCP_HEADER_BYTES * (handshake.rx_pdus + syn_r2c);
            acc.query_bytes += TCP_HEADER_BYTES * dns.tx_pdus;
            acc.response_bytes += TCP_HEADER_BYTES * dns.rx_pdus;
        }
        acc
    }

    pub(crate) fn from_datagrams(
        mode: AccountingMode,
        handshake: &IoSnapshot,
        end: &IoSnapshot,
    ) -> Self {
        let dns = end.since(handshake);
        let mut acc = ByteAccounting {
            hs_c2r_bytes: handshake.tx_bytes,
            hs_r2c_bytes: handshake.rx_bytes,
            query_bytes: dns.tx_bytes,
            response_bytes: dns.rx_bytes,
            accounting_mode: mode,
        };
        if mode == AccountingMode::EstimatedIpPayload {
            acc.hs_c2r_bytes += UDP_HEADER_BYTES * handshake.tx_pdus;
            acc.hs_r2c_bytes += UDP_HEADER_BYTES * handshake.rx_pdus;
            acc.query_bytes += UDP_HEADER_BYTES * dns.tx_pdus;
            acc.response_bytes += UDP_HEADER_BYTES * dns.rx_pdus;
        }
        acc
    }
}

/// Result of one timed DNS exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub protocol: ProtocolKind,
    pub timing: TimingBreakdown,
    pub bytes: ByteAccounting,
    pub retransmissions: u32,
    pub tls_version: Option<String>,
    pub quic_version: Option<u32>,
    pub doq_alpn: Option<String>,
    pub resumed: bool,
    pub zero_rtt_used: bool,
    pub response: DnsResponseSummary,
    /// Free-form annotations such as `version-negotiation` or `resumption-unavailable`.
    pub notes: Vec<String>,
}

/// Where to send queries for one protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    pub addr: SocketAddr,
    /// Name used for SNI and certificate checks; defaults to the IP address.
    pub tls_name: Option<String>,
    /// DoH URI path; defaults to the client's configured path.
    pub doh_path: Option<String>,
}

impl Target {
    pub fn new(addr: SocketAddr) -> Self {
        Self {
            addr,
            tls_name: None,
            doh_path: None,
        }
    }

    pub fn with_tls_name(mut self, name: impl Into<String>) -> Self {
        self.tls_name = Some(name.into());
        self
    }

    pub fn with_doh_path(mut self, path: impl Into<String>) -> Self {
        self.doh_path = Some(path.into());
        self
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// Budget for one leg (connect, handshake and response).
    pub timeout: Duration,
    pub verification: Verification,
    /// TLS versions offered on DoT and DoH. QUIC always uses 1.3.
    pub tls_versions: Vec<TlsVersion>,
    pub doh_path: String,
    pub doh_method: DohMethod,
    /// ALPN preference list for DoQ.
    pub doq_alpns: Vec<String>,
    /// QUIC versions this client is willing to use, in preference order.
    pub quic_versions: Vec<u32>,
    pub accounting: AccountingMode,
    pub enable_0rtt: bool,
    pub udp_retransmit: RetransmitPolicy,
    /// Extra round-trip charged to every TCP connect. On loopback the kernel
    /// completes SYN/SYN-ACK instantly, beyond the reach of any user-space
    /// delay; this restores the round-trip a real path would add.
    pub emulated_connect_rtt: Option<Duration>,
    /// How long a warm-up leg waits after its response for session tickets
    /// and tokens that trail the answer.
    pub harvest_wait: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(10),
            verification: Verification::WebPki,
            tls_versions: vec![TlsVersion::Tls13, TlsVersion::Tls12],
            doh_path: "/dns-query".to_string(),
            doh_method: DohMethod::Post,
            doq_alpns: DOQ_ALPNS.iter().map(|s| s.to_string()).collect(),
            quic_versions: SUPPORTED_QUIC_VERSIONS.to_vec(),
            accounting: AccountingMode::TransportPayload,
            enable_0rtt: true,
            udp_retransmit: RetransmitPolicy::none(),
            emulated_connect_rtt: None,
            harvest_wait: Duration::from_millis(400),
        }
    }
}

impl ClientOptions {
    pub fn insecure(mut self) -> Self {
        self.verification = Verification::Insecure;
        self
    }
}

/// Outcome of a cache-warming leg followed by the measured leg.
#[derive(Debug, Clone)]
pub struct WarmMeasurePair {
    pub warm: Result<QueryOutcome, TransportError>,
    pub actual: Result<QueryOutcome, TransportError>,
}

/// Measurement client. Cheap to clone; clones share TLS contexts and the session cache.
#[derive(Clone)]
pub struct Client {
    inner: Arc<ClientInner>,
}

struct ClientInner {
    opts: ClientOptions,
    sessions: SessionCache,
    tls: tls::TlsContext,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client")
            .field("opts", &self.inner.opts)
            .finish_non_exhaustive()
    }
}

impl Client {
    pub fn new(opts: ClientOptions, sessions: SessionCache) -> Result<Self, TransportError> {
        let tls = tls::TlsContext::new(&opts)?;
        Ok(Self {
            inner: Arc::new(ClientInner {
                opts,
                sessions,
                tls,
            }),
        })
    }

    pub fn options(&self) -> &ClientOptions {
        &self.inner.opts
    }

    pub fn sessions(&self) -> &SessionCache {
        &self.inner.sessions
    }

    pub(crate) fn tls(&self) -> &tls::TlsContext {
        &self.inner.tls
    }

    /// One fresh-connection measurement over `protocol`.
    pub async fn query(
        &self,
        protocol: ProtocolKind,
        target: &Target,
        query: &DnsQuery,
    ) -> Result<QueryOutcome, TransportError> {
        self.measure(protocol, target, query, false).await
    }

    pub async fn doudp_query(
        &self,
        target: &Target,
        query: &DnsQuery,
        policy: RetransmitPolicy,
    ) -> Result<QueryOutcome, TransportError> {
        let wire = codec::encode_query(query)?;
        udp::measure(self, target, &wire, policy).await
    }

    pub async fn dotcp_query(
        &self,
        target: &Target,
        query: &DnsQuery,
    ) -> Result<QueryOutcome, TransportError> {
        self.query(ProtocolKind::DoTcp, target, query).await
    }

    pub async fn dot_query(
        &self,
        target: &Target,
        query: &DnsQuery,
    ) -> Result<QueryOutcome, TransportError> {
        self.query(ProtocolKind::DoT, target, query).await
    }

    pub async fn doh_query(
        &self,
        target: &Target,
        query: &DnsQuery,
    ) -> Result<QueryOutcome, TransportError> {
        self.query(ProtocolKind::DoH, target, query).await
    }

    pub async fn doq_query(
        &self,
        target: &Target,
        query: &DnsQuery,
    ) -> Result<QueryOutcome, TransportError> {
        self.query(ProtocolKind::DoQ, target, query).await
    }

    async fn measure(
        &self,
        protocol: ProtocolKind,
        target: &Target,
        query: &DnsQuery,
        harvest: bool,
    ) -> Result<QueryOutcome, TransportError> {
        let wire = codec::encode_query(query)?;
        match protocol {
            ProtocolKind::DoUdp => {
                udp::measure(self, target, &wire, self.inner.opts.udp_retransmit).await
            }
            ProtocolKind::DoTcp | ProtocolKind::DoT => {
                tcp::measure(self, protocol, target, &wire, harvest).await
            }
            ProtocolKind::DoH => doh::measure(self, target, &wire, harvest).await,
            ProtocolKind::DoQ => doq::measure(self, target, &wire, harvest).await,
        }
    }

    /// Runs a cache-warming query on a fresh session, harvests every piece of
    /// reusable state, closes that connection, then measures the same query
    /// on a new connection presenting the harvested state.
    pub async fn warm_then_measure(
        &self,
        protocol: ProtocolKind,
        target: &Target,
        query: &DnsQuery,
    ) -> WarmMeasurePair {
        let key = SessionKey::new(target.addr, protocol);
        self.inner.sessions.clear(&key);
        let warm = self.measure(protocol, target, query, true).await;
        let actual = match &warm {
            Err(e) => Err(TransportError::WarmFailed(e.to_string())),
            Ok(_) => {
                let had_ticket = self.inner.sessions.has_valid_ticket(&key);
                let mut actual = self.measure(protocol, target, query, false).await;
                if let Ok(out) = &mut actual {
                    if protocol.is_encrypted() && !had_ticket {
                        out.notes.push("resumption-unavailable".to_string());
                    }
                }
                actual
            }
        };
        WarmMeasurePair { warm, actual }
    }

    /// Opens a reusable connection for multi-query workloads.
    pub async fn open(
        &self,
        protocol: ProtocolKind,
        target: &Target,
    ) -> Result<OpenConnection, TransportError> {
        stream::open(self, protocol, target).await
    }

    /// Waits until a ticket (and, for DoQ, a token) is cached for `key`, or the harvest budget runs out.
    pub(crate) async fn await_harvest(&self, key: &SessionKey, need_token: bool) {
        let deadline = Instant::now() + self.inner.opts.harvest_wait;
        loop {
            let have_ticket = self.inner.sessions.has_valid_ticket(key);
            let have_token = !need_token || self.inner.sessions.has_token(key);
            if (have_ticket && have_token) || Instant::now() >= deadline {
                return;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }

    pub(crate) async fn emulate_connect_rtt(&self) {
        if let Some(rtt) = self.inner.opts.emulated_connect_rtt {
            tokio::time::sleep(rtt).await;
        }
    }
}

pub(crate) fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Checks that `resp` answers the query with ID `id`.
pub(crate) fn validate_response(
    resp: &[u8],
    id: u16,
) -> Result<DnsResponseSummary, TransportError> {
    let summary =
        codec::decode_response(resp).map_err(|e| TransportError::Malformed(e.to_string()))?;
    if !summary.is_response {
        return Err(TransportError::Malformed("QR bit clear".into()));
    }
    if summary.id != id {
        return Err(TransportError::Malformed(format!(
            "id mismatch: sent {id:#06x}, got {:#06x}",
            summary.id
        )));
    }
    Ok(summary)
}
