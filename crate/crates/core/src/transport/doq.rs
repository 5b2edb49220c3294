use std::net::SocketAddr;
use std::sync::Arc;

use quinn::{ConnectionError, Endpoint, ReadError, ReadToEndError, WriteError};
use tokio::time::Instant;

use super::quic_socket::{ClassifyingSocket, PhaseCounters};
use super::{
    ms, tls, validate_response, ByteAccounting, Client, IoSnapshot, QueryOutcome, Target,
    TimingBreakdown, TransportError,
};
use crate::codec;
use crate::protocol::ProtocolKind;
use crate::session::SessionKey;

pub const QUIC_V1: u32 = 0x0000_0001;

/// QUIC versions the client can speak, most preferred first.
pub const SUPPORTED_QUIC_VERSIONS: [u32; 7] = [
    QUIC_V1,
    0xff00_0022,
    0xff00_0021,
    0xff00_0020,
    0xff00_001f,
    0xff00_001e,
    0xff00_001d,
];

/// The standard DoQ identifier followed by drafts, newest to oldest.
pub const DOQ_ALPNS: [&str; 13] = [
    "doq", "doq-i11", "doq-i10", "doq-i09", "doq-i08", "doq-i07", "doq-i06", "doq-i05", "doq-i04",
    "doq-i03", "doq-i02", "doq-i01", "doq-i00",
];

const MAX_DOQ_MESSAGE: usize = 65535 + 2;

/// Whether messages on this ALPN carry the 2-byte length prefix. Drafts up
/// to doq-i02 sent bare messages delimited by the end of the stream.
pub fn doq_uses_length_prefix(alpn: &str) -> bool {
    match alpn.strip_prefix("doq-i") {
        None => alpn == "doq",
        Some(n) => n.parse::<u32>().map_or(true, |n| n >= 3),
    }
}

const NO_APPLICATION_PROTOCOL_ALERT: u8 = 120;

pub(crate) fn map_connection_error(e: ConnectionError) -> TransportError {
    let alpn_code = quinn::TransportErrorCode::crypto(NO_APPLICATION_PROTOCOL_ALERT);
    match e {
        ConnectionError::VersionMismatch => TransportError::VersionNegotiation,
        ConnectionError::TimedOut => TransportError::Timeout,
        ConnectionError::Reset => TransportError::Reset,
        ConnectionError::TransportError(ref te) if te.code == alpn_code => {
            TransportError::AlpnMismatch
        }
        ConnectionError::ConnectionClosed(ref c) if c.error_code == alpn_code => {
            TransportError::AlpnMismatch
        }
        ConnectionError::TransportError(ref te) if u64::from(te.code) & 0xff00 == 0x100 => {
            TransportError::Tls(te.to_string())
        }
        other => TransportError::Quic(other.to_string()),
    }
}

enum StreamFailure {
    ZeroRttRejected,
    Other(TransportError),
}

impl From<WriteError> for StreamFailure {
    fn from(e: WriteError) -> Self {
        match e {
            WriteError::ZeroRttRejected => StreamFailure::ZeroRttRejected,
            WriteError::ConnectionLost(c) => StreamFailure::Other(map_connection_error(c)),
            other => StreamFailure::Other(TransportError::Quic(other.to_string())),
        }
    }
}

impl From<ReadToEndError> for StreamFailure {
    fn from(e: ReadToEndError) -> Self {
        match e {
            ReadToEndError::Read(ReadError::ZeroRttRejected) => StreamFailure::ZeroRttRejected,
            ReadToEndError::Read(ReadError::ConnectionLost(c)) => {
                StreamFailure::Other(map_connection_error(c))
            }
            other => StreamFailure::Other(TransportError::Quic(other.to_string())),
        }
    }
}

impl From<ConnectionError> for StreamFailure {
    fn from(e: ConnectionError) -> Self {
        StreamFailure::Other(map_connection_error(e))
    }
}

impl From<TransportError> for StreamFailure {
    fn from(e: TransportError) -> Self {
        StreamFailure::Other(e)
    }
}

impl From<StreamFailure> for TransportError {
    fn from(e: StreamFailure) -> Self {
        match e {
            StreamFailure::ZeroRttRejected => TransportError::Quic("0-RTT rejected".into()),
            StreamFailure::Other(e) => e,
        }
    }
}

async fn exchange_once(
    conn: &quinn::Connection,
    wire: &[u8],
    prefix: bool,
) -> Result<Vec<u8>, StreamFailure> {
    let id = codec::message_id(wire).unwrap_or_default();
    let mut msg = wire.to_vec();
    codec::set_id(&mut msg, 0);
    let payload = if prefix {
        codec::frame(&msg).map_err(TransportError::from)?
    } else {
        msg
    };
    let (mut send, mut recv) = conn.open_bi().await?;
    send.write_all(&payload).await?;
    let _ = send.finish();
    let data = recv.read_to_end(MAX_DOQ_MESSAGE).await?;
    let mut body = if prefix {
        let (body, _) =
            codec::unframe(&data).map_err(|e| TransportError::Malformed(e.to_string()))?;
        body.to_vec()
    } else {
        data
    };
    codec::set_id(&mut body, id);
    Ok(body)
}

/// A DoQ connection ready for queries.
pub(crate) struct QuicSession {
    pub endpoint: Endpoint,
    pub conn: quinn::Connection,
    pub alpn: String,
    pub version: u32,
    pub prefix: bool,
    pub started: Instant,
    pub hs_done: Instant,
    pub phases: Arc<PhaseCounters>,
    pub resumed: bool,
    pub zero_rtt: Option<quinn::ZeroRttAccepted>,
    pub notes: Vec<String>,
    resumption_probe: Option<ResumptionProbe>,
}

struct ResumptionProbe {
    adapter: Arc<crate::session::TlsSessionAdapter>,
    name: String,
    verified_before: u64,
}

impl QuicSession {
    /// Sends one query on a fresh stream. 0-RTT rejections are retried once the handshake completes.
    pub async fn exchange(&mut self, wire: &[u8]) -> Result<Vec<u8>, TransportError> {
        match exchange_once(&self.conn, wire, self.prefix).await {
            Ok(b) => Ok(b),
            Err(StreamFailure::ZeroRttRejected) => {
                if let Some(accepted) = self.zero_rtt.take() {
                    accepted.await;
                }
                Ok(exchange_once(&self.conn, wire, self.prefix).await?)
            }
            Err(StreamFailure::Other(e)) => Err(e),
        }
    }

    /// Shared-reference variant for concurrent use after the handshake.
    pub async fn exchange_shared(
        conn: &quinn::Connection,
        wire: &[u8],
        prefix: bool,
    ) -> Result<Vec<u8>, TransportError> {
        Ok(exchange_once(conn, wire, prefix).await?)
    }

    /// Resolves 0-RTT acceptance and the resumption verdict once the handshake has finished.
    pub async fn settle(&mut self, client: &Client) -> bool {
        let zero_rtt_used = match self.zero_rtt.take() {
            Some(accepted) => accepted.await,
            None => false,
        };
        if let Some(p) = self.resumption_probe.take() {
            let unverified =
                client.tls().verifications(ProtocolKind::DoQ, &p.name) == p.verified_before;
            self.resumed = zero_rtt_used || (p.adapter.ticket_offered() && unverified);
        }
        zero_rtt_used
    }

    /// Handshake-phase totals and cumulative totals so far.
    pub fn stats(&self) -> (IoSnapshot, IoSnapshot) {
        self.phases.snapshots()
    }

    pub fn lost_packets(&self) -> u32 {
        self.conn.stats().path.lost_packets as u32
    }

    pub async fn close(self) {
        self.conn.close(0u32.into(), b"");
        let _ = tokio::time::timeout(
            std::time::Duration::from_millis(100),
            self.endpoint.wait_idle(),
        )
        .await;
    }
}

pub(crate) fn client_endpoint(
    addr: SocketAddr,
) -> Result<(Endpoint, Arc<PhaseCounters>), TransportError> {
    let local: SocketAddr = if addr.is_ipv4() {
        "0.0.0.0:0".parse().unwrap()
    } else {
        "[::]:0".parse().unwrap()
    };
    let sock = std::net::UdpSocket::bind(local)?;
    let runtime =
        quinn::default_runtime().ok_or_else(|| TransportError::Io("no async runtime".into()))?;
    let counters = Arc::new(PhaseCounters::default());
    let socket = Arc::new(ClassifyingSocket::new(
        runtime.wrap_udp_socket(sock)?,
        counters.clone(),
    ));
    // One endpoint per connection, so the client needs no connection IDs of its own.
    let mut config = quinn::EndpointConfig::default();
    config.cid_generator(|| Box::new(quinn_proto::RandomConnectionIdGenerator::new(0)));
    let endpoint = Endpoint::new_with_abstract_socket(config, None, socket, runtime)?;
    Ok((endpoint, counters))
}

/// Connection settings for one DoQ attempt.
pub(crate) struct ConnectParams<'a> {
    pub alpns: &'a [String],
    pub version: u32,
    /// Present the cached ticket and token and try 0-RTT when allowed.
    pub use_session: bool,
}

pub(crate) async fn connect_with(
    client: &Client,
    target: &Target,
    params: ConnectParams<'_>,
) -> Result<QuicSession, TransportError> {
    let key = SessionKey::new(target.addr, ProtocolKind::DoQ);
    let sessions = if params.use_session {
        client.sessions().clone()
    } else {
        crate::session::SessionCache::new()
    };
    let adapter = sessions.tls_store(key);
    let token_store = sessions.token_store(key);
    let tls_config =
        client
            .tls()
            .config_for(ProtocolKind::DoQ, adapter.clone(), Some(params.alpns));
    let quic_tls = quinn::crypto::rustls::QuicClientConfig::try_from(Arc::new(tls_config))
        .map_err(tls::tls_error)?;
    let mut config = quinn::ClientConfig::new(Arc::new(quic_tls));
    config.version(params.version);
    config.token_store(token_store);
    let mut transport = quinn::TransportConfig::default();
    transport.mtu_discovery_config(None);
    if let Ok(idle) = quinn::IdleTimeout::try_from(client.options().timeout) {
        transport.max_idle_timeout(Some(idle));
    }
    config.transport_config(Arc::new(transport));

    let (endpoint, phases) = client_endpoint(target.addr)?;
    let name = tls::server_name_str(target);
    let verified_before = client.tls().verifications(ProtocolKind::DoQ, &name);
    let started = Instant::now();
    let connecting = endpoint
        .connect_with(config, target.addr, &name)
        .map_err(|e| TransportError::Quic(e.to_string()))?;

    let try_0rtt = params.use_session && client.options().enable_0rtt;
    let (conn, zero_rtt) = if try_0rtt {
        match connecting.into_0rtt() {
            Ok((conn, accepted)) => (conn, Some(accepted)),
            Err(connecting) => (connecting.await.map_err(map_connection_error)?, None),
        }
    } else {
        (connecting.await.map_err(map_connection_error)?, None)
    };
    let hs_done = Instant::now();

    let alpn = conn
        .handshake_data()
        .and_then(|d| d.downcast::<quinn::crypto::rustls::HandshakeData>().ok())
        .and_then(|d| d.protocol)
        .map(|p| String::from_utf8_lossy(&p).into_owned())
        .or_else(|| {
            zero_rtt
                .as_ref()
                .and_then(|_| params.alpns.first().cloned())
        })
        .ok_or(TransportError::AlpnMismatch)?;
    let prefix = doq_uses_length_prefix(&alpn);
    let resumed = false;
    Ok(QuicSession {
        endpoint,
        conn,
        alpn,
        version: params.version,
        prefix,
        started,
        hs_done,
        phases,
        resumed,
        zero_rtt,
        notes: Vec::new(),
        resumption_probe: Some(ResumptionProbe {
            adapter,
            name,
            verified_before,
        }),
    })
}

/// Connects using the cached version and ALPN, falling back to a version
/// probe and one retry when the server rejects the version.
pub(crate) async fn connect(
    client: &Client,
    target: &Target,
) -> Result<QuicSession, TransportError> {
    let key = SessionKey::new(target.addr, ProtocolKind::DoQ);
    let sessions = client.sessions();
    let alpns: Vec<String> = match sessions.doq_alpn(&key) {
        Some(a) => vec![a],
        None => client.options().doq_alpns.clone(),
    };
    let preferred = client
        .options()
        .quic_versions
        .first()
        .copied()
        .unwrap_or(QUIC_V1);
    let version = sessions.quic_version(&key).unwrap_or(preferred);
    let first = connect_with(
        client,
        target,
        ConnectParams {
            alpns: &alpns,
            version,
            use_session: true,
        },
    )
    .await;
    let mut session = match first {
        Err(TransportError::VersionNegotiation) => {
            let offered =
                crate::discovery::server_versions(target.addr, client.options().timeout).await?;
            let chosen = client
                .options()
                .quic_versions
                .iter()
                .copied()
                .find(|v| offered.contains(v))
                .ok_or(TransportError::VersionNegotiation)?;
            sessions.set_quic_version(&key, chosen);
            let mut s = connect_with(
                client,
                target,
                ConnectParams {
                    alpns: &alpns,
                    version: chosen,
                    use_session: true,
                },
            )
            .await?;
            s.notes.push("version-negotiation".to_string());
            s
        }
        other => other?,
    };
    sessions.set_quic_version(&key, session.version);
    sessions.set_doq_alpn(&key, &session.alpn);
    if session.zero_rtt.is_some() {
        session.notes.push("0rtt-attempted".to_string());
    }
    Ok(session)
}

pub(crate) async fn measure(
    client: &Client,
    target: &Target,
    wire: &[u8],
    harvest_state: bool,
) -> Result<QueryOutcome, TransportError> {
    let leg = async {
        let e2e_start = Instant::now();
        let mut session = connect(client, target).await?;
        let id = codec::message_id(wire).unwrap_or_default();
        let resp = session.exchange(wire).await?;
        let done = Instant::now();
        let summary = validate_response(&resp, id)?;
        let (hs_stats, end_stats) = session.stats();
        let zero_rtt_used = session.settle(client).await;
        if harvest_state {
            let key = SessionKey::new(target.addr, ProtocolKind::DoQ);
            client.await_harvest(&key, true).await;
        }
        let outcome = QueryOutcome {
            protocol: ProtocolKind::DoQ,
            timing: TimingBreakdown {
                handshake_ms: Some(ms(session.hs_done - session.started)),
                resolve_ms: ms(done - session.hs_done),
                e2e_ms: ms(done - e2e_start),
            },
            bytes: ByteAccounting::from_datagrams(
                client.options().accounting,
                &hs_stats,
                &end_stats,
            ),
            retransmissions: session.lost_packets(),
            tls_version: Some("1.3".to_string()),
            quic_version: Some(session.version),
            doq_alpn: Some(session.alpn.clone()),
            resumed: session.resumed,
            zero_rtt_used,
            response: summary,
            notes: std::mem::take(&mut session.notes),
        };
        session.close().await;
        Ok(outcome)
    };
    tokio::time::timeout(client.options().timeout, leg)
        .await
        .unwrap_or(Err(TransportError::Timeout))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_prefix_by_alpn() {
        assert!(doq_uses_length_prefix("doq"));
        assert!(doq_uses_length_prefix("doq-i03"));
        assert!(doq_uses_length_prefix("doq-i11"));
        assert!(!doq_uses_length_prefix("doq-i02"));
        assert!(!doq_uses_length_prefix("doq-i00"));
    }

    #[test]
    fn alpn_order_is_standard_then_newest_draft() {
        assert_eq!(DOQ_ALPNS[0], "doq");
        assert_eq!(DOQ_ALPNS[1], "doq-i11");
        assert_eq!(DOQ_ALPNS[12], "doq-i00");
    }
}
