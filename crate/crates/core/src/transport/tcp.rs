use std::sync::Arc;

use rustls::pki_types::ServerName;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::time::Instant;
use tokio_rustls::client::TlsStream;
use tokio_rustls::TlsConnector;

use super::{
    ms, tls, validate_response, ByteAccounting, Client, CountingStream, IoCounters, QueryOutcome,
    Target, TimingBreakdown, TransportError,
};
use crate::codec;
use crate::protocol::ProtocolKind;
use crate::session::SessionKey;

pub(crate) type CountedTcp = CountingStream<TcpStream>;

/// Opens a TCP connection, charging the emulated connect round-trip if configured.
pub(crate) async fn connect(
    client: &Client,
    target: &Target,
) -> Result<(CountedTcp, Arc<IoCounters>), TransportError> {
    let stream = tokio::time::timeout(client.options().timeout, TcpStream::connect(target.addr))
        .await
        .map_err(|_| TransportError::ConnectTimeout)??;
    stream.set_nodelay(true)?;
    client.emulate_connect_rtt().await;
    Ok(CountingStream::new(stream))
}

pub(crate) struct TlsSession {
    pub stream: TlsStream<CountedTcp>,
}

impl TlsSession {
    pub fn resumed(&self) -> bool {
        self.stream.get_ref().1.handshake_kind() == Some(rustls::HandshakeKind::Resumed)
    }

    pub fn version(&self) -> Option<String> {
        tls::version_label(self.stream.get_ref().1.protocol_version())
    }
}

/// TLS handshake over an established TCP stream.
pub(crate) async fn tls_handshake(
    client: &Client,
    protocol: ProtocolKind,
    target: &Target,
    tcp: CountedTcp,
) -> Result<TlsSession, TransportError> {
    let key = SessionKey::new(target.addr, protocol);
    let adapter = client.sessions().tls_store(key);
    let config = client.tls().config_for(protocol, adapter, None);
    let name: ServerName<'static> = tls::server_name(target)?;
    let stream = TlsConnector::from(Arc::new(config))
        .connect(name, tcp)
        .await
        .map_err(map_tls_io)?;
    Ok(TlsSession { stream })
}

pub(crate) fn map_tls_io(e: std::io::Error) -> TransportError {
    if let Some(inner) = e.get_ref().and_then(|i| i.downcast_ref::<rustls::Error>()) {
        return match inner {
            rustls::Error::NoApplicationProtocol => TransportError::AlpnMismatch,
            rustls::Error::AlertReceived(rustls::AlertDescription::NoApplicationProtocol) => {
                TransportError::AlpnMismatch
            }
            other => TransportError::Tls(other.to_string()),
        };
    }
    if e.kind() == std::io::ErrorKind::InvalidData {
        return TransportError::Tls(e.to_string());
    }
    TransportError::from_io(e)
}

pub(crate) async fn write_framed<W: AsyncWrite + Unpin>(
    w: &mut W,
    msg: &[u8],
) -> Result<(), TransportError> {
    let framed = codec::frame(msg)?;
    w.write_all(&framed).await?;
    w.flush().await?;
    Ok(())
}

pub(crate) async fn read_framed<R: AsyncRead + Unpin>(
    r: &mut R,
) -> Result<Vec<u8>, TransportError> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len).await?;
    let mut body = vec![0u8; u16::from_be_bytes(len) as usize];
    r.read_exact(&mut body).await?;
    Ok(body)
}

/// Drains whatever the peer sends until the harvest condition holds or the peer closes.
pub(crate) async fn harvest<R: AsyncRead + Unpin>(client: &Client, key: &SessionKey, r: &mut R) {
    let drain = async {
        let mut scratch = [0u8; 4096];
        while let Ok(n) = r.read(&mut scratch).await {
            if n == 0 {
                break;
            }
        }
        std::future::pending::<()>().await
    };
    tokio::select! {
        _ = client.await_harvest(key, false) => {}
        _ = drain => {}
    }
}

const CLOSE_LINGER: std::time::Duration = std::time::Duration::from_secs(1);

/// Sends our FIN (after close_notify on TLS) and waits briefly for the peer's,
/// so the server has seen the close before the next leg starts.
pub(crate) async fn close_gracefully<S: AsyncRead + AsyncWrite + Unpin>(stream: &mut S) {
    let _ = stream.shutdown().await;
    let drain = async {
        let mut scratch = [0u8; 1024];
        while let Ok(n) = stream.read(&mut scratch).await {
            if n == 0 {
                break;
            }
        }
    };
    let _ = tokio::time::timeout(CLOSE_LINGER, drain).await;
}

pub(crate) async fn measure(
    client: &Client,
    protocol: ProtocolKind,
    target: &Target,
    wire: &[u8],
    harvest_state: bool,
) -> Result<QueryOutcome, TransportError> {
    let leg = async {
        let started = Instant::now();
        let (tcp, counters) = connect(client, target).await?;
        let id = codec::message_id(wire).unwrap_or_default();
        let accounting = client.options().accounting;
        if protocol == ProtocolKind::DoTcp {
            let hs_done = Instant::now();
            let hs_snap = counters.snapshot();
            let mut tcp = tcp;
            write_framed(&mut tcp, wire).await?;
            let resp = read_framed(&mut tcp).await?;
            let done = Instant::now();
            let summary = validate_response(&resp, id)?;
            let end_snap = counters.snapshot();
            close_gracefully(&mut tcp).await;
            return Ok(QueryOutcome {
                protocol,
                timing: TimingBreakdown {
                    handshake_ms: Some(ms(hs_done - started)),
                    resolve_ms: ms(done - hs_done),
                    e2e_ms: ms(done - started),
                },
                bytes: ByteAccounting::from_stream(accounting, &hs_snap, &end_snap, true),
                retransmissions: 0,
                tls_version: None,
                quic_version: None,
                doq_alpn: None,
                resumed: false,
                zero_rtt_used: false,
                response: summary,
                notes: Vec::new(),
            });
        }

        let mut session = tls_handshake(client, protocol, target, tcp).await?;
        let hs_done = Instant::now();
        let hs_snap = counters.snapshot();
        write_framed(&mut session.stream, wire).await?;
        let resp = read_framed(&mut session.stream).await?;
        let done = Instant::now();
        let summary = validate_response(&resp, id)?;
        let end_snap = counters.snapshot();
        if harvest_state {
            let key = SessionKey::new(target.addr, protocol);
            harvest(client, &key, &mut session.stream).await;
        }
        let resumed = session.resumed();
        let tls_version = session.version();
        close_gracefully(&mut session.stream).await;
        Ok(QueryOutcome {
            protocol,
            timing: TimingBreakdown {
                handshake_ms: Some(ms(hs_done - started)),
                resolve_ms: ms(done - hs_done),
                e2e_ms: ms(done - started),
            },
            bytes: ByteAccounting::from_stream(accounting, &hs_snap, &end_snap, true),
            retransmissions: 0,
            tls_version,
            quic_version: None,
            doq_alpn: None,
            resumed,
            zero_rtt_used: false,
            response: summary,
            notes: Vec::new(),
        })
    };
    tokio::time::timeout(client.options().timeout, leg)
        .await
        .unwrap_or(Err(TransportError::Timeout))
}
