use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use quinn::crypto::rustls::QuicServerConfig;
use tokio::net::UdpSocket;
use tokio::task::JoinHandle;
use tokio::time::Instant;

use super::delay::DelayedSender;
use super::{MockConfig, MockError, Shared};
use crate::codec;
use crate::protocol::ProtocolKind;
use crate::transport::doq_uses_length_prefix;

const FLOW_IDLE: Duration = Duration::from_secs(30);
const MAX_DNS_MESSAGE: usize = 65535 + 2;

/// The QUIC endpoint behind the public relay sockets.
pub(crate) fn endpoint(
    config: &MockConfig,
    tls: rustls::ServerConfig,
) -> Result<quinn::Endpoint, MockError> {
    let crypto = QuicServerConfig::try_from(tls).map_err(|e| MockError::Config(e.to_string()))?;
    let mut server = quinn::ServerConfig::with_crypto(Arc::new(crypto));
    let mut transport = quinn::TransportConfig::default();
    transport.mtu_discovery_config(None);
    server.transport_config(Arc::new(transport));
    let mut tokens = quinn::ValidationTokenConfig::default();
    tokens.sent(1);
    server.validation_token_config(tokens);
    let mut ep_cfg = quinn::EndpointConfig::default();
    ep_cfg.supported_versions(config.quic_versions.clone());
    let bind = SocketAddr::from((Ipv4Addr::LOCALHOST, 0));
    let sock = std::net::UdpSocket::bind(bind).map_err(|source| MockError::Bind {
        protocol: ProtocolKind::DoQ,
        addr: bind,
        source,
    })?;
    quinn::Endpoint::new(ep_cfg, Some(server), sock, Arc::new(quinn::TokioRuntime)).map_err(
        |source| MockError::Bind {
            protocol: ProtocolKind::DoQ,
            addr: bind,
            source,
        },
    )
}

pub(crate) async fn accept_loop(shared: Arc<Shared>, endpoint: quinn::Endpoint) {
    while let Some(incoming) = endpoint.accept().await {
        shared.counters.connection_accepted(ProtocolKind::DoQ);
        let guard = shared.counters.open_guard();
        let shared = shared.clone();
        tokio::spawn(async move {
            let _guard = guard;
            let Ok(connecting) = incoming.accept() else {
                return;
            };
            let (conn, zrtt) = match connecting.into_0rtt() {
                Ok(pair) => pair,
                Err(connecting) => {
                    let Ok(conn) = connecting.await else { return };
                    serve_connection(&shared, conn, None).await;
                    return;
                }
            };
            serve_connection(&shared, conn, Some(zrtt)).await;
        });
    }
}

async fn serve_connection(
    shared: &Arc<Shared>,
    conn: quinn::Connection,
    zrtt: Option<quinn::ZeroRttAccepted>,
) {
    let prefix = conn
        .handshake_data()
        .and_then(|d| d.downcast::<quinn::crypto::rustls::HandshakeData>().ok())
        .and_then(|d| d.protocol)
        .map(|alpn| doq_uses_length_prefix(&String::from_utf8_lossy(&alpn)))
        .unwrap_or(true);
    // Handshake completion resolves `zrtt`; a stream seen before then rode in 0-RTT.
    let mut pending = zrtt;
    let mut counted = false;
    loop {
        let stream = match pending.as_mut() {
            Some(z) => tokio::select! {
                biased;
                _ = z => {
                    pending = None;
                    continue;
                }
                s = conn.accept_bi() => {
                    if !counted {
                        counted = true;
                        shared.counters.zero_rtt_accept(ProtocolKind::DoQ);
                    }
                    s
                }
            },
            None => conn.accept_bi().await,
        };
        let Ok((mut send, mut recv)) = stream else {
            break;
        };
        let shared = shared.clone();
        tokio::spawn(async move {
            let Ok(data) = recv.read_to_end(MAX_DNS_MESSAGE).await else {
                return;
            };
            let msg = if prefix {
                match codec::unframe(&data) {
                    Ok((m, _)) => m,
                    Err(_) => return,
                }
            } else {
                &data[..]
            };
            let Some(resp) = shared.config.zone.answer(msg) else {
                return;
            };
            shared.counters.query_answered(ProtocolKind::DoQ);
            let out = if prefix {
                match codec::frame(&resp) {
                    Ok(f) => f,
                    Err(_) => return,
                }
            } else {
                resp
            };
            if send.write_all(&out).await.is_ok() {
                let _ = send.finish();
            }
        });
    }
}

/// Version Negotiation for a full-size long-header packet carrying version 0.
/// quinn reads version 0 as a negotiation packet itself and stays silent, so
/// the relay answers in its place.
fn version_negotiation(pkt: &[u8], versions: &[u32]) -> Option<Vec<u8>> {
    if pkt.len() < crate::discovery::MIN_INITIAL_DATAGRAM
        || pkt[0] & 0x80 == 0
        || pkt[1..5] != [0; 4]
    {
        return None;
    }
    let dlen = *pkt.get(5)? as usize;
    let dcid = pkt.get(6..6 + dlen)?;
    let slen = *pkt.get(6 + dlen)? as usize;
    let scid = pkt.get(7 + dlen..7 + dlen + slen)?;
    let mut out = Vec::with_capacity(7 + dlen + slen + 4 * versions.len());
    out.push(0x80 | rand::random::<u8>() & 0x7F);
    out.extend_from_slice(&[0; 4]);
    out.push(slen as u8);
    out.extend_from_slice(scid);
    out.push(dlen as u8);
    out.extend_from_slice(dcid);
    for v in versions {
        out.extend_from_slice(&v.to_be_bytes());
    }
    Some(out)
}

struct Flow {
    upstream: DelayedSender,
    last_seen: Instant,
    reader: JoinHandle<()>,
}

impl Drop for Flow {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

/// Forwards datagrams between one public QUIC port and the internal endpoint,
/// using one upstream socket per client address and delaying both directions.
pub(crate) async fn relay(shared: Arc<Shared>, sock: UdpSocket, internal: SocketAddr) {
    let delay = shared.config.one_way_delay;
    let public = Arc::new(sock);
    let to_client = DelayedSender::spawn(public.clone(), delay);
    let mut flows: HashMap<SocketAddr, Flow> = HashMap::new();
    let mut buf = vec![0u8; 65535];
    loop {
        let Ok((n, from)) = public.recv_from(&mut buf).await else {
            continue;
        };
        shared.counters.datagram_received(ProtocolKind::DoQ);
        if let Some(vn) = version_negotiation(&buf[..n], &shared.config.quic_versions) {
            to_client.send(Bytes::from(vn), from);
            continue;
        }
        let now = Instant::now();
        flows.retain(|_, f| now.duration_since(f.last_seen) < FLOW_IDLE);
        if !flows.contains_key(&from) {
            let Ok(up) = UdpSocket::bind((Ipv4Addr::LOCALHOST, 0)).await else {
                continue;
            };
            let up = Arc::new(up);
            let back = to_client.clone();
            let reader_sock = up.clone();
            let reader = tokio::spawn(async move {
                let mut buf = vec![0u8; 65535];
                while let Ok((n, _)) = reader_sock.recv_from(&mut buf).await {
                    back.send(Bytes::copy_from_slice(&buf[..n]), from);
                }
            });
            flows.insert(
                from,
                Flow {
                    upstream: DelayedSender::spawn(up, delay),
                    last_seen: now,
                    reader,
                },
            );
        }
        let flow = flows.get_mut(&from).expect("flow inserted above");
        flow.last_seen = now;
        flow.upstream
            .send(Bytes::copy_from_slice(&buf[..n]), internal);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::{build_probe, parse_version_negotiation};

    #[test]
    fn answers_only_full_size_version_zero() {
        let probe = build_probe(&mut rand::thread_rng(), 1200);
        let vn = version_negotiation(&probe.bytes, &[1]).unwrap();
        assert_eq!(parse_version_negotiation(&vn, &probe), Some(vec![1]));
        assert!(version_negotiation(&probe.bytes[..1199], &[1]).is_none());
        let mut v1 = probe.bytes.clone();
        v1[4] = 1;
        assert!(version_negotiation(&v1, &[1]).is_none());
    }
}
