use std::sync::Arc;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use bytes::Bytes;
use http::{Method, Response, StatusCode};
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::TcpListener;
use tokio_rustls::TlsAcceptor;

use super::{delayed, Shared};
use crate::protocol::ProtocolKind;

pub(crate) async fn run(
    shared: Arc<Shared>,
    p: ProtocolKind,
    listener: TcpListener,
    tls: Option<TlsAcceptor>,
) {
    loop {
        let Ok((stream, _peer)) = listener.accept().await else {
            continue;
        };
        let _ = stream.set_nodelay(true);
        shared.counters.connection_accepted(p);
        let guard = shared.counters.open_guard();
        let shared = shared.clone();
        let tls = tls.clone();
        tokio::spawn(async move {
            let _guard = guard;
            let io = delayed(stream, shared.config.one_way_delay);
            match tls {
                None => serve_stream(&shared, p, io).await,
                Some(acceptor) => {
                    let Ok(tls_stream) = acceptor.accept(io).await else {
                        return;
                    };
                    if tls_stream.get_ref().1.handshake_kind()
                        == Some(rustls::HandshakeKind::Resumed)
                    {
                        shared.counters.resumption(p);
                    }
                    if p == ProtocolKind::DoH {
                        serve_h2(&shared, tls_stream).await;
                    } else {
                        serve_stream(&shared, p, tls_stream).await;
                    }
                }
            }
        });
    }
}

/// Length-prefixed DNS over a byte stream, answered in arrival order.
async fn serve_stream<S: AsyncRead + AsyncWrite + Unpin>(
    shared: &Shared,
    p: ProtocolKind,
    mut io: S,
) {
    loop {
        let mut len = [0u8; 2];
        if io.read_exact(&mut len).await.is_err() {
            break;
        }
        let mut msg = vec![0u8; u16::from_be_bytes(len) as usize];
        if io.read_exact(&mut msg).await.is_err() {
            break;
        }
        let Some(resp) = shared.config.zone.answer(&msg) else {
            break;
        };
        shared.counters.query_answered(p);
        let mut out = Vec::with_capacity(resp.len() + 2);
        out.extend_from_slice(&(resp.len() as u16).to_be_bytes());
        out.extend_from_slice(&resp);
        if io.write_all(&out).await.is_err() || io.flush().await.is_err() {
            break;
        }
    }
    let _ = io.shutdown().await;
}

fn dns_param(query: Option<&str>) -> Option<Vec<u8>> {
    query?
        .split('&')
        .find_map(|kv| kv.strip_prefix("dns="))
        .and_then(|v| URL_SAFE_NO_PAD.decode(v.trim_end_matches('=')).ok())
}

async fn serve_h2<S: AsyncRead + AsyncWrite + Unpin>(shared: &Arc<Shared>, io: S) {
    let Ok(mut conn) = h2::server::handshake(io).await else {
        return;
    };
    while let Some(Ok((req, mut respond))) = conn.accept().await {
        let shared = shared.clone();
        tokio::spawn(async move {
            let (parts, mut body) = req.into_parts();
            let message = if parts.uri.path() != shared.config.doh_path {
                Err(StatusCode::NOT_FOUND)
            } else if parts.method == Method::POST {
                let mut data = Vec::new();
                while let Some(chunk) = body.data().await {
                    let Ok(chunk) = chunk else { return };
                    let _ = body.flow_control().release_capacity(chunk.len());
                    data.extend_from_slice(&chunk);
                }
                Ok(data)
            } else if parts.method == Method::GET {
                dns_param(parts.uri.query()).ok_or(StatusCode::BAD_REQUEST)
            } else {
                Err(StatusCode::METHOD_NOT_ALLOWED)
            };
            let answer =
                message.and_then(|m| shared.config.zone.answer(&m).ok_or(StatusCode::BAD_REQUEST));
            match answer {
                Ok(resp) => {
                    shared.counters.query_answered(ProtocolKind::DoH);
                    let head = Response::builder()
                        .status(StatusCode::OK)
                        .header(
                            http::header::CONTENT_TYPE,
                            crate::transport::DNS_MESSAGE_MEDIA_TYPE,
                        )
                        .header(http::header::CONTENT_LENGTH, resp.len())
                        .body(())
                        .expect("static response head");
                    if let Ok(mut send) = respond.send_response(head, false) {
                        let _ = send.send_data(Bytes::from(resp), true);
                    }
                }
                Err(status) => {
                    let head = Response::builder()
                        .status(status)
                        .body(())
                        .expect("static response head");
                    let _ = respond.send_response(head, true);
                }
            }
        });
    }
}
