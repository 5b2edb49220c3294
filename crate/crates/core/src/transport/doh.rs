use std::str::FromStr;
use std::time::Duration;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use bytes::Bytes;
use h2::client::SendRequest;
use http::{Method, Request};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use super::tcp::{self, TlsSession};
use super::{
    ms, validate_response, ByteAccounting, Client, QueryOutcome, Target, TimingBreakdown,
    TransportError,
};
use crate::codec;
use crate::protocol::ProtocolKind;
use crate::session::SessionKey;

pub const DNS_MESSAGE_MEDIA_TYPE: &str = "application/dns-message";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DohMethod {
    #[default]
    Post,
    Get,
}

impl FromStr for DohMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "POST" => Ok(DohMethod::Post),
            "GET" => Ok(DohMethod::Get),
            _ => Err(format!("unknown DoH method {s:?}")),
        }
    }
}

fn h2_error(e: h2::Error) -> TransportError {
    if let Some(io) = e.get_io() {
        return TransportError::from_io(std::io::Error::new(io.kind(), io.to_string()));
    }
    TransportError::Http(e.to_string())
}

/// An HTTP/2 connection ready for DNS requests. Clones share the connection.
#[derive(Clone)]
pub(crate) struct H2Conn {
    send: SendRequest<Bytes>,
    authority: String,
    path: String,
    method: DohMethod,
}

pub(crate) struct Established {
    pub conn: H2Conn,
    pub driver: JoinHandle<()>,
    pub resumed: bool,
    pub tls_version: Option<String>,
}

/// Completes HTTP/2 setup over a finished TLS session.
pub(crate) async fn establish(
    client: &Client,
    target: &Target,
    session: TlsSession,
) -> Result<Established, TransportError> {
    let (_, conn) = session.stream.get_ref();
    if conn.alpn_protocol() != Some(b"h2".as_slice()) {
        return Err(TransportError::AlpnMismatch);
    }
    let resumed = session.resumed();
    let tls_version = session.version();
    let (send, connection) = h2::client::handshake(session.stream)
        .await
        .map_err(h2_error)?;
    let driver = tokio::spawn(async move {
        let _ = connection.await;
    });
    let authority = match &target.tls_name {
        Some(name) if target.addr.port() == 443 => name.clone(),
        Some(name) => format!("{name}:{}", target.addr.port()),
        None => target.addr.to_string(),
    };
    let path = target
        .doh_path
        .clone()
        .unwrap_or_else(|| client.options().doh_path.clone());
    Ok(Established {
        conn: H2Conn {
            send,
            authority,
            path,
            method: client.options().doh_method,
        },
        driver,
        resumed,
        tls_version,
    })
}

impl H2Conn {
    /// Sends one DNS message and returns the response body.
    pub async fn exchange(&self, wire: &[u8]) -> Result<Vec<u8>, TransportError> {
        let uri_path = match self.method {
            DohMethod::Post => self.path.clone(),
            DohMethod::Get => format!("{}?dns={}", self.path, URL_SAFE_NO_PAD.encode(wire)),
        };
        let uri = format!("https://{}{}", self.authority, uri_path);
        let mut builder = Request::builder()
            .uri(uri)
            .header(http::header::ACCEPT, DNS_MESSAGE_MEDIA_TYPE);
        builder = match self.method {
            DohMethod::Post => builder
                .method(Method::POST)
                .header(http::header::CONTENT_TYPE, DNS_MESSAGE_MEDIA_TYPE)
                .header(http::header::CONTENT_LENGTH, wire.len()),
            DohMethod::Get => builder.method(Method::GET),
        };
        let request = builder
            .body(())
            .map_err(|e| TransportError::Http(e.to_string()))?;
        let mut send = self.send.clone().ready().await.map_err(h2_error)?;
        let end_of_stream = self.method == DohMethod::Get;
        let (response, mut body_tx) = send
            .send_request(request, end_of_stream)
            .map_err(h2_error)?;
        if !end_of_stream {
            body_tx
                .send_data(Bytes::copy_from_slice(wire), true)
                .map_err(h2_error)?;
        }
        let response = response.await.map_err(h2_error)?;
        let status = response.status();
        let mut body = response.into_body();
        let mut out = Vec::new();
        while let Some(chunk) = body.data().await {
            let chunk = chunk.map_err(h2_error)?;
            let _ = body.flow_control().release_capacity(chunk.len());
            out.extend_from_slice(&chunk);
        }
        if !status.is_success() {
            return Err(TransportError::HttpStatus(status.as_u16()));
        }
        Ok(out)
    }
}

/// Drops the request handle and gives the connection task a moment to send GOAWAY.
pub(crate) async fn close(conn: H2Conn, driver: JoinHandle<()>) {
    drop(conn);
    if tokio::time::timeout(Duration::from_millis(200), driver)
        .await
        .is_err()
    {
        tracing::debug!("HTTP/2 connection task did not finish after close");
    }
}

pub(crate) async fn measure(
    client: &Client,
    target: &Target,
    wire: &[u8],
    harvest_state: bool,
) -> Result<QueryOutcome, TransportError> {
    let leg = async {
        let started = Instant::now();
        let (tcp, counters) = tcp::connect(client, target).await?;
        let session = tcp::tls_handshake(client, ProtocolKind::DoH, target, tcp).await?;
        let hs_done = Instant::now();
        let hs_snap = counters.snapshot();
        let est = establish(client, target, session).await?;
        let id = codec::message_id(wire).unwrap_or_default();
        let resp = est.conn.exchange(wire).await?;
        let done = Instant::now();
        let summary = validate_response(&resp, id)?;
        let end_snap = counters.snapshot();
        if harvest_state {
            let key = SessionKey::new(target.addr, ProtocolKind::DoH);
            client.await_harvest(&key, false).await;
        }
        close(est.conn, est.driver).await;
        Ok(QueryOutcome {
            protocol: ProtocolKind::DoH,
            timing: TimingBreakdown {
                handshake_ms: Some(ms(hs_done - started)),
                resolve_ms: ms(done - hs_done),
                e2e_ms: ms(done - started),
            },
            bytes: ByteAccounting::from_stream(
                client.options().accounting,
                &hs_snap,
                &end_snap,
                true,
            ),
            retransmissions: 0,
            tls_version: est.tls_version,
            quic_version: None,
            doq_alpn: None,
            resumed: est.resumed,
            zero_rtt_used: false,
            response: summary,
            notes: Vec::new(),
        })
    };
    tokio::time::timeout(client.options().timeout, leg)
        .await
        .unwrap_or(Err(TransportError::Timeout))
}
