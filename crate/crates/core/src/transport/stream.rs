//! Long-lived connections for multi-query workloads.
//!
//! DoT pipelines queries over one TLS stream, DoH multiplexes HTTP/2 streams
//! and DoQ opens one QUIC stream per query. Concurrent callers share the
//! connection; none of them ever dials a second one. DoTCP and DoUDP have no
//! reusable connection and fall back to one fresh exchange per query.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU16, AtomicU32, Ordering};
use std::sync::{Arc, Mutex};

use tokio::io::{AsyncWriteExt, ReadHalf, WriteHalf};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tokio::time::Instant;

use super::doh::{self, H2Conn};
use super::doq::{self, QuicSession};
use super::tcp::{self, CountedTcp};
use super::{ms, validate_response, Client, Target, TimingBreakdown, TransportError};
use crate::codec::{self, DnsQuery, DnsResponseSummary};
use crate::protocol::ProtocolKind;
use crate::session::SessionKey;

type TlsIo = tokio_rustls::client::TlsStream<CountedTcp>;
type Pending = Arc<Mutex<Option<HashMap<u16, oneshot::Sender<Vec<u8>>>>>>;

/// Pipelined DNS-over-stream connection keyed by rewritten message IDs.
struct Pipeline {
    writer: tokio::sync::Mutex<WriteHalf<TlsIo>>,
    pending: Pending,
    next_id: AtomicU16,
    reader: JoinHandle<()>,
}

impl Pipeline {
    fn new(stream: TlsIo) -> Self {
        let (mut rd, wr): (ReadHalf<TlsIo>, WriteHalf<TlsIo>) = tokio::io::split(stream);
        let pending: Pending = Arc::new(Mutex::new(Some(HashMap::new())));
        let table = pending.clone();
        let reader = tokio::spawn(async move {
            while let Ok(msg) = tcp::read_framed(&mut rd).await {
                let Some(id) = codec::message_id(&msg) else {
                    continue;
                };
                let waiter = table.lock().unwrap().as_mut().and_then(|m| m.remove(&id));
                if let Some(tx) = waiter {
                    let _ = tx.send(msg);
                }
            }
            // Dropping the senders fails every outstanding query.
            table.lock().unwrap().take();
        });
        Self {
            writer: tokio::sync::Mutex::new(wr),
            pending,
            next_id: AtomicU16::new(1),
            reader,
        }
    }

    async fn exchange(&self, wire: &[u8]) -> Result<Vec<u8>, TransportError> {
        let original = codec::message_id(wire).unwrap_or_default();
        let (tx, rx) = oneshot::channel();
        let id = loop {
            let id = self.next_id.fetch_add(1, Ordering::Relaxed);
            let mut guard = self.pending.lock().unwrap();
            let map = guard.as_mut().ok_or(TransportError::Reset)?;
            if let std::collections::hash_map::Entry::Vacant(e) = map.entry(id) {
                e.insert(tx);
                break id;
            }
        };
        let mut msg = wire.to_vec();
        codec::set_id(&mut msg, id);
        tcp::write_framed(&mut *self.writer.lock().await, &msg).await?;
        let mut resp = rx.await.map_err(|_| TransportError::Reset)?;
        codec::set_id(&mut resp, original);
        Ok(resp)
    }

    async fn close(mut self) {
        let _ = self.writer.lock().await.shutdown().await;
        // The reader ends once the peer closes its side.
        let _ = tokio::time::timeout(std::time::Duration::from_secs(1), &mut self.reader).await;
        self.reader.abort();
    }
}

enum Link {
    PerQuery,
    Pipelined(Pipeline),
    Http(H2Conn, JoinHandle<()>),
    Quic(QuicSession),
}

/// Per-query result on an open connection.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamQueryOutcome {
    pub timing: TimingBreakdown,
    pub response: DnsResponseSummary,
    pub retransmissions: u32,
}

/// A connection (or connection policy, for DoTCP and DoUDP) serving many queries.
pub struct OpenConnection {
    client: Client,
    protocol: ProtocolKind,
    target: Target,
    link: Link,
    opened: AtomicU32,
    handshake_ms: Option<f64>,
    resumed: bool,
}

impl std::fmt::Debug for OpenConnection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenConnection")
            .field("protocol", &self.protocol)
            .field("target", &self.target)
            .field("opened", &self.connections_opened())
            .finish()
    }
}

pub(crate) async fn open(
    client: &Client,
    protocol: ProtocolKind,
    target: &Target,
) -> Result<OpenConnection, TransportError> {
    let fut = async {
        let started = Instant::now();
        let (link, resumed) = match protocol {
            ProtocolKind::DoUdp | ProtocolKind::DoTcp => (Link::PerQuery, false),
            ProtocolKind::DoT => {
                let (tcp, _) = tcp::connect(client, target).await?;
                let session = tcp::tls_handshake(client, protocol, target, tcp).await?;
                let resumed = session.resumed();
                (Link::Pipelined(Pipeline::new(session.stream)), resumed)
            }
            ProtocolKind::DoH => {
                let (tcp, _) = tcp::connect(client, target).await?;
                let session = tcp::tls_handshake(client, protocol, target, tcp).await?;
                let est = doh::establish(client, target, session).await?;
                (Link::Http(est.conn, est.driver), est.resumed)
            }
            ProtocolKind::DoQ => {
                let mut session = doq::connect(client, target).await?;
                if session.zero_rtt.is_none() {
                    session.settle(client).await;
                }
                let resumed = session.resumed;
                (Link::Quic(session), resumed)
            }
        };
        let handshake_ms = match link {
            Link::PerQuery => None,
            _ => Some(ms(started.elapsed())),
        };
        let opened = u32::from(!matches!(link, Link::PerQuery));
        Ok(OpenConnection {
            client: client.clone(),
            protocol,
            target: target.clone(),
            link,
            opened: AtomicU32::new(opened),
            handshake_ms,
            resumed,
        })
    };
    tokio::time::timeout(client.options().timeout, fut)
        .await
        .unwrap_or(Err(TransportError::Timeout))
}

impl OpenConnection {
    pub fn protocol(&self) -> ProtocolKind {
        self.protocol
    }

    /// Connections dialed so far on behalf of this handle.
    pub fn connections_opened(&self) -> u32 {
        self.opened.load(Ordering::SeqCst)
    }

    /// Setup time of the shared connection; absent for DoTCP and DoUDP.
    pub fn handshake_ms(&self) -> Option<f64> {
        self.handshake_ms
    }

    pub fn resumed(&self) -> bool {
        self.resumed
    }

    /// Resolves one query. Safe to call concurrently.
    pub async fn query(&self, query: &DnsQuery) -> Result<StreamQueryOutcome, TransportError> {
        let wire = codec::encode_query(query)?;
        let id = query.id;
        let started = Instant::now();
        let timeout = self.client.options().timeout;
        let resp = match &self.link {
            Link::PerQuery => {
                if self.protocol == ProtocolKind::DoTcp {
                    self.opened.fetch_add(1, Ordering::SeqCst);
                }
                let out = self
                    .client
                    .query(self.protocol, &self.target, query)
                    .await?;
                return Ok(StreamQueryOutcome {
                    timing: out.timing,
                    response: out.response,
                    retransmissions: out.retransmissions,
                });
            }
            Link::Pipelined(p) => tokio::time::timeout(timeout, p.exchange(&wire)).await,
            Link::Http(h, _) => tokio::time::timeout(timeout, h.exchange(&wire)).await,
            Link::Quic(q) => {
                tokio::time::timeout(
                    timeout,
                    QuicSession::exchange_shared(&q.conn, &wire, q.prefix),
                )
                .await
            }
        }
        .unwrap_or(Err(TransportError::Timeout))?;
        let elapsed = ms(started.elapsed());
        Ok(StreamQueryOutcome {
            timing: TimingBreakdown {
                handshake_ms: None,
                resolve_ms: elapsed,
                e2e_ms: elapsed,
            },
            response: validate_response(&resp, id)?,
            retransmissions: 0,
        })
    }

    /// Waits for reusable session state to arrive, as a warm navigation would.
    pub async fn harvest(&self) {
        if self.protocol.is_encrypted() {
            let key = SessionKey::new(self.target.addr, self.protocol);
            self.client
                .await_harvest(&key, self.protocol == ProtocolKind::DoQ)
                .await;
        }
    }

    pub async fn close(self) {
        match self.link {
            Link::PerQuery => {}
            Link::Pipelined(p) => p.close().await,
            Link::Http(h, driver) => doh::close(h, driver).await,
            Link::Quic(q) => q.close().await,
        }
    }
}
