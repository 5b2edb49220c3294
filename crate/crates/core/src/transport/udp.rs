use std::net::SocketAddr;
use std::time::Duration;

use tokio::time::Instant;

use tokio::net::UdpSocket;

use super::{
    ms, validate_response, ByteAccounting, Client, IoCounters, QueryOutcome, Target,
    TimingBreakdown, TransportError,
};
use crate::codec;
use crate::protocol::ProtocolKind;

/// Application-level retransmission for DoUDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetransmitPolicy {
    /// Wait before resending an unanswered datagram.
    pub retry_after: Duration,
    pub max_retries: u32,
}

impl RetransmitPolicy {
    pub const fn none() -> Self {
        Self {
            retry_after: Duration::ZERO,
            max_retries: 0,
        }
    }

    /// Typical stub-resolver behaviour: one resend after five seconds.
    pub const fn resolver_default() -> Self {
        Self {
            retry_after: Duration::from_secs(5),
            max_retries: 1,
        }
    }
}

impl Default for RetransmitPolicy {
    fn default() -> Self {
        Self::none()
    }
}

pub(crate) async fn bind_for(addr: SocketAddr) -> std::io::Result<UdpSocket> {
    let local: SocketAddr = if addr.is_ipv4() {
        "0.0.0.0:0".parse().unwrap()
    } else {
        "[::]:0".parse().unwrap()
    };
    UdpSocket::bind(local).await
}

pub(crate) async fn measure(
    client: &Client,
    target: &Target,
    wire: &[u8],
    policy: RetransmitPolicy,
) -> Result<QueryOutcome, TransportError> {
    let started = Instant::now();
    let sock = bind_for(target.addr).await?;
    sock.connect(target.addr).await?;
    let id = codec::message_id(wire)
        .ok_or_else(|| TransportError::Malformed("query shorter than a header".into()))?;
    let counters = IoCounters::default();
    let deadline = started + client.options().timeout;
    let mut retransmissions = 0u32;

    let first_sent = Instant::now();
    counters.record_tx(sock.send(wire).await?);
    let mut next_retry = (policy.max_retries > 0).then(|| first_sent + policy.retry_after);
    let mut buf = vec![0u8; 65535];
    let summary = loop {
        let wake = next_retry.map_or(deadline, |r| r.min(deadline));
        match tokio::time::timeout_at(wake, sock.recv(&mut buf)).await {
            Ok(Ok(n)) => {
                counters.record_rx(n);
                match codec::message_id(&buf[..n]) {
                    Some(rid) if rid == id => break validate_response(&buf[..n], id)?,
                    _ => continue,
                }
            }
            Ok(Err(e)) => return Err(e.into()),
            Err(_) => {
                let now = Instant::now();
                if now >= deadline {
                    return Err(TransportError::Timeout);
                }
                if next_retry.is_some() {
                    counters.record_tx(sock.send(wire).await?);
                    retransmissions += 1;
                    next_retry =
                        (retransmissions < policy.max_retries).then(|| now + policy.retry_after);
                }
            }
        }
    };
    let done = Instant::now();
    let snap = counters.snapshot();
    Ok(QueryOutcome {
        protocol: ProtocolKind::DoUdp,
        timing: TimingBreakdown {
            handshake_ms: None,
            resolve_ms: ms(done - first_sent),
            e2e_ms: ms(done - started),
        },
        bytes: ByteAccounting::from_datagrams(
            client.options().accounting,
            &Default::default(),
            &snap,
        ),
        retransmissions,
        tls_version: None,
        quic_version: None,
        doq_alpn: None,
        resumed: false,
        zero_rtt_used: false,
        response: summary,
        notes: Vec::new(),
    })
}
