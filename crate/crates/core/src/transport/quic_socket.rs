//! Client UDP socket that splits QUIC traffic into handshake and DNS phases.
//!
//! A datagram whose first packet is an Initial or Handshake packet belongs to
//! the handshake, padding and coalesced packets included. Everything else
//! (0-RTT and short-header packets) is DNS traffic.

use std::fmt;
use std::io::{self, IoSliceMut};
use std::net::SocketAddr;
use std::pin::Pin;
use std::sync::Arc;
use std::task::{Context, Poll};

use quinn::udp::{RecvMeta, Transmit};
use quinn::{AsyncUdpSocket, UdpPoller};

use super::{IoCounters, IoSnapshot};

const LONG_HEADER: u8 = 0x80;
const TYPE_ZERO_RTT: u8 = 1;

/// Whether a datagram opens with a handshake-space long-header packet.
pub(crate) fn is_handshake_datagram(d: &[u8]) -> bool {
    match d.first() {
        Some(b) if b & LONG_HEADER != 0 => {
            let version_negotiation = d.get(1..5) == Some(&[0; 4][..]);
            version_negotiation || (b >> 4) & 0x3 != TYPE_ZERO_RTT
        }
        _ => false,
    }
}

#[derive(Debug, Default)]
pub(crate) struct PhaseCounters {
    handshake: IoCounters,
    dns: IoCounters,
}

impl PhaseCounters {
    fn tx(&self, d: &[u8]) {
        self.phase(d).record_tx(d.len());
    }

    fn rx(&self, d: &[u8]) {
        self.phase(d).record_rx(d.len());
    }

    fn phase(&self, d: &[u8]) -> &IoCounters {
        if is_handshake_datagram(d) {
            &self.handshake
        } else {
            &self.dns
        }
    }

    /// Handshake-phase totals and cumulative totals.
    pub fn snapshots(&self) -> (IoSnapshot, IoSnapshot) {
        let hs = self.handshake.snapshot();
        let dns = self.dns.snapshot();
        let all = IoSnapshot {
            tx_bytes: hs.tx_bytes + dns.tx_bytes,
            rx_bytes: hs.rx_bytes + dns.rx_bytes,
            tx_pdus: hs.tx_pdus + dns.tx_pdus,
            rx_pdus: hs.rx_pdus + dns.rx_pdus,
        };
        (hs, all)
    }
}

pub(crate) struct ClassifyingSocket {
    inner: Arc<dyn AsyncUdpSocket>,
    counters: Arc<PhaseCounters>,
}

impl fmt::Debug for ClassifyingSocket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassifyingSocket")
            .field("counters", &self.counters)
            .finish()
    }
}

impl ClassifyingSocket {
    pub fn new(inner: Arc<dyn AsyncUdpSocket>, counters: Arc<PhaseCounters>) -> Self {
        Self { inner, counters }
    }
}

impl AsyncUdpSocket for ClassifyingSocket {
    fn create_io_poller(self: Arc<Self>) -> Pin<Box<dyn UdpPoller>> {
        self.inner.clone().create_io_poller()
    }

    fn try_send(&self, transmit: &Transmit) -> io::Result<()> {
        self.inner.try_send(transmit)?;
        let seg = transmit
            .segment_size
            .unwrap_or(transmit.contents.len())
            .max(1);
        for d in transmit.contents.chunks(seg) {
            self.counters.tx(d);
        }
        Ok(())
    }

    fn poll_recv(
        &self,
        cx: &mut Context,
        bufs: &mut [IoSliceMut<'_>],
        meta: &mut [RecvMeta],
    ) -> Poll<io::Result<usize>> {
        let res = self.inner.poll_recv(cx, bufs, meta);
        if let Poll::Ready(Ok(n)) = &res {
            for (buf, m) in bufs.iter().zip(meta.iter()).take(*n) {
                for d in buf[..m.len].chunks(m.stride.max(1)) {
                    self.counters.rx(d);
                }
            }
        }
        res
    }

    fn local_addr(&self) -> io::Result<SocketAddr> {
        self.inner.local_addr()
    }

    fn max_transmit_segments(&self) -> usize {
        self.inner.max_transmit_segments()
    }

    fn max_receive_segments(&self) -> usize {
        self.inner.max_receive_segments()
    }

    fn may_fragment(&self) -> bool {
        self.inner.may_fragment()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies_by_leading_packet() {
        assert!(is_handshake_datagram(&[0xC3, 0, 0, 0, 1]));
        assert!(is_handshake_datagram(&[0xE0, 0, 0, 0, 1]));
        assert!(!is_handshake_datagram(&[0xD0, 0, 0, 0, 1]));
        assert!(is_handshake_datagram(&[0x80, 0, 0, 0, 0]));
        assert!(!is_handshake_datagram(&[0x40, 1, 2]));
        assert!(!is_handshake_datagram(&[]));
    }
}
