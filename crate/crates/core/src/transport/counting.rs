use std::io;
use std::pin::Pin;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::task::{Context, Poll};

use tokio::io::{AsyncRead, AsyncWrite, ReadBuf};

/// Byte and PDU counters for one transport connection.
#[derive(Debug, Default)]
pub struct IoCounters {
    tx_bytes: AtomicU64,
    rx_bytes: AtomicU64,
    tx_pdus: AtomicU64,
    rx_pdus: AtomicU64,
}

impl IoCounters {
    pub fn snapshot(&self) -> IoSnapshot {
        IoSnapshot {
            tx_bytes: self.tx_bytes.load(Ordering::SeqCst),
            rx_bytes: self.rx_bytes.load(Ordering::SeqCst),
            tx_pdus: self.tx_pdus.load(Ordering::SeqCst),
            rx_pdus: self.rx_pdus.load(Ordering::SeqCst),
        }
    }

    pub fn record_tx(&self, n: usize) {
        if n > 0 {
            self.tx_bytes.fetch_add(n as u64, Ordering::SeqCst);
            self.tx_pdus.fetch_add(1, Ordering::SeqCst);
        }
    }

    pub fn record_rx(&self, n: usize) {
        if n > 0 {
            self.rx_bytes.fetch_add(n as u64, Ordering::SeqCst);
            self.rx_pdus.fetch_add(1, Ordering::SeqCst);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoSnapshot {
    pub tx_bytes: u64,
    pub rx_bytes: u64,
    /// Write or datagram-send calls; a stand-in for segments on stream sockets.
    pub tx_pdus: u64,
    pub rx_pdus: u64,
}

impl IoSnapshot {
    pub fn since(&self, earlier: &IoSnapshot) -> IoSnapshot {
        IoSnapshot {
            tx_bytes: self.tx_bytes.saturating_sub(earlier.tx_bytes),
            rx_bytes: self.rx_bytes.saturating_sub(earlier.rx_bytes),
            tx_pdus: self.tx_pdus.saturating_sub(earlier.tx_pdus),
            rx_pdus: self.rx_pdus.saturating_sub(earlier.rx_pdus),
        }
    }
}

/// Wraps a byte stream and counts what crosses it.
#[derive(Debug)]
pub struct CountingStream<S> {
    inner: S,
    counters: Arc<IoCounters>,
}

impl<S> CountingStream<S> {
    pub fn new(inner: S) -> (Self, Arc<IoCounters>) {
        let counters = Arc::new(IoCounters::default());
        (
            Self {
                inner,
                counters: counters.clone(),
            },
            counters,
        )
    }

    pub fn get_ref(&self) -> &S {
        &self.inner
    }
}

impl<S: AsyncRead + Unpin> AsyncRead for CountingStream<S> {
    fn poll_read(
        mut self: Pin<&mut Self>,
        cx: &mut Context<'_>,
        buf: &mut ReadBuf<'_>,
    ) -> Poll<io::Result<()>> {
        let before = buf.filled().len();
        let res = Pin::new(&mut self.inner).poll_read(cx, buf);
        if let Poll::Ready(Ok(())) = res {
            self.counters.record_rx(buf.filled().len() - before);
        }
        res
    }
}

impl<S: AsyncWrite + Unpin> AsyncWrite for CountingStream<S> {
    fn poll_write(
        mut self: Pin<&mut Self>,
        cx: &mut Context<'_>,
        data: &[u8],
    ) -> Poll<io::Result<usize>> {
        let res = Pin::new(&mut self.inner).poll_write(cx, data);
        if let Poll::Ready(Ok(n)) = res {
            self.counters.record_tx(n);
        }
        res
    }

    fn poll_flush(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<io::Result<()>> {
        Pin::new(&mut self.inner).poll_flush(cx)
    }

    fn poll_shutdown(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<io::Result<()>> {
        Pin::new(&mut self.inner).poll_shutdown(cx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    #[tokio::test]
    async fn counts_both_directions_monotonically() {
        let (a, mut b) = tokio::io::duplex(64);
        let (mut counted, counters) = CountingStream::new(a);
        counted.write_all(b"hello").await.unwrap();
        let first = counters.snapshot();
        b.write_all(b"abc").await.unwrap();
        let mut buf = [0u8; 3];
        counted.read_exact(&mut buf).await.unwrap();
        let second = counters.snapshot();
        assert_eq!(first.tx_bytes, 5);
        assert_eq!(second.rx_bytes, 3);
        assert!(second.tx_bytes >= first.tx_bytes);
        assert_eq!(second.since(&first).rx_bytes, 3);
    }
}
