//! One-way delay at the mock's I/O boundary.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt, DuplexStream};
use tokio::net::UdpSocket;
use tokio::sync::mpsc;
use tokio::time::Instant;

const PUMP_CHUNK: usize = 16 * 1024;

async fn pump<R, W>(mut src: R, mut dst: W, delay: Duration)
where
    R: AsyncRead + Unpin + Send + 'static,
    W: AsyncWrite + Unpin + Send + 'static,
{
    let (tx, mut rx) = mpsc::unbounded_channel::<(Instant, Bytes)>();
    let reader = tokio::spawn(async move {
        let mut buf = vec![0u8; PUMP_CHUNK];
        loop {
            match src.read(&mut buf).await {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if tx
                        .send((Instant::now() + delay, Bytes::copy_from_slice(&buf[..n])))
                        .is_err()
                    {
                        break;
                    }
                }
            }
        }
    });
    while let Some((release, chunk)) = rx.recv().await {
        tokio::time::sleep_until(release).await;
        if dst.write_all(&chunk).await.is_err() {
            break;
        }
    }
    let _ = dst.shutdown().await;
    reader.abort();
}

/// Interposes `delay` on both directions of `io`. The returned stream is
/// what the server reads from and writes to.
pub fn delayed<S>(io: S, delay: Duration) -> DuplexStream
where
    S: AsyncRead + AsyncWrite + Unpin + Send + 'static,
{
    let (near, far) = tokio::io::duplex(256 * 1024);
    let (io_r, io_w) = tokio::io::split(io);
    let (far_r, far_w) = tokio::io::split(far);
    tokio::spawn(pump(io_r, far_w, delay));
    tokio::spawn(pump(far_r, io_w, delay));
    near
}

/// Sends datagrams on `socket` after a fixed delay, preserving order.
#[derive(Clone)]
pub struct DelayedSender {
    tx: mpsc::UnboundedSender<(Instant, Bytes, SocketAddr)>,
    delay: Duration,
}

impl DelayedSender {
    pub fn spawn(socket: Arc<UdpSocket>, delay: Duration) -> Self {
        let (tx, mut rx) = mpsc::unbounded_channel::<(Instant, Bytes, SocketAddr)>();
        tokio::spawn(async move {
            while let Some((release, data, to)) = rx.recv().await {
                tokio::time::sleep_until(release).await;
                let _ = socket.send_to(&data, to).await;
            }
        });
        Self { tx, delay }
    }

    pub fn send(&self, data: Bytes, to: SocketAddr) {
        let _ = self.tx.send((Instant::now() + self.delay, data, to));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn delays_each_direction() {
        let (client, server_side) = tokio::io::duplex(1024);
        let mut server = delayed(server_side, Duration::from_millis(30));
        let (mut cr, mut cw) = tokio::io::split(client);
        let start = Instant::now();
        cw.write_all(b"ping").await.unwrap();
        let mut buf = [0u8; 4];
        server.read_exact(&mut buf).await.unwrap();
        let one_way = start.elapsed();
        server.write_all(b"pong").await.unwrap();
        cr.read_exact(&mut buf).await.unwrap();
        let rtt = start.elapsed();
        assert_eq!(&buf, b"pong");
        assert!(
            one_way >= Duration::from_millis(30) && one_way < Duration::from_millis(60),
            "{one_way:?}"
        );
        assert!(
            rtt >= Duration::from_millis(60) && rtt < Duration::from_millis(100),
            "{rtt:?}"
        );
    }
}
