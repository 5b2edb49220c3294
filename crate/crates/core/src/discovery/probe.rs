//! Stateless QUIC capability probe.
//!
//! A long-header INITIAL with version 0 can never be accepted, so any QUIC
//! server must answer with Version Negotiation before creating state.

use std::net::SocketAddr;
use std::time::Duration;

use rand::{Rng, RngCore};
use tokio::net::UdpSocket;

use crate::transport::TransportError;

/// Minimum size of a datagram carrying an INITIAL packet.
pub const MIN_INITIAL_DATAGRAM: usize = 1200;
pub const PROBE_CID_LEN: usize = 8;

/// One probe datagram plus the connection IDs a genuine reply must echo.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub bytes: Vec<u8>,
    pub dcid: Vec<u8>,
    pub scid: Vec<u8>,
}

fn put_varint(out: &mut Vec<u8>, v: u64) {
    if v < 1 << 6 {
        out.push(v as u8);
    } else if v < 1 << 14 {
        out.extend_from_slice(&((v as u16) | 0x4000).to_be_bytes());
    } else {
        out.extend_from_slice(&((v as u32) | 0x8000_0000).to_be_bytes());
    }
}

/// Builds a padded INITIAL with version 0 and random connection IDs.
pub fn build_probe<R: RngCore>(rng: &mut R, size: usize) -> Probe {
    let size = size.max(MIN_INITIAL_DATAGRAM);
    let mut dcid = vec![0u8; PROBE_CID_LEN];
    let mut scid = vec![0u8; PROBE_CID_LEN];
    rng.fill_bytes(&mut dcid);
    rng.fill_bytes(&mut scid);

    let mut b = Vec::with_capacity(size);
    b.push(0xC3);
    b.extend_from_slice(&0u32.to_be_bytes());
    b.push(dcid.len() as u8);
    b.extend_from_slice(&dcid);
    b.push(scid.len() as u8);
    b.extend_from_slice(&scid);
    put_varint(&mut b, 0);
    // The length field covers the rest of the datagram.
    let remaining = size - b.len() - 2;
    put_varint(&mut b, remaining as u64);
    let start = b.len();
    b.resize(size, 0);
    rng.fill(&mut b[start..]);
    Probe {
        bytes: b,
        dcid,
        scid,
    }
}

/// Parses a Version Negotiation packet answering `probe`. Returns the
/// advertised versions, or `None` when the datagram is not a valid reply.
pub fn parse_version_negotiation(buf: &[u8], probe: &Probe) -> Option<Vec<u32>> {
    if buf.len() < 7 || buf[0] & 0x80 == 0 {
        return None;
    }
    if u32::from_be_bytes(buf[1..5].try_into().ok()?) != 0 {
        return None;
    }
    let mut pos = 5;
    let dlen = *buf.get(pos)? as usize;
    pos += 1;
    let dcid = buf.get(pos..pos + dlen)?;
    pos += dlen;
    let slen = *buf.get(pos)? as usize;
    pos += 1;
    let scid = buf.get(pos..pos + slen)?;
    pos += slen;
    if dcid != probe.scid.as_slice() || scid != probe.dcid.as_slice() {
        return None;
    }
    let rest = &buf[pos..];
    if rest.is_empty() || !rest.len().is_multiple_of(4) {
        return None;
    }
    Some(
        rest.chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeOutcome {
    VersionNegotiation(Vec<u32>),
    Timeout,
    /// An ICMP error surfaced through the socket.
    Unreachable(String),
}

impl ProbeOutcome {
    pub fn responded(&self) -> bool {
        matches!(self, ProbeOutcome::VersionNegotiation(_))
    }
}

/// Sends exactly one probe to `addr` and waits for a matching reply.
pub async fn probe_detailed(addr: SocketAddr, timeout: Duration) -> std::io::Result<ProbeOutcome> {
    let local: SocketAddr = if addr.is_ipv4() {
        "0.0.0.0:0".parse().unwrap()
    } else {
        "[::]:0".parse().unwrap()
    };
    let sock = UdpSocket::bind(local).await?;
    sock.connect(addr).await?;
    let probe = build_probe(&mut rand::thread_rng(), MIN_INITIAL_DATAGRAM);
    sock.send(&probe.bytes).await?;
    let mut buf = vec![0u8; 2048];
    let wait = async {
        loop {
            match sock.recv(&mut buf).await {
                Ok(n) => {
                    if let Some(v) = parse_version_negotiation(&buf[..n], &probe) {
                        return ProbeOutcome::VersionNegotiation(v);
                    }
                }
                Err(e) => return ProbeOutcome::Unreachable(e.to_string()),
            }
        }
    };
    let outcome = tokio::time::timeout(timeout, wait)
        .await
        .unwrap_or(ProbeOutcome::Timeout);
    match &outcome {
        ProbeOutcome::Timeout => tracing::debug!(%addr, "probe timed out"),
        ProbeOutcome::Unreachable(e) => tracing::debug!(%addr, error = %e, "probe unreachable"),
        ProbeOutcome::VersionNegotiation(_) => {}
    }
    Ok(outcome)
}

/// True iff `addr` answers a version-0 INITIAL with Version Negotiation.
pub async fn probe_version_negotiation(addr: SocketAddr, timeout: Duration) -> bool {
    matches!(probe_detailed(addr, timeout).await, Ok(o) if o.responded())
}

/// QUIC versions advertised by the server at `addr`.
pub async fn server_versions(
    addr: SocketAddr,
    timeout: Duration,
) -> Result<Vec<u32>, TransportError> {
    match probe_detailed(addr, timeout).await? {
        ProbeOutcome::VersionNegotiation(v) => Ok(v),
        ProbeOutcome::Timeout => Err(TransportError::Timeout),
        ProbeOutcome::Unreachable(e) => Err(TransportError::Unreachable(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn vn_reply(probe: &Probe, versions: &[u32]) -> Vec<u8> {
        let mut b = vec![0x80, 0, 0, 0, 0];
        b.push(probe.scid.len() as u8);
        b.extend_from_slice(&probe.scid);
        b.push(probe.dcid.len() as u8);
        b.extend_from_slice(&probe.dcid);
        for v in versions {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b
    }

    #[test]
    fn probe_layout() {
        let p = build_probe(&mut StdRng::seed_from_u64(7), 1200);
        assert_eq!(p.bytes.len(), 1200);
        assert_eq!(p.bytes[0] & 0xC0, 0xC0);
        assert_eq!(&p.bytes[1..5], &[0, 0, 0, 0]);
        assert_eq!(p.bytes[5] as usize, PROBE_CID_LEN);
        assert_eq!(&p.bytes[6..14], p.dcid.as_slice());
        // Length varint (2 bytes) then the padded remainder.
        let len_at = 6 + 8 + 1 + 8 + 1;
        let declared = u16::from_be_bytes([p.bytes[len_at], p.bytes[len_at + 1]]) & 0x3FFF;
        assert_eq!(declared as usize, 1200 - len_at - 2);
    }

    #[test]
    fn accepts_echoed_ids_only() {
        let p = build_probe(&mut StdRng::seed_from_u64(1), 1200);
        let good = vn_reply(&p, &[1, 0xff00_001d]);
        assert_eq!(
            parse_version_negotiation(&good, &p),
            Some(vec![1, 0xff00_001d])
        );
        let other = build_probe(&mut StdRng::seed_from_u64(2), 1200);
        assert_eq!(parse_version_negotiation(&vn_reply(&other, &[1]), &p), None);
        let mut bad_version = good.clone();
        bad_version[4] = 1;
        assert_eq!(parse_version_negotiation(&bad_version, &p), None);
        assert_eq!(parse_version_negotiation(&good[..good.len() - 1], &p), None);
    }

    proptest! {
        #[test]
        fn probes_are_always_padded(seed: u64, size in 0usize..1600) {
            let p = build_probe(&mut StdRng::seed_from_u64(seed), size);
            prop_assert!(p.bytes.len() >= MIN_INITIAL_DATAGRAM);
            prop_assert!(p.dcid.len() >= 8 && p.scid.len() >= 8);
        }
    }
}
