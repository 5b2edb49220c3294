use std::collections::HashMap;
use std::net::Ipv4Addr;
use std::path::Path;

use crate::codec::{self, RCODE_NOERROR, RCODE_NXDOMAIN, TYPE_A};

const RCODE_FORMERR: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ZoneError {
    #[error("line {line}: expected `<qname> <ipv4> [ttl]`, got {text:?}")]
    Parse { line: usize, text: String },
    #[error("reading zone file: {0}")]
    Io(#[from] std::io::Error),
}

/// Static map of names to A records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Zone {
    records: HashMap<String, (Ipv4Addr, u32)>,
}

fn normalize(name: &str) -> String {
    name.trim().trim_end_matches('.').to_ascii_lowercase()
}

impl Zone {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qname: &str, addr: Ipv4Addr, ttl: u32) {
        self.records.insert(normalize(qname), (addr, ttl));
    }

    pub fn with(mut self, qname: &str, addr: Ipv4Addr, ttl: u32) -> Self {
        self.insert(qname, addr, ttl);
        self
    }

    pub fn lookup(&self, qname: &str) -> Option<(Ipv4Addr, u32)> {
        self.records.get(&normalize(qname)).copied()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Parses `qname address [ttl]` lines; `#` starts a comment and ttl defaults to 300.
    pub fn parse(text: &str) -> Result<Self, ZoneError> {
        let mut zone = Zone::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = || ZoneError::Parse {
                line: i + 1,
                text: line.to_string(),
            };
            let mut parts = line.split_whitespace();
            let name = parts.next().ok_or_else(err)?;
            let addr: Ipv4Addr = parts.next().ok_or_else(err)?.parse().map_err(|_| err())?;
            let ttl = match parts.next() {
                Some(t) => t.parse().map_err(|_| err())?,
                None => 300,
            };
            if parts.next().is_some() {
                return Err(err());
            }
            zone.insert(name, addr, ttl);
        }
        Ok(zone)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ZoneError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Builds the wire response for a raw query, or `None` if it is too short to answer.
    pub fn answer(&self, query: &[u8]) -> Option<Vec<u8>> {
        let parsed = match codec::parse_query(query) {
            Ok(p) => p,
            Err(_) => {
                let id = codec::message_id(query)?;
                let mut resp = vec![0u8; codec::HEADER_LEN];
                resp[..2].copy_from_slice(&id.to_be_bytes());
                resp[2] = 0x80;
                resp[3] = RCODE_FORMERR;
                return Some(resp);
            }
        };
        Some(match self.lookup(&parsed.qname) {
            None => codec::encode_response(&parsed, RCODE_NXDOMAIN, &[]),
            Some((addr, ttl)) if parsed.qtype == TYPE_A => codec::encode_response(
                &parsed,
                RCODE_NOERROR,
                &[(TYPE_A, ttl, addr.octets().to_vec())],
            ),
            Some(_) => codec::encode_response(&parsed, RCODE_NOERROR, &[]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode_response, encode_query, DnsQuery};

    #[test]
    fn parses_zone_text() {
        let z = Zone::parse("# zone\ngoogle.com 142.250.1.1 60\nExample.ORG. 192.0.2.1\n").unwrap();
        assert_eq!(
            z.lookup("GOOGLE.com"),
            Some(("142.250.1.1".parse().unwrap(), 60))
        );
        assert_eq!(
            z.lookup("example.org"),
            Some(("192.0.2.1".parse().unwrap(), 300))
        );
        assert!(Zone::parse("x.example not-an-ip").is_err());
    }

    #[test]
    fn answers_known_and_unknown_names() {
        let z = Zone::new().with("google.com", Ipv4Addr::new(142, 250, 1, 1), 60);
        let q = encode_query(&DnsQuery::a("google.com").with_id(9)).unwrap();
        let r = decode_response(&z.answer(&q).unwrap()).unwrap();
        assert_eq!(r.id, 9);
        assert_eq!(r.rcode, 0);
        assert_eq!(r.answers[0].rdata, vec![142, 250, 1, 1]);
        let q = encode_query(&DnsQuery::a("missing.example")).unwrap();
        assert_eq!(decode_response(&z.answer(&q).unwrap()).unwrap().rcode, 3);
        assert!(z.answer(&[1]).is_none());
    }
}
