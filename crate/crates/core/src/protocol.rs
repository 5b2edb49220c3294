use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The five DNS transports under measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    DoUdp,
    DoTcp,
    DoT,
    DoH,
    DoQ,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 5] = [
        ProtocolKind::DoUdp,
        ProtocolKind::DoTcp,
        ProtocolKind::DoT,
        ProtocolKind::DoH,
        ProtocolKind::DoQ,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::DoUdp => "doudp",
            ProtocolKind::DoTcp => "dotcp",
            ProtocolKind::DoT => "dot",
            ProtocolKind::DoH => "doh",
            ProtocolKind::DoQ => "doq",
        }
    }

    pub fn default_port(self) -> u16 {
        match self {
            ProtocolKind::DoUdp | ProtocolKind::DoTcp => 53,
            ProtocolKind::DoT | ProtocolKind::DoQ => 853,
            ProtocolKind::DoH => 443,
        }
    }

    pub fn is_connection_oriented(self) -> bool {
        self != ProtocolKind::DoUdp
    }

    pub fn is_encrypted(self) -> bool {
        matches!(
            self,
            ProtocolKind::DoT | ProtocolKind::DoH | ProtocolKind::DoQ
        )
    }

    pub fn runs_over_tcp(self) -> bool {
        matches!(
            self,
            ProtocolKind::DoTcp | ProtocolKind::DoT | ProtocolKind::DoH
        )
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown protocol {0:?} (expected doudp, dotcp, dot, doh or doq)")]
pub struct UnknownProtocol(pub String);

impl FromStr for ProtocolKind {
    type Err = UnknownProtocol;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "doudp" | "udp" => Ok(ProtocolKind::DoUdp),
            "dotcp" | "tcp" => Ok(ProtocolKind::DoTcp),
            "dot" => Ok(ProtocolKind::DoT),
            "doh" => Ok(ProtocolKind::DoH),
            "doq" => Ok(ProtocolKind::DoQ),
            _ => Err(UnknownProtocol(s.to_string())),
        }
    }
}

/// Bitmap over [`ProtocolKind`]. Serialized as a list of protocol names.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ProtocolSet(u8);

impl ProtocolSet {
    pub const fn empty() -> Self {
        ProtocolSet(0)
    }

    pub fn all() -> Self {
        ProtocolKind::ALL.into_iter().collect()
    }

    pub fn insert(&mut self, p: ProtocolKind) {
        self.0 |= p.bit();
    }

    pub fn remove(&mut self, p: ProtocolKind) {
        self.0 &= !p.bit();
    }

    pub fn contains(&self, p: ProtocolKind) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn is_full(&self) -> bool {
        *self == Self::all()
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn bits(&self) -> u8 {
        self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = ProtocolKind> + '_ {
        ProtocolKind::ALL.into_iter().filter(|p| self.contains(*p))
    }

    /// Parses a comma-separated list such as `doudp,dotcp,doq`.
    pub fn parse_list(s: &str) -> Result<Self, UnknownProtocol> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect()
    }
}

impl FromIterator<ProtocolKind> for ProtocolSet {
    fn from_iter<I: IntoIterator<Item = ProtocolKind>>(iter: I) -> Self {
        let mut set = ProtocolSet::empty();
        for p in iter {
            set.insert(p);
        }
        set
    }
}

impl Serialize for ProtocolSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ProtocolSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v: Vec<ProtocolKind> = Vec::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_parses_and_serializes_as_names() {
        let set = ProtocolSet::parse_list("doq,doudp").unwrap();
        assert!(set.contains(ProtocolKind::DoQ));
        assert!(!set.contains(ProtocolKind::DoH));
        assert_eq!(serde_json::to_string(&set).unwrap(), r#"["doudp","doq"]"#);
        let back: ProtocolSet = serde_json::from_str(r#"["doq","doudp"]"#).unwrap();
        assert_eq!(back, set);
        assert!(ProtocolSet::parse_list("doq,http").is_err());
    }

    #[test]
    fn default_ports() {
        assert_eq!(ProtocolKind::DoUdp.default_port(), 53);
        assert_eq!(ProtocolKind::DoT.default_port(), 853);
        assert_eq!(ProtocolKind::DoH.default_port(), 443);
        assert_eq!(ProtocolKind::DoQ.default_port(), 853);
    }
}
