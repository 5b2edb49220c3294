use std::net::IpAddr;
use std::path::Path;

use ipnet::IpNet;

#[derive(Debug, thiserror::Error)]
pub enum BlocklistError {
    #[error("line {line}: {text:?} is neither an address nor a CIDR prefix")]
    Parse { line: usize, text: String },
    #[error("reading blocklist: {0}")]
    Io(#[from] std::io::Error),
}

/// Address ranges that must never be contacted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Blocklist {
    nets: Vec<IpNet>,
}

impl Blocklist {
    /// One CIDR or bare address per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, BlocklistError> {
        let mut nets = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let entry = raw.split('#').next().unwrap_or("").trim();
            if entry.is_empty() {
                continue;
            }
            let net = entry
                .parse::<IpNet>()
                .or_else(|_| entry.parse::<IpAddr>().map(IpNet::from))
                .map_err(|_| BlocklistError::Parse {
                    line: i + 1,
                    text: entry.to_string(),
                })?;
            nets.push(net);
        }
        Ok(Self { nets })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BlocklistError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn push(&mut self, net: IpNet) {
        self.nets.push(net);
    }

    pub fn contains(&self, ip: IpAddr) -> bool {
        let ip = match ip {
            IpAddr::V6(v6) => v6.to_ipv4_mapped().map(IpAddr::V4).unwrap_or(ip),
            v4 => v4,
        };
        self.nets.iter().any(|n| n.contains(&ip))
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_cidrs_addresses_and_comments() {
        let bl =
            Blocklist::parse("# header\n10.0.0.0/8\n192.0.2.7  # single host\n\n2001:db8::/32\n")
                .unwrap();
        assert_eq!(bl.len(), 3);
        assert!(bl.contains("10.1.2.3".parse().unwrap()));
        assert!(bl.contains("192.0.2.7".parse().unwrap()));
        assert!(!bl.contains("192.0.2.8".parse().unwrap()));
        assert!(bl.contains("2001:db8::1".parse().unwrap()));
        assert!(bl.contains("::ffff:10.9.9.9".parse().unwrap()));
    }

    #[test]
    fn reports_bad_lines() {
        let err = Blocklist::parse("10.0.0.0/8\nnot-an-ip\n").unwrap_err();
        assert!(matches!(err, BlocklistError::Parse { line: 2, .. }));
    }
}
