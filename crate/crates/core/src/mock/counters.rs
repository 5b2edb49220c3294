use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::protocol::ProtocolKind;

#[derive(Debug, Default)]
struct PerProtocol {
    connections_accepted: AtomicU64,
    datagrams_received: AtomicU64,
    queries_answered: AtomicU64,
    resumptions: AtomicU64,
    zero_rtt_accepts: AtomicU64,
}

/// Live counters of a running mock. All values only grow, except the open-connection gauge.
#[derive(Debug, Default)]
pub struct MockCounters {
    per: [PerProtocol; 5],
    open_connections: AtomicU64,
    peak_open_connections: AtomicU64,
}

fn idx(p: ProtocolKind) -> usize {
    p as usize
}

impl MockCounters {
    pub(crate) fn connection_accepted(&self, p: ProtocolKind) {
        self.per[idx(p)]
            .connections_accepted
            .fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn datagram_received(&self, p: ProtocolKind) {
        self.per[idx(p)]
            .datagrams_received
            .fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn query_answered(&self, p: ProtocolKind) {
        self.per[idx(p)]
            .queries_answered
            .fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn resumption(&self, p: ProtocolKind) {
        self.per[idx(p)].resumptions.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn zero_rtt_accept(&self, p: ProtocolKind) {
        self.per[idx(p)]
            .zero_rtt_accepts
            .fetch_add(1, Ordering::SeqCst);
    }

    /// Marks a connection open until the returned guard drops.
    pub(crate) fn open_guard(self: &std::sync::Arc<Self>) -> OpenGuard {
        let now = self.open_connections.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_open_connections.fetch_max(now, Ordering::SeqCst);
        OpenGuard(self.clone())
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        let mut per = Vec::new();
        for p in ProtocolKind::ALL {
            let c = &self.per[idx(p)];
            per.push(ProtocolCounters {
                protocol: p,
                connections_accepted: c.connections_accepted.load(Ordering::SeqCst),
                datagrams_received: c.datagrams_received.load(Ordering::SeqCst),
                queries_answered: c.queries_answered.load(Ordering::SeqCst),
                resumptions: c.resumptions.load(Ordering::SeqCst),
                zero_rtt_accepts: c.zero_rtt_accepts.load(Ordering::SeqCst),
            });
        }
        CounterSnapshot {
            per_protocol: per,
            open_connections: self.open_connections.load(Ordering::SeqCst),
            peak_open_connections: self.peak_open_connections.load(Ordering::SeqCst),
        }
    }
}

pub(crate) struct OpenGuard(std::sync::Arc<MockCounters>);

impl Drop for OpenGuard {
    fn drop(&mut self) {
        self.0.open_connections.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolCounters {
    pub protocol: ProtocolKind,
    pub connections_accepted: u64,
    pub datagrams_received: u64,
    pub queries_answered: u64,
    pub resumptions: u64,
    pub zero_rtt_accepts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub per_protocol: Vec<ProtocolCounters>,
    pub open_connections: u64,
    pub peak_open_connections: u64,
}

impl CounterSnapshot {
    pub fn get(&self, p: ProtocolKind) -> ProtocolCounters {
        self.per_protocol[idx(p)]
    }

    pub fn total_connections(&self) -> u64 {
        self.per_protocol
            .iter()
            .map(|c| c.connections_accepted)
            .sum()
    }

    /// True when nothing has happened yet.
    pub fn is_zero(&self) -> bool {
        self.peak_open_connections == 0
            && self.per_protocol.iter().all(|c| {
                c.connections_accepted == 0
                    && c.datagrams_received == 0
                    && c.queries_answered == 0
                    && c.resumptions == 0
                    && c.zero_rtt_accepts == 0
            })
    }
}
