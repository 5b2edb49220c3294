//! Analytic page-load model: every exchange costs whole round-trips.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expectation::{expected_handshake_rtts, ExpectationInput, TlsVersion};
use crate::protocol::ProtocolKind;
use crate::transport::{RetransmitPolicy, TimingBreakdown};

/// Initial retransmission timeout for a lost first packet of a TCP or QUIC connection.
pub const INITIAL_RTO_MS: f64 = 1000.0;

/// Probe timeout on an established connection, in round-trips.
pub const ESTABLISHED_PTO_RTTS: f64 = 3.0;

/// Each query's first datagram is lost with `probability`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub probability: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticNetwork {
    pub rtt_ms: f64,
    /// The measured navigation reuses state from a warm one.
    pub resumed: bool,
    pub tls_version: TlsVersion,
    pub zero_rtt: bool,
    pub loss: Option<LossModel>,
}

impl AnalyticNetwork {
    pub fn new(rtt_ms: f64) -> Self {
        Self {
            rtt_ms,
            resumed: true,
            tls_version: TlsVersion::Tls13,
            zero_rtt: false,
            loss: None,
        }
    }

    pub fn with_loss(mut self, probability: f64, seed: u64) -> Self {
        self.loss = Some(LossModel { probability, seed });
        self
    }

    pub fn cold(mut self) -> Self {
        self.resumed = false;
        self
    }

    fn expectation(&self, p: ProtocolKind) -> ExpectationInput {
        let base = if self.resumed {
            ExpectationInput::resumed(p)
        } else {
            ExpectationInput::fresh(p)
        };
        let base = if matches!(p, ProtocolKind::DoT | ProtocolKind::DoH) {
            base.with_tls(self.tls_version)
        } else {
            base
        };
        if self.zero_rtt && self.resumed && p == ProtocolKind::DoQ {
            base.with_zero_rtt()
        } else {
            base
        }
    }

    /// Setup time of one connection for `p`.
    pub fn handshake_ms(&self, p: ProtocolKind) -> f64 {
        self.rtt_ms * expected_handshake_rtts(&self.expectation(p)).as_f64()
    }
}

pub(super) struct ModelRun {
    pub per_query: Vec<TimingBreakdown>,
    pub connections_opened: u32,
    pub resumed_count: u32,
    pub lost: Vec<bool>,
}

/// Extra delay when the first datagram of a query is lost.
fn loss_penalty(p: ProtocolKind, opens_connection: bool, rtt_ms: f64) -> f64 {
    match p {
        ProtocolKind::DoUdp => {
            let policy = RetransmitPolicy::resolver_default();
            policy.retry_after.as_secs_f64() * 1000.0
        }
        _ if opens_connection => INITIAL_RTO_MS,
        _ => ESTABLISHED_PTO_RTTS * rtt_ms,
    }
}

pub(super) fn run<R: Rng>(
    net: &AnalyticNetwork,
    p: ProtocolKind,
    k: usize,
    rng: &mut R,
) -> ModelRun {
    let r = net.rtt_ms;
    let reuse = matches!(p, ProtocolKind::DoT | ProtocolKind::DoH | ProtocolKind::DoQ);
    let mut per_query = Vec::with_capacity(k);
    let mut lost = Vec::with_capacity(k);
    for i in 0..k {
        let opens = match p {
            ProtocolKind::DoUdp => false,
            ProtocolKind::DoTcp => true,
            _ => i == 0,
        };
        let dropped = net
            .loss
            .is_some_and(|l| rng.gen_bool(l.probability.clamp(0.0, 1.0)));
        let penalty = if dropped {
            loss_penalty(p, opens, r)
        } else {
            0.0
        };
        // A lost opening packet stalls the handshake; any other loss stalls the answer.
        let handshake = opens.then(|| net.handshake_ms(p) + penalty);
        let resolve = if opens { r } else { r + penalty };
        per_query.push(TimingBreakdown {
            handshake_ms: handshake,
            resolve_ms: resolve,
            e2e_ms: handshake.unwrap_or(0.0) + resolve,
        });
        lost.push(dropped);
    }
    let connections_opened = match p {
        ProtocolKind::DoUdp => 0,
        ProtocolKind::DoTcp => k as u32,
        _ => 1,
    };
    let resumed_count = if reuse && net.resumed { 1 } else { 0 };
    ModelRun {
        per_query,
        connections_opened,
        resumed_count,
        lost,
    }
}
