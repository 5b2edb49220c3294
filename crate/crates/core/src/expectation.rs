//! Closed-form model of handshake round-trips.
//!
//! The model counts the round-trips a client waits for before its
//! (encrypted) session is usable, from the first handshake packet onwards:
//!
//! | protocol | fresh | resumed | 0-RTT |
//! |----------|-------|---------|-------|
//! | DoUDP    | 0     | 0       | 0     |
//! | DoTCP    | 1     | 1       | n/a   |
//! | DoQ      | 1 (+1 when the server's first flight exceeds the anti-amplification allowance) | 1 | 0 |
//! | DoT/DoH  | 2 with TLS 1.3, 3 with TLS 1.2 | same | one less |
//!
//! TCP Fast Open saves half a round-trip on any TCP-based protocol. Counts are
//! kept in half round-trips so fractional cases stay exact.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::protocol::ProtocolKind;

/// Factor by which an unvalidated QUIC server may exceed the bytes it has received.
pub const AMPLIFICATION_FACTOR: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TlsVersion {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "1.2")]
    Tls12,
    #[serde(rename = "1.3")]
    Tls13,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpectationInput {
    pub protocol: ProtocolKind,
    pub tls_version: TlsVersion,
    pub resumed: bool,
    pub zero_rtt: bool,
    pub tfo: bool,
    pub cert_flight_bytes: u64,
    pub client_initial_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvalidExpectation {
    #[error("0-RTT requires a resumed TLS 1.3 session")]
    ZeroRttWithoutResumption,
    #[error("{0} does not use TLS")]
    UnexpectedTls(ProtocolKind),
    #[error("{0} requires a TLS version")]
    MissingTls(ProtocolKind),
    #[error("QUIC mandates TLS 1.3")]
    QuicWithoutTls13,
}

impl ExpectationInput {
    /// A fresh handshake with the protocol's natural TLS setting (1.3 where TLS applies).
    pub fn fresh(protocol: ProtocolKind) -> Self {
        Self {
            protocol,
            tls_version: if protocol.is_encrypted() {
                TlsVersion::Tls13
            } else {
                TlsVersion::None
            },
            resumed: false,
            zero_rtt: false,
            tfo: false,
            cert_flight_bytes: 0,
            client_initial_bytes: 1200,
        }
    }

    pub fn resumed(protocol: ProtocolKind) -> Self {
        Self {
            resumed: true,
            ..Self::fresh(protocol)
        }
    }

    pub fn with_tls(mut self, v: TlsVersion) -> Self {
        self.tls_version = v;
        self
    }

    pub fn with_zero_rtt(mut self) -> Self {
        self.resumed = true;
        self.zero_rtt = true;
        self
    }

    pub fn with_flights(mut self, cert_flight_bytes: u64, client_initial_bytes: u64) -> Self {
        self.cert_flight_bytes = cert_flight_bytes;
        self.client_initial_bytes = client_initial_bytes;
        self
    }

    pub fn validate(&self) -> Result<(), InvalidExpectation> {
        if self.zero_rtt && !(self.resumed && self.tls_version == TlsVersion::Tls13) {
            return Err(InvalidExpectation::ZeroRttWithoutResumption);
        }
        match self.protocol {
            ProtocolKind::DoUdp | ProtocolKind::DoTcp if self.tls_version != TlsVersion::None => {
                Err(InvalidExpectation::UnexpectedTls(self.protocol))
            }
            ProtocolKind::DoT | ProtocolKind::DoH if self.tls_version == TlsVersion::None => {
                Err(InvalidExpectation::MissingTls(self.protocol))
            }
            ProtocolKind::DoQ if self.tls_version != TlsVersion::Tls13 => {
                Err(InvalidExpectation::QuicWithoutTls13)
            }
            _ => Ok(()),
        }
    }
}

/// A round-trip count in half-RTT steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct RoundTrips {
    halves: u32,
}

impl RoundTrips {
    pub const ZERO: RoundTrips = RoundTrips { halves: 0 };

    pub const fn whole(n: u32) -> Self {
        RoundTrips { halves: 2 * n }
    }

    pub const fn from_halves(halves: u32) -> Self {
        RoundTrips { halves }
    }

    pub fn halves(self) -> u32 {
        self.halves
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.halves) / 2.0
    }

    fn saturating_sub(self, other: RoundTrips) -> RoundTrips {
        RoundTrips {
            halves: self.halves.saturating_sub(other.halves),
        }
    }
}

impl std::ops::Add for RoundTrips {
    type Output = RoundTrips;
    fn add(self, rhs: RoundTrips) -> RoundTrips {
        RoundTrips {
            halves: self.halves + rhs.halves,
        }
    }
}

impl fmt::Display for RoundTrips {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.halves.is_multiple_of(2) {
            f.pad(&(self.halves / 2).to_string())
        } else {
            f.pad(&format!("{}.5", self.halves / 2))
        }
    }
}

/// True iff the server's first flight does not fit in the allowance an
/// unvalidated QUIC server has, i.e. strictly more than three times what it
/// received. Sending exactly three times is allowed.
pub fn amplification_limited(client_initial_bytes: u64, server_flight_bytes: u64) -> bool {
    server_flight_bytes > AMPLIFICATION_FACTOR.saturating_mul(client_initial_bytes)
}

pub fn expected_handshake_rtts(x: &ExpectationInput) -> RoundTrips {
    debug_assert!(x.validate().is_ok(), "invalid expectation input: {x:?}");
    let tfo_saving = if x.tfo {
        RoundTrips::from_halves(1)
    } else {
        RoundTrips::ZERO
    };
    match x.protocol {
        ProtocolKind::DoUdp => RoundTrips::ZERO,
        ProtocolKind::DoTcp => RoundTrips::whole(1).saturating_sub(tfo_saving),
        ProtocolKind::DoQ => {
            if x.zero_rtt {
                RoundTrips::ZERO
            } else if !x.resumed
                && amplification_limited(x.client_initial_bytes, x.cert_flight_bytes)
            {
                RoundTrips::whole(2)
            } else {
                RoundTrips::whole(1)
            }
        }
        ProtocolKind::DoT | ProtocolKind::DoH => {
            let tls = match x.tls_version {
                TlsVersion::Tls12 => RoundTrips::whole(2),
                _ => RoundTrips::whole(1),
            };
            let total = (RoundTrips::whole(1) + tls).saturating_sub(tfo_saving);
            if x.zero_rtt {
                total.saturating_sub(RoundTrips::whole(1))
            } else {
                total
            }
        }
    }
}

pub fn predict_handshake_ms(rtt_ms: f64, x: &ExpectationInput) -> f64 {
    rtt_ms * expected_handshake_rtts(x).as_f64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ProtocolKind::*;

    #[test]
    fn table_of_round_trips() {
        assert_eq!(
            expected_handshake_rtts(&ExpectationInput::resumed(DoQ)),
            RoundTrips::whole(1)
        );
        assert_eq!(
            expected_handshake_rtts(&ExpectationInput::fresh(DoH).with_tls(TlsVersion::Tls12)),
            RoundTrips::whole(3)
        );
        assert_eq!(
            expected_handshake_rtts(&ExpectationInput::fresh(DoUdp)),
            RoundTrips::ZERO
        );
        assert_eq!(
            expected_handshake_rtts(&ExpectationInput::fresh(DoQ).with_flights(4000, 1200)),
            RoundTrips::whole(2)
        );
        assert_eq!(
            expected_handshake_rtts(&ExpectationInput::fresh(DoTcp)),
            RoundTrips::whole(1)
        );
        assert_eq!(
            expected_handshake_rtts(&ExpectationInput::fresh(DoT)),
            RoundTrips::whole(2)
        );
        assert_eq!(
            expected_handshake_rtts(&ExpectationInput::fresh(DoT).with_zero_rtt()),
            RoundTrips::whole(1)
        );
        assert_eq!(
            expected_handshake_rtts(&ExpectationInput::fresh(DoQ).with_zero_rtt()),
            RoundTrips::ZERO
        );
    }

    #[test]
    fn tfo_saves_half_a_round_trip() {
        let mut x = ExpectationInput::fresh(DoTcp);
        x.tfo = true;
        assert_eq!(expected_handshake_rtts(&x), RoundTrips::from_halves(1));
        assert_eq!(expected_handshake_rtts(&x).to_string(), "0.5");
    }

    #[test]
    fn amplification_boundary() {
        assert!(!amplification_limited(1200, 3600));
        assert!(amplification_limited(1200, 3601));
        assert!(!amplification_limited(2564, 1304));
    }

    #[test]
    fn resumption_bypasses_amplification() {
        let x = ExpectationInput::resumed(DoQ).with_flights(10_000, 1200);
        assert_eq!(expected_handshake_rtts(&x), RoundTrips::whole(1));
    }

    #[test]
    fn predictions() {
        assert_eq!(
            predict_handshake_ms(50.0, &ExpectationInput::resumed(DoQ)),
            50.0
        );
        assert_eq!(
            predict_handshake_ms(50.0, &ExpectationInput::fresh(DoT)),
            100.0
        );
        let doq = predict_handshake_ms(187.0, &ExpectationInput::fresh(DoQ));
        let doh = predict_handshake_ms(188.0, &ExpectationInput::fresh(DoH));
        assert_eq!(doq, 187.0);
        assert_eq!(doh, 376.0);
    }

    #[test]
    fn validation() {
        let mut x = ExpectationInput::fresh(DoQ);
        x.zero_rtt = true;
        assert_eq!(
            x.validate(),
            Err(InvalidExpectation::ZeroRttWithoutResumption)
        );
        assert!(ExpectationInput::fresh(DoTcp)
            .with_tls(TlsVersion::Tls13)
            .validate()
            .is_err());
        assert!(ExpectationInput::fresh(DoQ)
            .with_tls(TlsVersion::Tls12)
            .validate()
            .is_err());
        assert!(ExpectationInput::fresh(DoH)
            .with_tls(TlsVersion::None)
            .validate()
            .is_err());
    }

    #[test]
    fn roughly_half_relationship() {
        let one = RoundTrips::whole(1);
        let two = RoundTrips::whole(2);
        assert_eq!(
            expected_handshake_rtts(&ExpectationInput::resumed(DoQ)),
            one
        );
        assert_eq!(
            expected_handshake_rtts(&ExpectationInput::fresh(DoTcp)),
            one
        );
        assert_eq!(expected_handshake_rtts(&ExpectationInput::fresh(DoT)), two);
        assert_eq!(expected_handshake_rtts(&ExpectationInput::fresh(DoH)), two);
    }

    fn any_protocol() -> impl Strategy<Value = ProtocolKind> {
        prop::sample::select(ProtocolKind::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn zero_rtt_le_resumed_le_fresh(
            p in any_protocol(),
            tls12 in any::<bool>(),
            tfo in any::<bool>(),
            cert in 0u64..20_000,
            initial in 0u64..5_000,
        ) {
            let mut fresh = ExpectationInput::fresh(p).with_flights(cert, initial);
            fresh.tfo = tfo && p.runs_over_tcp();
            if tls12 && matches!(p, DoT | DoH) {
                fresh = fresh.with_tls(TlsVersion::Tls12);
            }
            let resumed = ExpectationInput { resumed: true, ..fresh };
            let f = expected_handshake_rtts(&fresh);
            let r = expected_handshake_rtts(&resumed);
            prop_assert!(r <= f);
            if resumed.tls_version == TlsVersion::Tls13 {
                let z = expected_handshake_rtts(&ExpectationInput { zero_rtt: true, ..resumed });
                prop_assert!(z <= r);
            }
        }

        #[test]
        fn amplification_monotonicity(initial in 0u64..10_000, flight in 0u64..40_000, d in 0u64..1000) {
            if amplification_limited(initial, flight) {
                prop_assert!(amplification_limited(initial, flight + d));
            }
            if amplification_limited(initial + d, flight) {
                prop_assert!(amplification_limited(initial, flight));
            }
        }
    }
}
