use doxbench::expectation::{
    amplification_limited, expected_handshake_rtts, ExpectationInput, TlsVersion,
};
use doxbench::ProtocolKind;

fn main() {
    println!(
        "{:<6} {:>6} {:>8} {:>6}",
        "proto", "fresh", "resumed", "0-rtt"
    );
    for p in ProtocolKind::ALL {
        let fresh = expected_handshake_rtts(&ExpectationInput::fresh(p));
        let resumed = expected_handshake_rtts(&ExpectationInput::resumed(p));
        let zero = match p {
            ProtocolKind::DoQ | ProtocolKind::DoT | ProtocolKind::DoH => {
                expected_handshake_rtts(&ExpectationInput::resumed(p).with_zero_rtt()).to_string()
            }
            _ => "-".into(),
        };
        println!("{:<6} {:>6} {:>8} {:>6}", p.as_str(), fresh, resumed, zero);
    }

    let tls12 = ExpectationInput::fresh(ProtocolKind::DoH).with_tls(TlsVersion::Tls12);
    println!(
        "DoH over TLS 1.2: {} round-trips",
        expected_handshake_rtts(&tls12)
    );

    // A server flight above three times the client's Initial costs DoQ a round-trip.
    for cert in [3000, 3600, 3601, 6000] {
        let x = ExpectationInput::fresh(ProtocolKind::DoQ).with_flights(cert, 1200);
        println!(
            "DoQ, {cert} B server flight: limited={} rtts={}",
            amplification_limited(1200, cert),
            expected_handshake_rtts(&x)
        );
    }
}
