#![allow(dead_code)]

use std::time::Duration;

use doxbench::mock::{self, MockConfig, MockHandle};
use doxbench::session::SessionCache;
use doxbench::transport::{Client, ClientOptions, Target, Verification};
use doxbench::ProtocolKind;

pub async fn mock_with(config: MockConfig) -> MockHandle {
    mock::serve(config).await.expect("mock resolver starts")
}

/// A client trusting the mock's CA, with the TCP connect round-trip emulated
/// for the mock's one-way delay.
pub fn client_for(mock: &MockHandle, one_way: Duration) -> Client {
    client_with(mock, one_way, |_| {})
}

pub fn client_with(
    mock: &MockHandle,
    one_way: Duration,
    tweak: impl FnOnce(&mut ClientOptions),
) -> Client {
    let mut opts = ClientOptions {
        verification: Verification::Roots(vec![mock.ca_cert_der()]),
        timeout: Duration::from_secs(5),
        harvest_wait: Duration::from_millis(300),
        emulated_connect_rtt: (!one_way.is_zero()).then_some(one_way * 2),
        ..ClientOptions::default()
    };
    tweak(&mut opts);
    Client::new(opts, SessionCache::new()).expect("client builds")
}

pub fn target(mock: &MockHandle, p: ProtocolKind) -> Target {
    Target::new(mock.addr(p).expect("protocol enabled"))
}
