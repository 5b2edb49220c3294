//! Measure DNS over UDP, TCP, TLS, HTTPS and QUIC side by side.
//!
//! The crate bundles measurement clients for all five transports, a hermetic
//! mock resolver, DoQ discovery, a campaign runner writing JSONL records, a
//! page-load simulator and the analysis that turns records into tables and CDFs.

pub mod analysis;
pub mod codec;
pub mod discovery;
pub mod expectation;
pub mod mock;
pub mod orchestrator;
pub mod pagesim;
pub mod protocol;
pub mod session;
pub mod transport;

pub use protocol::{ProtocolKind, ProtocolSet};
