//! Per-resolver cache of reusable session state: TLS 1.3 tickets, QUIC
//! address-validation tokens, the negotiated QUIC version and DoQ ALPN.
//!
//! The cache plugs into rustls through [`ClientSessionStore`] and into quinn
//! through [`TokenStore`]. Each connection gets its own adapter bound to one
//! [`SessionKey`], so state never leaks across resolvers or protocols.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime};

use bytes::Bytes;
use rustls::client::{ClientSessionStore, Tls12ClientSessionValue, Tls13ClientSessionValue};
use rustls::pki_types::ServerName;
use rustls::NamedGroup;

use crate::protocol::ProtocolKind;

/// Upper bound on a TLS 1.3 ticket lifetime (seven days).
pub const MAX_TICKET_LIFETIME_S: u32 = 604_800;

const MAX_TICKETS_PER_KEY: usize = 4;

pub trait Clock: Send + Sync + fmt::Debug {
    fn now(&self) -> SystemTime;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> SystemTime {
        SystemTime::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock {
    now: Mutex<SystemTime>,
}

impl ManualClock {
    pub fn new(start: SystemTime) -> Self {
        Self {
            now: Mutex::new(start),
        }
    }

    pub fn advance(&self, by: Duration) {
        *self.now.lock().unwrap() += by;
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new(SystemTime::now())
    }
}

impl Clock for ManualClock {
    fn now(&self) -> SystemTime {
        *self.now.lock().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SessionKey {
    pub addr: SocketAddr,
    pub protocol: ProtocolKind,
}

impl SessionKey {
    pub fn new(addr: SocketAddr, protocol: ProtocolKind) -> Self {
        Self { addr, protocol }
    }
}

#[derive(Debug)]
struct StoredTicket {
    value: Tls13ClientSessionValue,
    issued: SystemTime,
    lifetime_s: u32,
}

impl StoredTicket {
    fn valid_at(&self, now: SystemTime) -> bool {
        now < self.issued + Duration::from_secs(u64::from(self.lifetime_s))
    }
}

/// Public view of a cached ticket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TicketInfo {
    pub issued: SystemTime,
    pub lifetime_s: u32,
    pub max_early_data_size: u32,
}

#[derive(Debug, Default)]
struct SessionState {
    tickets: VecDeque<StoredTicket>,
    /// TLS 1.2 session and when it was stored; kept for at most the maximum ticket lifetime.
    tls12: Option<(SystemTime, Tls12ClientSessionValue)>,
    kx_hint: Option<NamedGroup>,
    quic_token: Option<Bytes>,
    quic_version: Option<u32>,
    doq_alpn: Option<String>,
}

impl SessionState {
    fn prune(&mut self, now: SystemTime) {
        self.tickets.retain(|t| t.valid_at(now));
        if !self.tls12_valid(now) {
            self.tls12 = None;
        }
    }

    fn tls12_valid(&self, now: SystemTime) -> bool {
        self.tls12.as_ref().is_some_and(|(at, _)| {
            now < *at + Duration::from_secs(u64::from(MAX_TICKET_LIFETIME_S))
        })
    }
}

/// Shared, thread-safe session cache.
#[derive(Debug, Clone)]
pub struct SessionCache {
    inner: Arc<Mutex<HashMap<SessionKey, SessionState>>>,
    clock: Arc<dyn Clock>,
}

impl Default for SessionCache {
    fn default() -> Self {
        Self::new()
    }
}

impl SessionCache {
    pub fn new() -> Self {
        Self::with_clock(Arc::new(SystemClock))
    }

    pub fn with_clock(clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: Arc::default(),
            clock,
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn with_state<R>(&self, key: &SessionKey, f: impl FnOnce(&mut SessionState) -> R) -> R {
        let mut map = self.inner.lock().unwrap();
        f(map.entry(*key).or_default())
    }

    /// Drops everything cached for `key`.
    pub fn clear(&self, key: &SessionKey) {
        self.inner.lock().unwrap().remove(key);
    }

    pub fn has_valid_ticket(&self, key: &SessionKey) -> bool {
        let now = self.clock.now();
        self.with_state(key, |s| {
            s.tickets.iter().any(|t| t.valid_at(now)) || s.tls12_valid(now)
        })
    }

    /// The ticket that would be presented next, if any.
    pub fn ticket_info(&self, key: &SessionKey) -> Option<TicketInfo> {
        let now = self.clock.now();
        self.with_state(key, |s| {
            s.tickets
                .iter()
                .rev()
                .find(|t| t.valid_at(now))
                .map(|t| TicketInfo {
                    issued: t.issued,
                    lifetime_s: t.lifetime_s,
                    max_early_data_size: t.value.max_early_data_size(),
                })
        })
    }

    pub fn ticket_count(&self, key: &SessionKey) -> usize {
        self.with_state(key, |s| s.tickets.len())
    }

    pub fn has_token(&self, key: &SessionKey) -> bool {
        self.with_state(key, |s| s.quic_token.is_some())
    }

    pub fn quic_version(&self, key: &SessionKey) -> Option<u32> {
        self.with_state(key, |s| s.quic_version)
    }

    pub fn set_quic_version(&self, key: &SessionKey, v: u32) {
        self.with_state(key, |s| s.quic_version = Some(v));
    }

    pub fn doq_alpn(&self, key: &SessionKey) -> Option<String> {
        self.with_state(key, |s| s.doq_alpn.clone())
    }

    pub fn set_doq_alpn(&self, key: &SessionKey, alpn: &str) {
        self.with_state(key, |s| s.doq_alpn = Some(alpn.to_string()));
    }

    /// Adapter handed to rustls for one connection.
    pub fn tls_store(&self, key: SessionKey) -> Arc<TlsSessionAdapter> {
        Arc::new(TlsSessionAdapter {
            cache: self.clone(),
            key,
            offered: AtomicBool::new(false),
        })
    }

    /// Adapter handed to quinn for one connection.
    pub fn token_store(&self, key: SessionKey) -> Arc<TokenAdapter> {
        Arc::new(TokenAdapter {
            cache: self.clone(),
            key,
            presented: AtomicBool::new(false),
        })
    }

    fn insert_ticket(&self, key: &SessionKey, value: Tls13ClientSessionValue) {
        let now = self.clock.now();
        let lifetime_s = ticket_lifetime(&value);
        self.with_state(key, |s| {
            s.prune(now);
            if s.tickets.len() == MAX_TICKETS_PER_KEY {
                s.tickets.pop_front();
            }
            s.tickets.push_back(StoredTicket {
                value,
                issued: now,
                lifetime_s,
            });
        });
    }

    fn take_ticket(&self, key: &SessionKey) -> Option<Tls13ClientSessionValue> {
        let now = self.clock.now();
        self.with_state(key, |s| {
            s.prune(now);
            s.tickets.pop_back().map(|t| t.value)
        })
    }
}

// rustls keeps the advertised lifetime private; its Debug output is the only
// place it surfaces. Fall back to the protocol maximum, which rustls also
// caps at.
fn ticket_lifetime(value: &Tls13ClientSessionValue) -> u32 {
    let dbg = format!("{value:?}");
    dbg.split("lifetime_secs: ")
        .nth(1)
        .and_then(|rest| {
            let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
            digits.parse().ok()
        })
        .map(|v: u32| v.min(MAX_TICKET_LIFETIME_S))
        .unwrap_or(MAX_TICKET_LIFETIME_S)
}

/// rustls session store bound to one cache key.
#[derive(Debug)]
pub struct TlsSessionAdapter {
    cache: SessionCache,
    key: SessionKey,
    offered: AtomicBool,
}

impl TlsSessionAdapter {
    /// Whether rustls pulled a ticket out of the cache for this connection.
    pub fn ticket_offered(&self) -> bool {
        self.offered.load(Ordering::SeqCst)
    }
}

impl ClientSessionStore for TlsSessionAdapter {
    fn set_kx_hint(&self, _: ServerName<'static>, group: NamedGroup) {
        self.cache
            .with_state(&self.key, |s| s.kx_hint = Some(group));
    }

    fn kx_hint(&self, _: &ServerName<'_>) -> Option<NamedGroup> {
        self.cache.with_state(&self.key, |s| s.kx_hint)
    }

    fn set_tls12_session(&self, _: ServerName<'static>, value: Tls12ClientSessionValue) {
        let now = self.cache.clock.now();
        self.cache
            .with_state(&self.key, |s| s.tls12 = Some((now, value)));
    }

    fn tls12_session(&self, _: &ServerName<'_>) -> Option<Tls12ClientSessionValue> {
        let now = self.cache.clock.now();
        let found = self.cache.with_state(&self.key, |s| {
            s.prune(now);
            s.tls12.as_ref().map(|(_, v)| v.clone())
        });
        if found.is_some() {
            self.offered.store(true, Ordering::SeqCst);
        }
        found
    }

    fn remove_tls12_session(&self, _: &ServerName<'static>) {
        self.cache.with_state(&self.key, |s| s.tls12 = None);
    }

    fn insert_tls13_ticket(&self, _: ServerName<'static>, value: Tls13ClientSessionValue) {
        self.cache.insert_ticket(&self.key, value);
    }

    fn take_tls13_ticket(&self, _: &ServerName<'static>) -> Option<Tls13ClientSessionValue> {
        let t = self.cache.take_ticket(&self.key);
        if t.is_some() {
            self.offered.store(true, Ordering::SeqCst);
        }
        t
    }
}

/// quinn token store bound to one cache key. A token is only handed out
/// while a usable ticket exists, so address validation is never attempted
/// without session resumption.
#[derive(Debug)]
pub struct TokenAdapter {
    cache: SessionCache,
    key: SessionKey,
    presented: AtomicBool,
}

impl TokenAdapter {
    pub fn token_presented(&self) -> bool {
        self.presented.load(Ordering::SeqCst)
    }
}

impl quinn::TokenStore for TokenAdapter {
    fn insert(&self, _: &str, token: Bytes) {
        self.cache
            .with_state(&self.key, |s| s.quic_token = Some(token));
    }

    fn take(&self, _: &str) -> Option<Bytes> {
        if !self.cache.has_valid_ticket(&self.key) {
            return None;
        }
        let t = self.cache.with_state(&self.key, |s| s.quic_token.take());
        if t.is_some() {
            self.presented.store(true, Ordering::SeqCst);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use quinn::TokenStore;

    fn key() -> SessionKey {
        SessionKey::new("127.0.0.1:853".parse().unwrap(), ProtocolKind::DoQ)
    }

    #[test]
    fn token_needs_a_ticket() {
        let cache = SessionCache::new();
        let store = cache.token_store(key());
        store.insert("x", Bytes::from_static(b"tok"));
        assert!(cache.has_token(&key()));
        assert_eq!(store.take("x"), None);
        assert!(!store.token_presented());
        assert!(cache.has_token(&key()));
    }

    #[test]
    fn version_and_alpn_are_remembered_per_key() {
        let cache = SessionCache::new();
        cache.set_quic_version(&key(), 1);
        cache.set_doq_alpn(&key(), "doq-i02");
        assert_eq!(cache.quic_version(&key()), Some(1));
        assert_eq!(cache.doq_alpn(&key()).as_deref(), Some("doq-i02"));
        let other = SessionKey::new(key().addr, ProtocolKind::DoT);
        assert_eq!(cache.quic_version(&other), None);
        cache.clear(&key());
        assert_eq!(cache.quic_version(&key()), None);
    }

    #[test]
    fn manual_clock_advances() {
        let clock = ManualClock::new(SystemTime::UNIX_EPOCH);
        clock.advance(Duration::from_secs(5));
        assert_eq!(clock.now(), SystemTime::UNIX_EPOCH + Duration::from_secs(5));
    }
}
