//! Campaign runner: warm/measure pairs for every resolver and protocol, on a
//! fixed interval, with bounded concurrency and append-only output.

mod record;
mod sink;

use std::future::Future;
use std::net::IpAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use futures::stream::{FuturesUnordered, StreamExt};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tokio::sync::Semaphore;
use tokio::time::Instant;

pub use record::{MeasurementRecord, RecordContext};
pub use sink::{read_records, write_records, JsonlSink, RecordSink};

use crate::codec::DnsQuery;
use crate::discovery::{Blocklist, ResolverTarget};
use crate::protocol::{ProtocolKind, ProtocolSet};
use crate::transport::{Client, Target, TransportError, WarmMeasurePair};

pub const DEFAULT_INTERVAL: Duration = Duration::from_secs(2 * 60 * 60);
pub const DEFAULT_PARALLELISM: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid campaign configuration: {0}")]
    Config(String),
    #[error("writing records: {0}")]
    Sink(#[from] std::io::Error),
    #[error("resolver file line {line}: {message}")]
    ResolverFile { line: usize, message: String },
}

/// Runs one warm/measure pair. [`Client`] is the real implementation.
pub trait Measurer: Send + Sync {
    fn measure_pair(
        &self,
        protocol: ProtocolKind,
        target: &Target,
        query: &DnsQuery,
    ) -> impl Future<Output = WarmMeasurePair> + Send;
}

impl Measurer for Client {
    fn measure_pair(
        &self,
        protocol: ProtocolKind,
        target: &Target,
        query: &DnsQuery,
    ) -> impl Future<Output = WarmMeasurePair> + Send {
        self.warm_then_measure(protocol, target, query)
    }
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub resolvers: Vec<ResolverTarget>,
    pub protocols: ProtocolSet,
    pub queries: Vec<DnsQuery>,
    pub interval: Duration,
    pub rounds: u32,
    pub parallelism: usize,
    pub blocklist: Blocklist,
    pub vantage_label: String,
    /// Share of the interval over which pair start times are spread.
    pub jitter_fraction: f64,
    /// Seed for the jitter; random when absent.
    pub seed: Option<u64>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            resolvers: Vec::new(),
            protocols: ProtocolSet::all(),
            queries: vec![DnsQuery::a("google.com")],
            interval: DEFAULT_INTERVAL,
            rounds: 1,
            parallelism: DEFAULT_PARALLELISM,
            blocklist: Blocklist::default(),
            vantage_label: "local".to_string(),
            jitter_fraction: 0.1,
            seed: None,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.interval.is_zero() {
            return Err(OrchestratorError::Config(
                "interval must be positive".into(),
            ));
        }
        if self.parallelism == 0 {
            return Err(OrchestratorError::Config(
                "parallelism must be at least 1".into(),
            ));
        }
        if self.queries.is_empty() {
            return Err(OrchestratorError::Config("no query configured".into()));
        }
        if !(0.0..=1.0).contains(&self.jitter_fraction) {
            return Err(OrchestratorError::Config(
                "jitter fraction outside [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Number of rounds that fit in `total`, at least one.
    pub fn rounds_for(interval: Duration, total: Duration) -> u32 {
        ((total.as_secs_f64() / interval.as_secs_f64()).ceil() as u32).max(1)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CampaignSummary {
    pub rounds: u32,
    pub records: usize,
    pub errors: usize,
    pub skipped: usize,
}

/// Wall-clock timestamps derived from the monotonic clock, so record times
/// stay consistent with measured durations.
struct WallClock {
    origin: Instant,
    origin_utc: DateTime<Utc>,
}

impl WallClock {
    fn new() -> Self {
        Self {
            origin: Instant::now(),
            origin_utc: Utc::now(),
        }
    }

    fn at(&self, t: Instant) -> DateTime<Utc> {
        self.origin_utc + chrono::Duration::from_std(t - self.origin).unwrap_or_default()
    }
}

struct Pair {
    resolver: String,
    protocol: ProtocolKind,
    target: Target,
    query: DnsQuery,
    offset: Duration,
}

/// Runs every round and hands each round's records to `sink` once complete.
pub async fn run_campaign<M: Measurer>(
    config: &CampaignConfig,
    measurer: &M,
    sink: &mut dyn RecordSink,
) -> Result<CampaignSummary, OrchestratorError> {
    config.validate()?;
    let mut rng = match config.seed {
        Some(s) => StdRng::seed_from_u64(s),
        None => StdRng::from_entropy(),
    };
    let clock = WallClock::new();
    let permits = Arc::new(Semaphore::new(config.parallelism));
    let mut summary = CampaignSummary::default();
    let jitter_span = config.interval.mul_f64(config.jitter_fraction);

    for round in 0..config.rounds {
        let round_start = clock.origin + config.interval * round;
        if Instant::now() < round_start {
            tokio::time::sleep_until(round_start).await;
        } else if round > 0 {
            tracing::warn!(round, "previous round overran the interval; starting late");
        }
        let started = Instant::now();
        let round_start_utc = clock.at(started);
        let mut records = Vec::new();

        let mut pairs = Vec::new();
        for resolver in &config.resolvers {
            if config.blocklist.contains(resolver.ip) {
                for q in &config.queries {
                    let ctx = context(
                        config,
                        &clock,
                        round,
                        round_start_utc,
                        started,
                        resolver.ip.to_string(),
                    );
                    records.push(MeasurementRecord::skip(
                        &ctx,
                        q,
                        &TransportError::Blocklisted(resolver.ip),
                    ));
                }
                continue;
            }
            for protocol in config.protocols.iter() {
                let Some(target) = resolver.target(protocol) else {
                    continue;
                };
                for q in &config.queries {
                    let offset = if jitter_span.is_zero() {
                        Duration::ZERO
                    } else {
                        jitter_span.mul_f64(rng.gen::<f64>())
                    };
                    pairs.push(Pair {
                        resolver: resolver.ip.to_string(),
                        protocol,
                        target: target.clone(),
                        query: q.clone(),
                        offset,
                    });
                }
            }
        }

        let mut running: FuturesUnordered<_> = pairs
            .into_iter()
            .map(|pair| {
                let permits = permits.clone();
                let clock = &clock;
                async move {
                    tokio::time::sleep_until(started + pair.offset).await;
                    let _permit = permits
                        .acquire_owned()
                        .await
                        .expect("semaphore never closed");
                    let begun = Instant::now();
                    let result = measurer
                        .measure_pair(pair.protocol, &pair.target, &pair.query)
                        .await;
                    let ctx = context(config, clock, round, round_start_utc, begun, pair.resolver);
                    [
                        MeasurementRecord::from_result(
                            &ctx,
                            pair.protocol,
                            &pair.query,
                            true,
                            &result.warm,
                        ),
                        MeasurementRecord::from_result(
                            &ctx,
                            pair.protocol,
                            &pair.query,
                            false,
                            &result.actual,
                        ),
                    ]
                }
            })
            .collect();
        while let Some(pair_records) = running.next().await {
            records.extend(pair_records);
        }
        drop(running);

        records.sort_by(|a, b| {
            (a.timestamp_utc, &a.resolver, a.protocol, !a.warm).cmp(&(
                b.timestamp_utc,
                &b.resolver,
                b.protocol,
                !b.warm,
            ))
        });
        summary.rounds += 1;
        summary.records += records.len();
        summary.skipped += records.iter().filter(|r| r.is_skip()).count();
        summary.errors += records
            .iter()
            .filter(|r| r.is_error() && !r.is_skip())
            .count();
        sink.write_round(&records)?;
    }
    Ok(summary)
}

fn context(
    config: &CampaignConfig,
    clock: &WallClock,
    round: u32,
    round_start_utc: DateTime<Utc>,
    at: Instant,
    resolver: String,
) -> RecordContext {
    RecordContext {
        timestamp_utc: clock.at(at),
        round_start_utc,
        campaign_round: round,
        vantage_label: config.vantage_label.clone(),
        resolver,
    }
}

/// Parses a resolver list: one JSON [`ResolverTarget`] or one bare IP address
/// per line (default ports), with `#` comments.
pub fn parse_resolvers(text: &str) -> Result<Vec<ResolverTarget>, OrchestratorError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| OrchestratorError::ResolverFile {
            line: i + 1,
            message,
        };
        let target = if line.starts_with('{') {
            serde_json::from_str::<ResolverTarget>(raw.trim()).map_err(|e| err(e.to_string()))?
        } else {
            let ip: IpAddr = line
                .parse()
                .map_err(|e: std::net::AddrParseError| err(e.to_string()))?;
            ResolverTarget::new(ip)
        };
        out.push(target);
    }
    Ok(out)
}

pub fn load_resolvers(path: impl AsRef<Path>) -> Result<Vec<ResolverTarget>, OrchestratorError> {
    parse_resolvers(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::DnsResponseSummary;
    use crate::transport::{AccountingMode, ByteAccounting, QueryOutcome, TimingBreakdown};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    #[derive(Default)]
    struct FakeMeasurer {
        calls: Mutex<Vec<(ProtocolKind, Instant)>>,
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    fn outcome(protocol: ProtocolKind) -> QueryOutcome {
        QueryOutcome {
            protocol,
            timing: TimingBreakdown {
                handshake_ms: (protocol != ProtocolKind::DoUdp).then_some(10.0),
                resolve_ms: 5.0,
                e2e_ms: 15.0,
            },
            bytes: ByteAccounting {
                hs_c2r_bytes: 1,
                hs_r2c_bytes: 2,
                query_bytes: 3,
                response_bytes: 4,
                accounting_mode: AccountingMode::TransportPayload,
            },
            retransmissions: 0,
            tls_version: None,
            quic_version: None,
            doq_alpn: None,
            resumed: false,
            zero_rtt_used: false,
            response: DnsResponseSummary {
                id: 0,
                is_response: true,
                rcode: 0,
                truncated: false,
                answers: Vec::new(),
            },
            notes: Vec::new(),
        }
    }

    impl Measurer for FakeMeasurer {
        async fn measure_pair(
            &self,
            protocol: ProtocolKind,
            _: &Target,
            _: &DnsQuery,
        ) -> WarmMeasurePair {
            self.calls.lock().unwrap().push((protocol, Instant::now()));
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            tokio::time::sleep(Duration::from_millis(100)).await;
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            WarmMeasurePair {
                warm: Ok(outcome(protocol)),
                actual: Ok(outcome(protocol)),
            }
        }
    }

    fn resolver(ip: &str) -> ResolverTarget {
        ResolverTarget::new(ip.parse().unwrap())
    }

    #[tokio::test(start_paused = true)]
    async fn one_round_yields_warm_and_actual_per_protocol() {
        let cfg = CampaignConfig {
            resolvers: vec![resolver("192.0.2.1")],
            seed: Some(1),
            ..CampaignConfig::default()
        };
        let m = FakeMeasurer::default();
        let mut out = Vec::new();
        let s = run_campaign(&cfg, &m, &mut out).await.unwrap();
        assert_eq!(s.records, 10);
        assert_eq!(out.iter().filter(|r| r.warm).count(), 5);
        for p in ProtocolKind::ALL {
            let mine: Vec<_> = out.iter().filter(|r| r.protocol == Some(p)).collect();
            assert_eq!(mine.len(), 2);
            assert!(mine[0].warm && !mine[1].warm);
            assert_eq!(mine[0].timestamp_utc, mine[1].timestamp_utc);
        }
    }

    #[tokio::test(start_paused = true)]
    async fn blocklisted_resolver_is_never_contacted() {
        let cfg = CampaignConfig {
            resolvers: vec![resolver("192.0.2.1")],
            blocklist: Blocklist::parse("192.0.2.0/24").unwrap(),
            ..CampaignConfig::default()
        };
        let m = FakeMeasurer::default();
        let mut out = Vec::new();
        let s = run_campaign(&cfg, &m, &mut out).await.unwrap();
        assert!(m.calls.lock().unwrap().is_empty());
        assert_eq!(out.len(), 1);
        assert!(out[0].is_skip());
        assert_eq!(out[0].error.as_deref(), Some("blocklisted"));
        assert_eq!(s.skipped, 1);
    }

    #[tokio::test(start_paused = true)]
    async fn rounds_follow_the_interval() {
        let cfg = CampaignConfig {
            resolvers: vec![resolver("192.0.2.1")],
            rounds: 3,
            seed: Some(7),
            ..CampaignConfig::default()
        };
        let m = FakeMeasurer::default();
        let mut out = Vec::new();
        run_campaign(&cfg, &m, &mut out).await.unwrap();
        let mut starts: Vec<_> = out.iter().map(|r| r.round_start_utc).collect();
        starts.dedup();
        assert_eq!(starts.len(), 3);
        for w in starts.windows(2) {
            let gap = (w[1] - w[0]).num_milliseconds() as f64 / 1000.0;
            assert!((gap - 7200.0).abs() <= 1.0, "gap {gap}");
        }
        // Jitter stays in the first tenth of each interval.
        for r in &out {
            let lag = (r.timestamp_utc - r.round_start_utc).num_seconds();
            assert!((0..720).contains(&lag), "lag {lag}");
        }
    }

    #[tokio::test(start_paused = true)]
    async fn parallelism_bounds_in_flight_pairs() {
        let cfg = CampaignConfig {
            resolvers: (1..=4).map(|i| resolver(&format!("192.0.2.{i}"))).collect(),
            parallelism: 3,
            jitter_fraction: 0.0,
            ..CampaignConfig::default()
        };
        let m = FakeMeasurer::default();
        let mut out = Vec::new();
        run_campaign(&cfg, &m, &mut out).await.unwrap();
        assert_eq!(m.calls.lock().unwrap().len(), 20);
        assert_eq!(m.peak.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let zero = CampaignConfig {
            interval: Duration::ZERO,
            ..CampaignConfig::default()
        };
        assert!(zero.validate().is_err());
        let none = CampaignConfig {
            parallelism: 0,
            ..CampaignConfig::default()
        };
        assert!(none.validate().is_err());
        assert_eq!(
            CampaignConfig::rounds_for(DEFAULT_INTERVAL, Duration::from_secs(7 * 86400)),
            84
        );
    }

    #[test]
    fn resolver_file_accepts_json_and_addresses() {
        let text = "# comment\n192.0.2.9\n\n{\"ip\":\"127.0.0.1\",\"ports\":{\"doq\":8853}}\n";
        let rs = parse_resolvers(text).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[0].ports[&ProtocolKind::DoH], 443);
        assert_eq!(rs[1].ports.len(), 1);
        assert!(matches!(
            parse_resolvers("not-an-ip"),
            Err(OrchestratorError::ResolverFile { line: 1, .. })
        ));
    }

    #[test]
    fn jsonl_sink_appends_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let ctx = RecordContext {
            timestamp_utc: Utc::now(),
            round_start_utc: Utc::now(),
            campaign_round: 0,
            vantage_label: "v".into(),
            resolver: "192.0.2.1:853".into(),
        };
        let q = DnsQuery::a("google.com");
        let recs: Vec<_> = (0..10)
            .map(|i| {
                MeasurementRecord::from_result(
                    &ctx,
                    ProtocolKind::DoQ,
                    &q,
                    i % 2 == 0,
                    &Ok(outcome(ProtocolKind::DoQ)),
                )
            })
            .collect();
        let mut sink = JsonlSink::open(&path).unwrap();
        sink.write_round(&recs).unwrap();
        let before = std::fs::metadata(&path).unwrap().modified().unwrap();
        sink.write_round(&[]).unwrap();
        assert_eq!(
            std::fs::metadata(&path).unwrap().modified().unwrap(),
            before
        );
        assert_eq!(read_records(&path).unwrap(), recs);
        let mut again = JsonlSink::open(&path).unwrap();
        again.write_round(&recs[..1]).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), 11);
        assert_eq!(&back[..10], &recs[..]);
    }
}
