//! Page-load DNS workload simulator.
//!
//! A page is a list of names. The simulator resolves them the way a browser
//! stub would: DoT, DoH and DoQ share one connection for the whole page,
//! DoTCP dials per query and DoUDP sends independent datagrams with a
//! five-second application retry. The result is the DNS time on the page's
//! critical path.
//!
//! Two endpoints are supported: an [`AnalyticNetwork`] that charges whole
//! round-trips, and a live resolver reached through a [`Client`].

mod model;
mod profile;

use std::collections::BTreeMap;
use std::time::Duration;

use futures::future::join_all;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

pub use model::{AnalyticNetwork, LossModel, ESTABLISHED_PTO_RTTS, INITIAL_RTO_MS};
pub use profile::{load_profiles, parse_profiles, PageProfile};

use crate::analysis::{median, relative_difference};
use crate::codec::DnsQuery;
use crate::discovery::ResolverTarget;
use crate::protocol::ProtocolKind;
use crate::transport::{Client, RetransmitPolicy, TimingBreakdown, TransportError};

#[derive(Debug, thiserror::Error)]
pub enum PageSimError {
    #[error("profile {0:?} has no queries")]
    EmptyProfile(String),
    #[error("profile file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("resolver has no {0} endpoint")]
    ProtocolUnavailable(ProtocolKind),
    #[error("baseline {0} has no usable median")]
    ZeroBaseline(ProtocolKind),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where the page's queries go.
#[derive(Debug, Clone)]
pub enum Endpoint {
    Model(AnalyticNetwork),
    Live {
        client: Client,
        resolver: ResolverTarget,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSimResult {
    pub profile: String,
    pub protocol: ProtocolKind,
    /// DNS time on the critical path: the sum over queries, or the slowest
    /// query for parallel pages.
    pub total_dns_ms: f64,
    pub per_query: Vec<TimingBreakdown>,
    pub connections_opened: u32,
    pub resumed_count: u32,
    /// Error code per query, `None` on success.
    pub errors: Vec<Option<String>>,
    /// Queries whose first datagram the loss model dropped.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lost_first_datagram: Vec<usize>,
}

impl PageSimResult {
    pub fn failures(&self) -> usize {
        self.errors.iter().filter(|e| e.is_some()).count()
    }
}

fn critical_path(per_query: &[TimingBreakdown], parallel: bool, shared: bool) -> f64 {
    if !parallel {
        return per_query.iter().map(|t| t.e2e_ms).sum();
    }
    if shared {
        // Every query waits for the one handshake, then all run together.
        let hs = per_query
            .first()
            .and_then(|t| t.handshake_ms)
            .unwrap_or(0.0);
        hs + per_query.iter().map(|t| t.resolve_ms).fold(0.0, f64::max)
    } else {
        per_query.iter().map(|t| t.e2e_ms).fold(0.0, f64::max)
    }
}

fn shares_connection(p: ProtocolKind) -> bool {
    matches!(p, ProtocolKind::DoT | ProtocolKind::DoH | ProtocolKind::DoQ)
}

fn seed_for(seed: u64, profile: &str, p: ProtocolKind, rep: usize) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for b in profile.bytes().chain(p.as_str().bytes()) {
        h = (h ^ u64::from(b)).wrapping_mul(0x100_0000_01B3);
    }
    h ^ (rep as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Simulates one page load against the analytic model.
pub fn simulate_model<R: Rng>(
    profile: &PageProfile,
    protocol: ProtocolKind,
    net: &AnalyticNetwork,
    rng: &mut R,
) -> PageSimResult {
    let run = model::run(net, protocol, profile.queries.len(), rng);
    PageSimResult {
        profile: profile.name.clone(),
        protocol,
        total_dns_ms: critical_path(
            &run.per_query,
            profile.parallel,
            shares_connection(protocol),
        ),
        errors: vec![None; run.per_query.len()],
        per_query: run.per_query,
        connections_opened: run.connections_opened,
        resumed_count: run.resumed_count,
        lost_first_datagram: run
            .lost
            .iter()
            .enumerate()
            .filter(|(_, l)| **l)
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Simulates one cold page load. Against a live resolver this is a warm
/// navigation (one query, state harvested, connection closed) followed by
/// the measured navigation.
pub async fn simulate_pageload(
    profile: &PageProfile,
    protocol: ProtocolKind,
    endpoint: &Endpoint,
) -> Result<PageSimResult, PageSimError> {
    simulate_rep(profile, protocol, endpoint, 0).await
}

async fn simulate_rep(
    profile: &PageProfile,
    protocol: ProtocolKind,
    endpoint: &Endpoint,
    rep: usize,
) -> Result<PageSimResult, PageSimError> {
    match endpoint {
        Endpoint::Model(net) => {
            let seed = net.loss.map_or(0, |l| l.seed);
            let mut rng = StdRng::seed_from_u64(seed_for(seed, &profile.name, protocol, rep));
            Ok(simulate_model(profile, protocol, net, &mut rng))
        }
        Endpoint::Live { client, resolver } => {
            simulate_live(profile, protocol, client, resolver).await
        }
    }
}

fn query_for(name: &str) -> DnsQuery {
    DnsQuery::a(name).with_id(rand::thread_rng().gen())
}

fn failed(timeout: Duration) -> TimingBreakdown {
    let t = timeout.as_secs_f64() * 1000.0;
    TimingBreakdown {
        handshake_ms: None,
        resolve_ms: t,
        e2e_ms: t,
    }
}

async fn simulate_live(
    profile: &PageProfile,
    protocol: ProtocolKind,
    client: &Client,
    resolver: &ResolverTarget,
) -> Result<PageSimResult, PageSimError> {
    let target = resolver
        .target(protocol)
        .ok_or(PageSimError::ProtocolUnavailable(protocol))?;
    let timeout = client.options().timeout;
    let k = profile.queries.len();
    let mut result = PageSimResult {
        profile: profile.name.clone(),
        protocol,
        total_dns_ms: 0.0,
        per_query: Vec::with_capacity(k),
        connections_opened: 0,
        resumed_count: 0,
        errors: Vec::with_capacity(k),
        lost_first_datagram: Vec::new(),
    };

    if protocol == ProtocolKind::DoUdp {
        let policy = RetransmitPolicy::resolver_default();
        let outcomes = if profile.parallel {
            join_all(
                profile
                    .queries
                    .iter()
                    .map(|q| async { client.doudp_query(&target, &query_for(q), policy).await }),
            )
            .await
        } else {
            let mut v = Vec::with_capacity(k);
            for q in &profile.queries {
                v.push(client.doudp_query(&target, &query_for(q), policy).await);
            }
            v
        };
        for o in outcomes {
            match o {
                Ok(o) => {
                    result.per_query.push(o.timing);
                    result.errors.push(None);
                }
                Err(e) => {
                    result.per_query.push(failed(timeout));
                    result.errors.push(Some(e.code().to_string()));
                }
            }
        }
        result.total_dns_ms = critical_path(&result.per_query, profile.parallel, false);
        return Ok(result);
    }

    if shares_connection(protocol) {
        warm_navigation(client, protocol, &target, &profile.queries[0]).await;
    }

    let conn = match client.open(protocol, &target).await {
        Ok(c) => c,
        Err(e) => {
            result.per_query = vec![failed(timeout); k];
            result.errors = vec![Some(e.code().to_string()); k];
            result.total_dns_ms = critical_path(&result.per_query, profile.parallel, false);
            return Ok(result);
        }
    };
    let outcomes = if profile.parallel {
        join_all(
            profile
                .queries
                .iter()
                .map(|q| async { conn.query(&query_for(q)).await }),
        )
        .await
    } else {
        let mut v = Vec::with_capacity(k);
        for q in &profile.queries {
            v.push(conn.query(&query_for(q)).await);
        }
        v
    };
    for (i, o) in outcomes.into_iter().enumerate() {
        let mut timing = match &o {
            Ok(o) => o.timing,
            Err(_) => failed(timeout),
        };
        if i == 0 && shares_connection(protocol) {
            timing.handshake_ms = conn.handshake_ms();
            timing.e2e_ms += conn.handshake_ms().unwrap_or(0.0);
        }
        result.per_query.push(timing);
        result.errors.push(o.err().map(|e| e.code().to_string()));
    }
    result.connections_opened = conn.connections_opened();
    result.resumed_count = u32::from(conn.resumed());
    result.total_dns_ms = critical_path(
        &result.per_query,
        profile.parallel,
        shares_connection(protocol),
    );
    conn.close().await;
    Ok(result)
}

async fn warm_navigation(
    client: &Client,
    protocol: ProtocolKind,
    target: &crate::transport::Target,
    name: &str,
) {
    let outcome: Result<(), TransportError> = async {
        let conn = client.open(protocol, target).await?;
        let r = conn.query(&query_for(name)).await;
        conn.harvest().await;
        conn.close().await;
        r.map(drop)
    }
    .await;
    if let Err(e) = outcome {
        tracing::debug!(%protocol, error = %e, "warm navigation failed");
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub profile: String,
    pub protocol: ProtocolKind,
    pub median_total_ms: f64,
    pub repetitions: usize,
    /// Relative to the baseline protocol's median on the same profile.
    pub relative_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixResult {
    pub baseline: ProtocolKind,
    pub cells: Vec<MatrixCell>,
    pub runs: Vec<PageSimResult>,
}

impl MatrixResult {
    pub fn cell(&self, profile: &str, p: ProtocolKind) -> Option<&MatrixCell> {
        self.cells
            .iter()
            .find(|c| c.profile == profile && c.protocol == p)
    }
}

/// Runs every profile over every protocol `repetitions` times and reports
/// per-cell medians plus their relative difference against `baseline`.
pub async fn run_matrix(
    profiles: &[PageProfile],
    protocols: &[ProtocolKind],
    endpoint: &Endpoint,
    repetitions: usize,
    baseline: ProtocolKind,
) -> Result<MatrixResult, PageSimError> {
    if repetitions == 0 {
        return Err(PageSimError::NoRepetitions);
    }
    let mut runs = Vec::with_capacity(profiles.len() * protocols.len() * repetitions);
    let mut cells = Vec::new();
    for profile in profiles {
        let mut medians: BTreeMap<ProtocolKind, f64> = BTreeMap::new();
        for &p in protocols {
            let mut totals = Vec::with_capacity(repetitions);
            for rep in 0..repetitions {
                let r = simulate_rep(profile, p, endpoint, rep).await?;
                totals.push(r.total_dns_ms);
                runs.push(r);
            }
            medians.insert(p, median(&totals).expect("at least one repetition"));
        }
        let base = medians.get(&baseline).copied();
        for (p, m) in medians {
            let rel = match base {
                Some(b) => Some(
                    relative_difference(m, b).map_err(|_| PageSimError::ZeroBaseline(baseline))?,
                ),
                None => None,
            };
            cells.push(MatrixCell {
                profile: profile.name.clone(),
                protocol: p,
                median_total_ms: m,
                repetitions,
                relative_difference: rel,
            });
        }
    }
    Ok(MatrixResult {
        baseline,
        cells,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProtocolKind::*;

    const R: f64 = 50.0;

    fn sim(k: usize, p: ProtocolKind, net: AnalyticNetwork) -> PageSimResult {
        let profile = PageProfile::synthetic(k).unwrap();
        simulate_model(&profile, p, &net, &mut StdRng::seed_from_u64(1))
    }

    #[test]
    fn reused_connections_pay_one_handshake() {
        let net = AnalyticNetwork::new(R);
        assert_eq!(sim(1, DoQ, net).total_dns_ms, 2.0 * R);
        assert_eq!(sim(20, DoQ, net).total_dns_ms, 21.0 * R);
        assert_eq!(sim(20, DoUdp, net).total_dns_ms, 20.0 * R);
        assert_eq!(sim(3, DoT, net).total_dns_ms, 5.0 * R);
        let doq = sim(10, DoQ, net);
        assert_eq!((doq.connections_opened, doq.resumed_count), (1, 1));
        assert_eq!(doq.per_query.len(), 10);
    }

    #[test]
    fn dotcp_dials_per_query() {
        let r = sim(7, DoTcp, AnalyticNetwork::new(R));
        assert_eq!(r.connections_opened, 7);
        assert_eq!(r.total_dns_ms, 14.0 * R);
        assert_eq!(sim(7, DoUdp, AnalyticNetwork::new(R)).connections_opened, 0);
    }

    #[test]
    fn parallel_pages_take_the_slowest_path() {
        let net = AnalyticNetwork::new(R);
        let page = PageProfile::synthetic(10).unwrap().parallel();
        let mut rng = StdRng::seed_from_u64(0);
        assert_eq!(
            simulate_model(&page, DoQ, &net, &mut rng).total_dns_ms,
            2.0 * R
        );
        assert_eq!(
            simulate_model(&page, DoTcp, &net, &mut rng).total_dns_ms,
            2.0 * R
        );
        assert_eq!(simulate_model(&page, DoUdp, &net, &mut rng).total_dns_ms, R);
    }

    #[test]
    fn cold_and_zero_rtt_variants() {
        let mut net = AnalyticNetwork::new(R).cold();
        assert_eq!(sim(1, DoH, net).total_dns_ms, 3.0 * R);
        assert_eq!(sim(1, DoH, net).resumed_count, 0);
        net.resumed = true;
        net.zero_rtt = true;
        assert_eq!(sim(1, DoQ, net).total_dns_ms, R);
    }

    #[test]
    fn loss_charges_retry_or_rto() {
        let net = AnalyticNetwork::new(R).with_loss(1.0, 3);
        let udp = sim(2, DoUdp, net);
        assert_eq!(udp.total_dns_ms, 2.0 * (R + 5000.0));
        assert_eq!(udp.lost_first_datagram, [0, 1]);
        let doq = sim(2, DoQ, net);
        assert_eq!(
            doq.total_dns_ms,
            (R + INITIAL_RTO_MS) + R + (R + ESTABLISHED_PTO_RTTS * R)
        );
    }

    #[test]
    fn profile_requires_queries() {
        assert!(matches!(
            PageProfile::new("x", vec![]),
            Err(PageSimError::EmptyProfile(_))
        ));
    }

    #[tokio::test]
    async fn matrix_counts_and_medians() {
        let profiles = vec![
            PageProfile::synthetic(1).unwrap(),
            PageProfile::synthetic(4).unwrap(),
        ];
        let endpoint = Endpoint::Model(AnalyticNetwork::new(R));
        let m = run_matrix(&profiles, &ProtocolKind::ALL, &endpoint, 4, DoUdp)
            .await
            .unwrap();
        assert_eq!(m.runs.len(), 40);
        assert_eq!(m.cells.len(), 10);
        let c = m.cell("k1", DoQ).unwrap();
        assert_eq!(c.median_total_ms, 2.0 * R);
        assert_eq!(c.relative_difference, Some(1.0));
        assert_eq!(m.cell("k4", DoUdp).unwrap().relative_difference, Some(0.0));
        assert!(matches!(
            run_matrix(&profiles, &[DoQ], &endpoint, 0, DoUdp).await,
            Err(PageSimError::NoRepetitions)
        ));
    }
}
