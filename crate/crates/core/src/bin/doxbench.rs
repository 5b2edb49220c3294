use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use doxbench::analysis::{self, AnalysisOptions, Dimension, MedianTable, Metric};
use doxbench::codec::DnsQuery;
use doxbench::discovery::{self, Blocklist, ResolverTarget, SweepConfig, DOQ_SCAN_PORTS};
use doxbench::mock::{self, MockConfig, Zone};
use doxbench::orchestrator::{self, CampaignConfig, JsonlSink};
use doxbench::pagesim::{self, AnalyticNetwork, Endpoint};
use doxbench::session::SessionCache;
use doxbench::transport::{Client, ClientOptions, DohMethod, Verification};
use doxbench::{ProtocolKind, ProtocolSet};

#[derive(Parser)]
#[command(
    name = "doxbench",
    version,
    about = "Encrypted DNS measurement toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mock resolver until interrupted.
    Serve(ServeArgs),
    /// Run a measurement campaign and append records to a JSONL file.
    Measure(MeasureArgs),
    /// Simulate page loads over each protocol.
    Simulate(SimulateArgs),
    /// Summarise record files.
    Analyze(AnalyzeArgs),
    /// Probe addresses for DoQ with version negotiation, then verify responders.
    Scan(ScanArgs),
}

#[derive(Args)]
struct TlsArgs {
    /// Trust only this DER-encoded CA certificate.
    #[arg(long)]
    ca: Option<PathBuf>,
    /// Skip certificate verification.
    #[arg(long, conflicts_with = "ca")]
    insecure: bool,
    /// Per-leg timeout.
    #[arg(long, default_value = "10s", value_parser = humantime::parse_duration)]
    timeout: Duration,
    /// Charge this round-trip to every TCP connect (loopback testing).
    #[arg(long, value_parser = humantime::parse_duration)]
    connect_rtt: Option<Duration>,
}

impl TlsArgs {
    fn client(&self, doh_get: bool) -> Result<Client> {
        let verification = match (&self.ca, self.insecure) {
            (Some(p), _) => Verification::Roots(vec![
                std::fs::read(p).with_context(|| format!("reading {}", p.display()))?
            ]),
            (None, true) => Verification::Insecure,
            (None, false) => Verification::WebPki,
        };
        let opts = ClientOptions {
            verification,
            timeout: self.timeout,
            doh_method: if doh_get {
                DohMethod::Get
            } else {
                DohMethod::Post
            },
            emulated_connect_rtt: self.connect_rtt,
            ..ClientOptions::default()
        };
        Ok(Client::new(opts, SessionCache::new())?)
    }
}

#[derive(Args)]
struct ServeArgs {
    /// Zone file with `name address [ttl]` lines.
    #[arg(long)]
    zone: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    /// Filler bytes added to the certificate.
    #[arg(long, default_value_t = 0)]
    cert_padding: usize,
    #[arg(long)]
    no_tickets: bool,
    #[arg(long = "enable-0rtt")]
    enable_0rtt: bool,
    #[arg(long, default_value = "all", value_parser = parse_protocols)]
    protocols: ProtocolSet,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    /// Use each protocol's standard port instead of ephemeral ones.
    #[arg(long)]
    standard_ports: bool,
    /// Write the CA certificate (DER) here.
    #[arg(long)]
    ca_out: Option<PathBuf>,
    /// Write a resolver line for `measure --resolvers` here.
    #[arg(long)]
    resolver_out: Option<PathBuf>,
}

#[derive(Args)]
struct MeasureArgs {
    /// Resolver file: JSON target lines or bare IP addresses.
    #[arg(long)]
    resolvers: PathBuf,
    #[arg(long, default_value = "all", value_parser = parse_protocols)]
    protocols: ProtocolSet,
    /// Name to resolve; repeat for several.
    #[arg(long, default_value = "google.com")]
    qname: Vec<String>,
    #[arg(long, default_value = "2h", value_parser = humantime::parse_duration)]
    interval: Duration,
    #[arg(long, default_value_t = 1, conflicts_with = "duration")]
    rounds: u32,
    /// Campaign length; sets the number of rounds from the interval.
    #[arg(long, value_parser = humantime::parse_duration)]
    duration: Option<Duration>,
    #[arg(long, default_value_t = orchestrator::DEFAULT_PARALLELISM)]
    parallelism: usize,
    /// Share of the interval over which pair start times are spread.
    #[arg(long, default_value_t = 0.1)]
    jitter: f64,
    #[arg(long, default_value = "records.jsonl")]
    out: PathBuf,
    #[arg(long, default_value = "local")]
    vantage: String,
    #[arg(long)]
    blocklist: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Send DoH queries with GET instead of POST.
    #[arg(long)]
    doh_get: bool,
    #[command(flatten)]
    tls: TlsArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long, default_value = "all", value_parser = parse_protocols)]
    protocols: ProtocolSet,
    /// Resolver file; the first target is used.
    #[arg(
        long,
        conflicts_with = "model_rtt",
        required_unless_present = "model_rtt"
    )]
    resolver: Option<PathBuf>,
    /// Use the analytic model with this round-trip time in milliseconds.
    #[arg(long)]
    model_rtt: Option<f64>,
    /// Analytic model: probability that a query's first datagram is lost.
    #[arg(long, requires = "model_rtt")]
    loss: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Analytic model: charge full handshakes instead of resumed ones.
    #[arg(long, requires = "model_rtt")]
    cold: bool,
    #[arg(long, default_value_t = 4)]
    reps: usize,
    #[arg(long, default_value = "doudp")]
    baseline: ProtocolKind,
    /// Append every simulation as a JSON line here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tls: TlsArgs,
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct AnalyzeArgs {
    #[command(subcommand)]
    view: Option<AnalyzeView>,
    #[command(flatten)]
    table: TableArgs,
}

#[derive(Subcommand)]
enum AnalyzeView {
    /// CDF of per-group relative differences against a baseline protocol.
    Cdf(CdfArgs),
    /// Per-protocol median bytes by phase.
    Sizes(SizesArgs),
}

#[derive(Args)]
struct TableArgs {
    /// Record file (JSONL).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "total")]
    metric: Metric,
    #[arg(long, value_delimiter = ',', default_value = "vantage,resolver", value_parser = parse_dims)]
    group_by: Vec<Dimension>,
    #[arg(long)]
    include_warm: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CdfArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "doudp")]
    baseline: ProtocolKind,
    #[arg(long, default_value = "total")]
    metric: Metric,
    #[arg(long, value_delimiter = ',', default_value = "vantage,resolver", value_parser = parse_dims)]
    group_by: Vec<Dimension>,
    #[arg(long)]
    include_warm: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SizesArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    include_warm: bool,
}

#[derive(Args)]
struct ScanArgs {
    /// File of addresses or CIDR ranges, one per line.
    #[arg(long)]
    targets: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DOQ_SCAN_PORTS)]
    ports: Vec<u16>,
    /// Probes per second.
    #[arg(long, default_value_t = 100.0)]
    rate: f64,
    #[arg(long)]
    blocklist: Option<PathBuf>,
    /// Verify every responder over all five protocols.
    #[arg(long)]
    verify: bool,
    /// Write responders (or verified targets) as JSON lines here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    parallelism: usize,
    #[command(flatten)]
    tls: TlsArgs,
}

fn parse_protocols(s: &str) -> Result<ProtocolSet, String> {
    if s == "all" {
        return Ok(ProtocolSet::all());
    }
    ProtocolSet::parse_list(s).map_err(|e| e.to_string())
}

fn parse_dims(s: &str) -> Result<Dimension, String> {
    match Dimension::parse_list(s)
        .map_err(|e| e.to_string())?
        .as_slice()
    {
        [d] => Ok(*d),
        _ => Err(format!("expected one dimension, got {s:?}")),
    }
}

fn load_blocklist(path: Option<&Path>) -> Result<Blocklist> {
    Ok(match path {
        Some(p) => Blocklist::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => Blocklist::default(),
    })
}

fn write_json_lines<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve(a) => serve(a).await,
        Command::Measure(a) => measure(a).await,
        Command::Simulate(a) => simulate(a).await,
        Command::Analyze(a) => analyze(a),
        Command::Scan(a) => scan(a).await,
    }
}

async fn serve(a: ServeArgs) -> Result<()> {
    let mut config = MockConfig {
        tickets_enabled: !a.no_tickets,
        zero_rtt_enabled: a.enable_0rtt,
        cert_padding_bytes: a.cert_padding,
        enabled_protocols: a.protocols,
        bind_ip: a.bind,
        ..MockConfig::default().with_delay_ms(a.delay_ms)
    };
    if let Some(z) = &a.zone {
        config.zone = Zone::from_file(z).with_context(|| format!("reading {}", z.display()))?;
    }
    if a.standard_ports {
        config.ports = ProtocolKind::ALL
            .iter()
            .map(|p| (*p, p.default_port()))
            .collect();
    }
    let handle = mock::serve(config).await?;
    for (p, addr) in handle.addrs() {
        println!("{p:<6} {addr}");
    }
    if let Some(path) = &a.ca_out {
        std::fs::write(path, handle.ca_cert_der())?;
        println!("ca     {}", path.display());
    }
    if let Some(path) = &a.resolver_out {
        std::fs::write(
            path,
            format!("{}\n", serde_json::to_string(&handle.resolver_target())?),
        )?;
    }
    tokio::signal::ctrl_c().await?;
    println!("{:?}", handle.counters());
    handle.shutdown();
    Ok(())
}

async fn measure(a: MeasureArgs) -> Result<()> {
    let client = a.tls.client(a.doh_get)?;
    let rounds = match a.duration {
        Some(d) => CampaignConfig::rounds_for(a.interval, d),
        None => a.rounds,
    };
    let config = CampaignConfig {
        resolvers: orchestrator::load_resolvers(&a.resolvers)?,
        protocols: a.protocols,
        queries: a.qname.iter().map(DnsQuery::a).collect(),
        interval: a.interval,
        rounds,
        parallelism: a.parallelism,
        blocklist: load_blocklist(a.blocklist.as_deref())?,
        vantage_label: a.vantage,
        jitter_fraction: a.jitter,
        seed: a.seed,
    };
    let mut sink = JsonlSink::open(&a.out)?;
    let summary = orchestrator::run_campaign(&config, &client, &mut sink).await?;
    println!(
        "{} rounds, {} records ({} errors, {} skipped) -> {}",
        summary.rounds,
        summary.records,
        summary.errors,
        summary.skipped,
        a.out.display()
    );
    Ok(())
}

async fn simulate(a: SimulateArgs) -> Result<()> {
    let profiles = pagesim::load_profiles(&a.profiles)?;
    let endpoint = match (a.model_rtt, &a.resolver) {
        (Some(rtt), _) => {
            let mut net = AnalyticNetwork::new(rtt);
            if let Some(p) = a.loss {
                net = net.with_loss(p, a.seed);
            }
            if a.cold {
                net = net.cold();
            }
            Endpoint::Model(net)
        }
        (None, Some(path)) => {
            let resolver = orchestrator::load_resolvers(path)?
                .into_iter()
                .next()
                .context("resolver file is empty")?;
            Endpoint::Live {
                client: a.tls.client(false)?,
                resolver,
            }
        }
        (None, None) => bail!("either --resolver or --model-rtt is required"),
    };
    let protocols: Vec<ProtocolKind> = a.protocols.iter().collect();
    let matrix = pagesim::run_matrix(&profiles, &protocols, &endpoint, a.reps, a.baseline).await?;
    println!(
        "{:<16} {:<6} {:>12} {:>10}",
        "profile", "proto", "median_ms", "rel"
    );
    for c in &matrix.cells {
        let rel = c
            .relative_difference
            .map(|r| format!("{:+.3}", r))
            .unwrap_or_default();
        println!(
            "{:<16} {:<6} {:>12.1} {:>10}",
            c.profile, c.protocol, c.median_total_ms, rel
        );
    }
    if let Some(out) = &a.out {
        write_json_lines(out, &matrix.runs)?;
    }
    Ok(())
}

fn print_table(t: &MedianTable) {
    let dims: Vec<&str> = t.dimensions.iter().map(|d| d.as_str()).collect();
    print!("{}", dims.join("\t"));
    for p in &t.protocols {
        print!("\t{p}");
    }
    println!();
    for row in &t.rows {
        print!("{}", row.key.join("\t"));
        for p in &t.protocols {
            let cell = row.cells.get(p);
            let m = cell
                .and_then(|c| c.median)
                .map(analysis::format_sig)
                .unwrap_or_else(|| "-".into());
            let loss = cell.map_or(0, |c| c.losses);
            if loss > 0 {
                print!("\t{m} ({loss} lost)");
            } else {
                print!("\t{m}");
            }
        }
        println!();
    }
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    match a.view {
        None => {
            let t = a.table;
            let input = t.input.context("--input is required")?;
            let records = analysis::load_records(&input)?;
            let table = analysis::median_table(
                &records,
                &t.group_by,
                t.metric,
                AnalysisOptions {
                    include_warm: t.include_warm,
                },
            );
            print_table(&table);
            if let Some(out) = &t.out {
                analysis::write_table_csv(&table, out)?;
            }
        }
        Some(AnalyzeView::Cdf(c)) => {
            let records = analysis::load_records(&c.input)?;
            let cdf = analysis::relative_cdf(
                &records,
                c.baseline,
                c.metric,
                &c.group_by,
                AnalysisOptions {
                    include_warm: c.include_warm,
                },
            );
            if cdf.dropped_groups > 0 {
                eprintln!(
                    "{} groups without a {} median were dropped",
                    cdf.dropped_groups, c.baseline
                );
            }
            for (p, series) in &cdf.series {
                let pts: Vec<String> = series
                    .iter()
                    .map(|(x, f)| {
                        format!("{}:{}", analysis::format_sig(*x), analysis::format_sig(*f))
                    })
                    .collect();
                println!("{p}\t{}", pts.join(" "));
            }
            if let Some(out) = &c.out {
                analysis::write_cdf_csv(&cdf, out)?;
            }
        }
        Some(AnalyzeView::Sizes(s)) => {
            let records = analysis::load_records(&s.input)?;
            let tables = analysis::size_table(
                &records,
                AnalysisOptions {
                    include_warm: s.include_warm,
                },
            );
            let protocols = &tables[0].protocols;
            print!("{:<16}", "bytes");
            for p in protocols {
                print!("{:>8}", p.as_str());
            }
            println!();
            for t in &tables {
                print!("{:<16}", t.metric.as_str());
                for p in protocols {
                    let m = t.cell(&[], *p).and_then(|c| c.median);
                    print!(
                        "{:>8}",
                        m.map(analysis::format_sig).unwrap_or_else(|| "-".into())
                    );
                }
                println!();
            }
        }
    }
    Ok(())
}

fn read_scan_targets(path: &Path, ports: &[u16]) -> Result<Vec<SocketAddr>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ips: Vec<IpAddr> = if let Ok(ip) = line.parse::<IpAddr>() {
            vec![ip]
        } else {
            let net: ipnet::IpNet = line
                .parse()
                .with_context(|| format!("line {}: {line:?}", i + 1))?;
            net.hosts().collect()
        };
        for ip in ips {
            out.extend(ports.iter().map(|p| SocketAddr::new(ip, *p)));
        }
    }
    Ok(out)
}

async fn scan(a: ScanArgs) -> Result<()> {
    let addrs = read_scan_targets(&a.targets, &a.ports)?;
    let blocklist = load_blocklist(a.blocklist.as_deref())?;
    let cfg = SweepConfig {
        rate_per_sec: a.rate,
        blocklist: blocklist.clone(),
        ..SweepConfig::default()
    };
    let results = discovery::sweep(&addrs, &cfg).await?;
    let responders: Vec<_> = results.iter().filter(|r| r.responded).collect();
    println!(
        "{} probed, {} blocked, {} answered version negotiation",
        results.iter().filter(|r| !r.blocked).count(),
        results.iter().filter(|r| r.blocked).count(),
        responders.len()
    );
    if !a.verify {
        if let Some(out) = &a.out {
            write_json_lines(out, &responders)?;
        }
        return Ok(());
    }
    let client = a.tls.client(false)?;
    let mut targets: Vec<ResolverTarget> = Vec::new();
    for r in &responders {
        if targets.iter().any(|t| t.ip == r.addr.ip()) {
            continue;
        }
        let mut t = ResolverTarget::new(r.addr.ip());
        t.ports.insert(ProtocolKind::DoQ, r.addr.port());
        t.discovered_at = r.probed_at;
        targets.push(t);
    }
    let verified = discovery::verify_all(
        &client,
        &targets,
        &DnsQuery::a("google.com"),
        &blocklist,
        a.parallelism,
    )
    .await;
    for t in &verified {
        let support: Vec<&str> = t.support.iter().map(|p| p.as_str()).collect();
        println!(
            "{}\t{}\t{}",
            t.ip,
            if t.is_dox() { "dox" } else { "partial" },
            support.join(",")
        );
    }
    if let Some(out) = &a.out {
        write_json_lines(out, &verified)?;
    }
    Ok(())
}
