//! `dcmon` command line: batch analysis of recorded packet captures and PDU
//! power logs.
//!
//! Exit status is 0 on success, 1 on usage errors and 2 on data errors.
//! Results go to stdout or `--out`; diagnostics go to stderr.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dcmon_core::correlation::{
    detect_power_factor_decay, detect_regimes, read_correlation_csv, sliding_correlation, write_correlation_csv,
    write_events_csv, AlignedSeries, CorrelationPoint, DecayConfig, RegimeConfig, Thresholds, WindowConfig,
};
use dcmon_core::indicators::{
    bin_series, compute_tuples, read_tuples_csv, series_from_tuples, write_tuples_csv, BinAlignment, IndicatorSeries,
    Scope,
};
use dcmon_core::pipeline::{analyze, AnalysisConfig};
use dcmon_core::power_ingest::{parse_power_log, validate_cadence, PowerSample};
use dcmon_core::store::{persist, prune, Artifacts, RetentionPolicy};
use dcmon_core::synthgen::{generate, write_outputs, ScenarioSpec};
use dcmon_core::topology::{
    build_graph, score_relevance, write_dot, write_edges_csv, write_nodes_csv, write_relevance_csv, RelevanceWeights,
};
use dcmon_core::trace_ingest::{
    deduplicate, merge_streams, parse_pcap, read_stream_csv, write_stream_csv, EnclosureProfile, PacketRecord,
};
use log::{info, warn};

#[derive(Debug, Parser)]
#[command(name = "dcmon", version, about = "Offline traffic/power correlation analysis for data-center enclosures")]
pub struct Cli {
    /// Dataset directory used to persist artifacts (and required by `prune`).
    #[arg(long, global = true)]
    pub dataset_dir: Option<PathBuf>,
    /// More diagnostics on stderr; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge per-probe pcap files into one time-ordered stream CSV.
    Merge(MergeArgs),
    /// Per-second indicator tuples from a stream CSV.
    Indicators(IndicatorArgs),
    /// Communication graph and relevance ranking from a stream CSV.
    Graph(GraphArgs),
    /// Sliding-window correlation of packet rate and apparent power.
    Correlate(CorrelateArgs),
    /// Regime periods and alerts from a correlation CSV.
    Detect(DetectArgs),
    /// Synthetic captures and power log from a scenario file.
    Generate(GenerateArgs),
    /// Apply the retention policy to the dataset directory.
    Prune(PruneArgs),
    /// Captures and power log in, smoothed series, correlation and events out.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CaptureArgs {
    /// Capture files, one per probe; probe ids follow argument order.
    #[arg(required = true)]
    pub pcaps: Vec<PathBuf>,
    /// Clock offset per capture in microseconds, in capture order.
    #[arg(long = "offset-us", allow_negative_numbers = true, value_delimiter = ',')]
    pub offsets_us: Vec<i64>,
    /// Drop copies of a packet seen by other probes within this window.
    #[arg(long)]
    pub dedup_window_us: Option<i64>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[command(flatten)]
    pub capture: CaptureArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndicatorArgs {
    #[arg(long)]
    pub stream: PathBuf,
    /// Enclosure profile (JSON); without it every address is internal.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Add a node scope for every address in the stream.
    #[arg(long)]
    pub all_nodes: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub degree_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    pub rate_weight: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct WindowArgs {
    #[arg(long, default_value_t = 600)]
    pub window_s: u32,
    #[arg(long, default_value_t = 10)]
    pub cadence_s: u32,
    #[arg(long, default_value_t = 0.7)]
    pub strong: f64,
    #[arg(long, default_value_t = 0.3)]
    pub moderate: f64,
}

impl WindowArgs {
    fn config(&self) -> Result<WindowConfig<f64>> {
        let thresholds = Thresholds::new(self.strong, self.moderate).context("correlation: thresholds")?;
        Ok(WindowConfig { window_s: self.window_s, cadence_s: self.cadence_s, thresholds })
    }
}

#[derive(Debug, Clone, Copy, Args)]
pub struct RegimeArgs {
    /// Shortest strong run reported as a period.
    #[arg(long, default_value_t = 6)]
    pub min_run: usize,
    /// Shortest decorrelated run raised as an alert.
    #[arg(long, default_value_t = 12)]
    pub min_alert_run: usize,
    #[arg(long, default_value_t = 0.3)]
    pub decorrelation_band: f64,
}

impl RegimeArgs {
    fn config(&self, strong: f64) -> RegimeConfig<f64> {
        RegimeConfig {
            min_run: self.min_run,
            decorrelation_band: self.decorrelation_band,
            min_alert_run: self.min_alert_run,
            strong,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Alignment {
    Trailing,
    Centered,
}

impl From<Alignment> for BinAlignment {
    fn from(a: Alignment) -> Self {
        match a {
            Alignment::Trailing => BinAlignment::Trailing,
            Alignment::Centered => BinAlignment::Centered,
        }
    }
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Indicator tuples CSV; needs `--origin-us`.
    #[arg(long, conflicts_with = "stream", requires = "origin_us", required_unless_present = "stream")]
    pub tuples: Option<PathBuf>,
    /// Wall-clock start of second 0 of the tuples, microseconds.
    #[arg(long)]
    pub origin_us: Option<i64>,
    /// Stream CSV, used instead of tuples.
    #[arg(long)]
    pub stream: Option<PathBuf>,
    #[arg(long)]
    pub power: PathBuf,
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long, value_enum, default_value_t = Alignment::Trailing)]
    pub alignment: Alignment,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub correlation: PathBuf,
    /// Power log; enables power-factor decay alerts.
    #[arg(long)]
    pub power: Option<PathBuf>,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub regimes: RegimeArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub trace_days: u32,
    #[arg(long)]
    pub indicator_months: u32,
    #[arg(long)]
    pub power_months: u32,
    /// Reference time in microseconds; defaults to the current time.
    #[arg(long)]
    pub now_us: Option<i64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub capture: CaptureArgs,
    #[arg(long)]
    pub power: PathBuf,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub regimes: RegimeArgs,
    #[arg(long, value_enum, default_value_t = Alignment::Trailing)]
    pub alignment: Alignment,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Raised for argument combinations clap cannot express.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).try_init();
    log::set_max_level(level);

    match execute(&cli) {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            eprintln!("\nFor more information, try '--help'.");
            1
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let dataset = cli.dataset_dir.as_deref();
    match &cli.command {
        Command::Merge(a) => cmd_merge(a, dataset),
        Command::Indicators(a) => cmd_indicators(a, dataset),
        Command::Graph(a) => cmd_graph(a),
        Command::Correlate(a) => cmd_correlate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Prune(a) => {
            let dir = dataset.ok_or_else(|| UsageError("prune needs --dataset-dir".into()))?;
            cmd_prune(a, dir)
        }
        Command::Report(a) => cmd_report(a, dataset),
    }
}

fn require_files<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            bail!("input file {} does not exist", p.display());
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_profile(path: Option<&Path>) -> Result<EnclosureProfile> {
    match path {
        Some(p) => EnclosureProfile::load(p).with_context(|| format!("trace_ingest: profile {}", p.display())),
        None => Ok(EnclosureProfile::from_networks(&["0.0.0.0/0"]).expect("valid network")),
    }
}

fn read_stream(path: &Path) -> Result<Vec<PacketRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_stream_csv(io::BufReader::new(f)).with_context(|| format!("trace_ingest: stream {}", path.display()))
}

fn read_power(path: &Path) -> Result<Vec<PowerSample<f64>>> {
    let samples = parse_power_log::<f64>(path).with_context(|| format!("power_ingest: {}", path.display()))?;
    let gaps = validate_cadence(&samples, 10.0, 0.2).context("power_ingest: cadence")?;
    if !gaps.is_empty() {
        warn!("power_ingest: {} gaps outside 10 s +/- 20% (first at row {})", gaps.len(), gaps[0].index);
    }
    Ok(samples)
}

fn ingest(capture: &CaptureArgs) -> Result<Vec<PacketRecord>> {
    require_files(capture.pcaps.iter().map(PathBuf::as_path))?;
    if !capture.offsets_us.is_empty() && capture.offsets_us.len() != capture.pcaps.len() {
        return Err(UsageError(format!(
            "{} offsets given for {} captures",
            capture.offsets_us.len(),
            capture.pcaps.len()
        ))
        .into());
    }
    if capture.pcaps.len() > u16::MAX as usize + 1 {
        return Err(UsageError("too many captures".into()).into());
    }
    let mut streams = Vec::with_capacity(capture.pcaps.len());
    for (i, path) in capture.pcaps.iter().enumerate() {
        let offset = capture.offsets_us.get(i).copied().unwrap_or(0);
        let parsed =
            parse_pcap(path, i as u16, offset).with_context(|| format!("trace_ingest: capture {}", path.display()))?;
        if parsed.skipped_frames > 0 {
            info!("trace_ingest: {}: skipped {} non-IPv4 frames", path.display(), parsed.skipped_frames);
        }
        if parsed.truncated {
            warn!("trace_ingest: {}: truncated record, kept {} packets", path.display(), parsed.stream.records.len());
        }
        streams.push(parsed.stream);
    }
    let merged = merge_streams(streams).context("trace_ingest: merge")?;
    Ok(match capture.dedup_window_us {
        Some(w) => {
            let out = deduplicate(&merged, w);
            info!("trace_ingest: dedup removed {} records", merged.len() - out.len());
            out
        }
        None => merged,
    })
}

fn persist_into(dir: Option<&Path>, artifacts: Artifacts) -> Result<()> {
    if let Some(dir) = dir {
        let m = persist(dir, &artifacts).with_context(|| format!("store: persisting into {}", dir.display()))?;
        info!("store: manifest now lists {} files", m.entries.len());
    }
    Ok(())
}

fn cmd_merge(a: &MergeArgs, dataset: Option<&Path>) -> Result<()> {
    let merged = ingest(&a.capture)?;
    info!("trace_ingest: {} records merged", merged.len());
    let mut out = sink(a.out.as_deref())?;
    write_stream_csv(&mut out, &merged).context("trace_ingest: writing stream")?;
    out.flush()?;
    persist_into(dataset, Artifacts { traces: merged, ..Default::default() })
}

fn cmd_indicators(a: &IndicatorArgs, dataset: Option<&Path>) -> Result<()> {
    require_files([a.stream.as_path()].into_iter().chain(a.profile.as_deref()))?;
    let profile = load_profile(a.profile.as_deref())?;
    let stream = read_stream(&a.stream)?;
    let mut scopes: std::collections::BTreeSet<Scope> = [Scope::System].into();
    scopes.extend(profile.known_relevant_nodes().iter().map(|&n| Scope::Node(n)));
    scopes.extend(profile.known_relevant_couples().iter().map(|&c| Scope::Couple(c)));
    if a.all_nodes {
        let addrs: std::collections::BTreeSet<Ipv4Addr> = stream.iter().flat_map(|r| [r.src_addr, r.dst_addr]).collect();
        scopes.extend(addrs.into_iter().map(Scope::Node));
    }
    let series = compute_tuples(&stream, &profile, &scopes);
    if series.is_empty() {
        warn!("indicators: stream is empty");
    }
    eprintln!("origin_us={}", series.origin_micros);
    let mut out = sink(a.out.as_deref())?;
    write_tuples_csv(&mut out, &series.tuples).context("indicators: writing tuples")?;
    out.flush()?;
    persist_into(dataset, Artifacts { indicators: vec![series], ..Default::default() })
}

fn cmd_graph(a: &GraphArgs) -> Result<()> {
    require_files([a.stream.as_path()].into_iter().chain(a.profile.as_deref()))?;
    if a.top_k == 0 {
        return Err(UsageError("--top-k must be at least 1".into()).into());
    }
    let profile = load_profile(a.profile.as_deref())?;
    let graph = build_graph(&read_stream(&a.stream)?);
    let report = score_relevance(
        &graph,
        &profile,
        a.top_k,
        RelevanceWeights { degree: a.degree_weight, rate: a.rate_weight },
    );
    let dir = &a.out_dir;
    let ctx = |f: &str| format!("topology: writing {f}");
    let mut w = create(&dir.join("nodes.csv"))?;
    write_nodes_csv(&mut w, &graph).with_context(|| ctx("nodes.csv"))?;
    w.flush()?;
    let mut w = create(&dir.join("edges.csv"))?;
    write_edges_csv(&mut w, &graph).with_context(|| ctx("edges.csv"))?;
    w.flush()?;
    let mut w = create(&dir.join("graph.dot"))?;
    write_dot(&mut w, &graph, Some(&report)).with_context(|| ctx("graph.dot"))?;
    w.flush()?;
    let mut w = create(&dir.join("relevance.csv"))?;
    write_relevance_csv(&mut w, &report).with_context(|| ctx("relevance.csv"))?;
    w.flush()?;
    info!("topology: {} nodes, {} edges", graph.nodes.len(), graph.edges.len());
    Ok(())
}

fn warn_if_undefined(points: &[CorrelationPoint<f64>]) {
    if points.iter().all(|p| p.rho.is_none()) {
        warn!("correlation: every window is undefined (constant series or too few samples)");
    }
}

fn cmd_correlate(a: &CorrelateArgs) -> Result<()> {
    require_files([a.power.as_path()].into_iter().chain(a.tuples.as_deref()).chain(a.stream.as_deref()))?;
    let config = a.window.config()?;
    let tuples: IndicatorSeries = match (&a.tuples, &a.stream) {
        (Some(t), _) => {
            let f = File::open(t).with_context(|| format!("opening {}", t.display()))?;
            let rows = read_tuples_csv(io::BufReader::new(f)).with_context(|| format!("indicators: {}", t.display()))?;
            series_from_tuples(a.origin_us.expect("required by clap"), rows)
        }
        (None, Some(s)) => dcmon_core::pipeline::system_tuples(&read_stream(s)?),
        (None, None) => unreachable!("clap requires one input"),
    };
    let power = read_power(&a.power)?;
    let binned = bin_series(&tuples, &power, config.cadence_s, a.alignment.into()).context("indicators: binning")?;
    if binned.dropped > 0 {
        info!("indicators: {} power samples outside the traffic span", binned.dropped);
    }
    let points = sliding_correlation(&binned.series, &config).context("correlation")?;
    warn_if_undefined(&points);
    let mut out = sink(a.out.as_deref())?;
    write_correlation_csv(&mut out, &points).context("correlation: writing")?;
    out.flush()?;
    Ok(())
}

fn cmd_detect(a: &DetectArgs) -> Result<()> {
    require_files([a.correlation.as_path()].into_iter().chain(a.power.as_deref()))?;
    let config = a.window.config()?;
    let f = File::open(&a.correlation).with_context(|| format!("opening {}", a.correlation.display()))?;
    let points = read_correlation_csv(io::BufReader::new(f), &config)
        .with_context(|| format!("correlation: {}", a.correlation.display()))?;
    let mut events = detect_regimes(&points, &a.regimes.config(a.window.strong)).context("correlation: regimes")?;
    if let Some(p) = &a.power {
        events.extend(detect_power_factor_decay(&read_power(p)?, &DecayConfig::default()));
        events.sort_by_key(|e| (e.start_ts, e.end_ts));
    }
    let mut out = sink(a.out.as_deref())?;
    write_events_csv(&mut out, &events).context("correlation: writing events")?;
    out.flush()?;
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    require_files([a.scenario.as_path()])?;
    let mut spec = ScenarioSpec::load(&a.scenario).with_context(|| format!("synthgen: {}", a.scenario.display()))?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let generated = generate(&spec).context("synthgen")?;
    let written = write_outputs(&generated, &a.out_dir).context("synthgen")?;
    let mut out = io::stdout().lock();
    for p in written {
        writeln!(out, "{}", p.display())?;
    }
    Ok(())
}

fn cmd_prune(a: &PruneArgs, dir: &Path) -> Result<()> {
    let policy = RetentionPolicy::new(a.trace_days, a.indicator_months, a.power_months)
        .map_err(|e| UsageError(e.to_string()))?;
    let now = match a.now_us {
        Some(t) => t,
        None => SystemTime::now().duration_since(UNIX_EPOCH)?.as_micros() as i64,
    };
    let report = prune(dir, &policy, now).with_context(|| format!("store: pruning {}", dir.display()))?;
    let json = serde_json::json!({ "removed": report.removed, "kept": report.kept });
    println!("{}", serde_json::to_string_pretty(&json)?);
    Ok(())
}

fn write_mean_csv(path: &Path, raw: &AlignedSeries<f64>, mean: &AlignedSeries<f64>, traffic: bool) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "ts_micros,raw,mean")?;
    for (r, m) in raw.points.iter().zip(&mean.points) {
        let (a, b) = if traffic { (r.traffic_pps, m.traffic_pps) } else { (r.apparent_va, m.apparent_va) };
        writeln!(w, "{},{a:?},{b:?}", r.ts_micros)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_report(a: &ReportArgs, dataset: Option<&Path>) -> Result<()> {
    require_files([a.power.as_path()])?;
    let window = a.window.config()?;
    let traces = ingest(&a.capture)?;
    let power = read_power(&a.power)?;
    let tuples = dcmon_core::pipeline::system_tuples(&traces);
    let config = AnalysisConfig {
        window,
        regimes: a.regimes.config(a.window.strong),
        decay: Some(DecayConfig::default()),
        alignment: a.alignment.into(),
    };
    let analysis = analyze(&tuples, &power, &config).context("report")?;
    warn_if_undefined(&analysis.points);

    let dir = &a.out_dir;
    write_mean_csv(&dir.join("traffic_mean.csv"), &analysis.binned.series, &analysis.smoothed, true)?;
    write_mean_csv(&dir.join("power_mean.csv"), &analysis.binned.series, &analysis.smoothed, false)?;
    let mut w = create(&dir.join("correlation.csv"))?;
    write_correlation_csv(&mut w, &analysis.points).context("correlation: writing")?;
    w.flush()?;
    let mut w = create(&dir.join("events.csv"))?;
    write_events_csv(&mut w, &analysis.events).context("correlation: writing events")?;
    w.flush()?;
    for e in &analysis.events {
        info!("{} {}..{} mean {:.3}", e.kind, e.start_ts, e.end_ts, e.mean_rho);
    }
    persist_into(dataset, Artifacts { traces, indicators: vec![tuples], power })
}
