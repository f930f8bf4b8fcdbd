//! The `burstlab` command line.
//!
//! Every subcommand is a plain function over parsed arguments so the
//! integration tests can drive them without spawning processes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use burstlab::fit::{fit_vr_model, EmConfig, FitOptions, GroupWeighting, TraceGroup};
use burstlab::generator::{load_trace_with_unit, BurstGenerator, PeriodUnit, TraceFile};
use burstlab::model::VrModelConstants;
use burstlab::rv::{RngStream, Variate, RNG_ALGORITHM};
use burstlab::sim::{percentile, run_scenario, ScenarioConfig, SourceSpec, StationConfig};
use burstlab::wire::{fragment_burst, DEFAULT_FRAGMENT_SIZE};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

pub mod live;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] burstlab::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_io() => EXIT_IO,
            CliError::Core(_) => EXIT_DATA,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "burstlab",
    version,
    about = "Bursty XR traffic: generate, replay, simulate, fit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic trace CSV.
    Generate(GenerateArgs),
    /// Print the burst schedule a source produces, with fragment counts.
    Replay(ReplayArgs),
    /// Run the bottleneck-link simulation and print a metrics report.
    Simulate(SimulateArgs),
    /// Fit the VR model constants to one or more traces.
    Fit(FitArgs),
    /// Summary statistics of a trace.
    Stats(StatsArgs),
    /// Send fragmented bursts over UDP.
    Send(live::SendArgs),
    /// Receive and reassemble bursts over UDP.
    Recv(live::RecvArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Vr,
    Simple,
    Trace,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum PeriodUnitArg {
    /// Integer microseconds.
    #[default]
    Us,
    /// Fractional seconds.
    S,
}

impl From<PeriodUnitArg> for PeriodUnit {
    fn from(u: PeriodUnitArg) -> Self {
        match u {
            PeriodUnitArg::Us => PeriodUnit::Microseconds,
            PeriodUnitArg::S => PeriodUnit::Seconds,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct SourceArgs {
    #[arg(long, value_enum, default_value = "vr")]
    pub model: ModelKind,
    /// Target data rate of the VR model, Mbit/s.
    #[arg(long, default_value_t = 50.0)]
    pub rate_mbps: f64,
    /// Frame rate of the VR model, frames/s.
    #[arg(long, default_value_t = 60.0)]
    pub fps: f64,
    /// Burst size distribution in bytes for the simple model, e.g. `const:10000`.
    #[arg(long)]
    pub size_dist: Option<Variate>,
    /// Burst period distribution in seconds for the simple model, e.g. `const:0.01`.
    #[arg(long)]
    pub period_dist: Option<Variate>,
    /// Trace CSV for the trace model.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Unit of the trace period column.
    #[arg(long, value_enum, default_value = "us")]
    pub period_unit: PeriodUnitArg,
    /// Skip trace records starting before this time, seconds.
    #[arg(long, default_value_t = 0.0)]
    pub start_time: f64,
    /// VR model constants JSON (a fit report or a bare constants object).
    #[arg(long)]
    pub params: Option<PathBuf>,
}

impl SourceArgs {
    pub fn to_spec(&self) -> Result<SourceSpec> {
        Ok(match self.model {
            ModelKind::Vr => {
                let constants = match &self.params {
                    Some(p) => VrModelConstants::load(p)?,
                    None => VrModelConstants::default(),
                };
                SourceSpec::Vr {
                    target_rate_bps: self.rate_mbps * 1e6,
                    frame_rate: self.fps,
                    constants,
                }
            }
            ModelKind::Simple => {
                let (Some(size), Some(period)) = (&self.size_dist, &self.period_dist) else {
                    return Err(CliError::Usage(
                        "--model simple needs --size-dist and --period-dist".into(),
                    ));
                };
                SourceSpec::Simple {
                    size: size.clone(),
                    period: period.clone(),
                }
            }
            ModelKind::Trace => {
                let path = self
                    .trace
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("--model trace needs --trace".into()))?;
                SourceSpec::Trace {
                    trace: Arc::new(load_trace_with_unit(path, self.period_unit.into())?),
                    start_time_s: self.start_time,
                }
            }
        })
    }

    /// Metadata describing the source, for output headers.
    pub fn describe(&self, spec: &SourceSpec) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        match spec {
            SourceSpec::Vr {
                target_rate_bps,
                frame_rate,
                constants,
            } => {
                m.insert("model".into(), "vr".into());
                m.insert(
                    "target_rate_mbps".into(),
                    (target_rate_bps / 1e6).to_string(),
                );
                m.insert("fps".into(), frame_rate.to_string());
                m.insert(
                    "constants".into(),
                    serde_json::to_string(constants).unwrap(),
                );
            }
            SourceSpec::Simple { size, period } => {
                m.insert("model".into(), "simple".into());
                m.insert("size_dist".into(), size.to_string());
                m.insert("period_dist".into(), period.to_string());
            }
            SourceSpec::Trace {
                trace,
                start_time_s,
            } => {
                m.insert("model".into(), "trace".into());
                if let Some(p) = &self.trace {
                    m.insert("trace".into(), p.display().to_string());
                }
                m.insert("start_time_s".into(), start_time_s.to_string());
                for (k, v) in &trace.metadata {
                    m.insert(format!("source.{k}"), v.clone());
                }
            }
        }
        m
    }
}

fn write_output(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, body)
            .map_err(|e| CliError::io(format!("writing {}", path.display()), e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .map_err(|e| CliError::io("writing stdout", e))
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Bursts starting before this time are written, seconds.
    #[arg(long, default_value_t = 60.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Draws bursts whose start time lies in `[0, duration)`.
fn draw_bursts(
    generator: &mut dyn BurstGenerator,
    duration_ns: u64,
) -> Result<Vec<burstlab::generator::BurstDescriptor>> {
    let mut t = 0u64;
    let mut out = Vec::new();
    while t < duration_ns && generator.has_next_burst() {
        let b = generator.generate_burst()?;
        t = t.saturating_add(b.next_period_ns);
        out.push(b);
    }
    Ok(out)
}

fn duration_ns(duration_s: f64) -> Result<u64> {
    if !(duration_s >= 0.0 && duration_s.is_finite()) {
        return Err(CliError::Usage(format!("invalid duration {duration_s}")));
    }
    Ok((duration_s * 1e9).round() as u64)
}

pub fn generate_trace(args: &GenerateArgs) -> Result<TraceFile> {
    let spec = args.source.to_spec()?;
    let mut generator = spec.build(RngStream::new(args.seed, 1))?;
    let records = draw_bursts(generator.as_mut(), duration_ns(args.duration_s)?)?;
    if records.is_empty() {
        return Err(burstlab::Error::EmptyTrace.into());
    }
    let mut metadata = args.source.describe(&spec);
    metadata.insert("generator".into(), "burstlab generate".into());
    metadata.insert("seed".into(), args.seed.to_string());
    metadata.insert("duration_s".into(), args.duration_s.to_string());
    metadata.insert("rng".into(), RNG_ALGORITHM.into());
    metadata.insert("columns".into(), "burst_size_bytes,next_period_us".into());
    Ok(TraceFile { metadata, records })
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let trace = generate_trace(args)?;
    write_output(args.out.as_deref(), &trace.to_csv_string())
}

#[derive(Clone, Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 10.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_FRAGMENT_SIZE)]
    pub fragment_size: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Burst schedule CSV: `burst_seq,time_us,burst_size_bytes,next_period_us,fragments`.
pub fn replay_schedule(args: &ReplayArgs) -> Result<String> {
    let spec = args.source.to_spec()?;
    let mut generator = spec.build(RngStream::new(args.seed, 1))?;
    let bursts = draw_bursts(generator.as_mut(), duration_ns(args.duration_s)?)?;
    let mut s = String::new();
    let mut meta = args.source.describe(&spec);
    meta.insert("generator".into(), "burstlab replay".into());
    meta.insert("seed".into(), args.seed.to_string());
    meta.insert("duration_s".into(), args.duration_s.to_string());
    meta.insert("fragment_size".into(), args.fragment_size.to_string());
    for (k, v) in &meta {
        let _ = writeln!(s, "# {k}: {v}");
    }
    let _ = writeln!(
        s,
        "burst_seq,time_us,burst_size_bytes,next_period_us,fragments"
    );
    let mut t = 0u64;
    for (seq, b) in bursts.iter().enumerate() {
        let frags = fragment_burst(seq as u32, b.burst_size, t, args.fragment_size)?;
        let _ = writeln!(
            s,
            "{seq},{},{},{},{}",
            t / 1000,
            b.burst_size,
            b.next_period_ns / 1000,
            frags.len()
        );
        t += b.next_period_ns;
    }
    Ok(s)
}

pub fn cmd_replay(args: &ReplayArgs) -> Result<()> {
    write_output(args.out.as_deref(), &replay_schedule(args)?)
}

#[derive(Clone, Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Station count, a range `A..B` (inclusive) or a list `1,2,4`.
    #[arg(long, default_value = "1")]
    pub stations: String,
    #[arg(long, default_value_t = 866.7)]
    pub link_mbps: f64,
    #[arg(long, default_value_t = 0.0)]
    pub prop_delay_us: f64,
    #[arg(long, default_value_t = 0)]
    pub overhead_bytes: u64,
    #[arg(long, default_value_t = 0.0)]
    pub loss: f64,
    /// Fragments that may wait for the link; 0 is unbounded.
    #[arg(long, default_value_t = 0)]
    pub queue_limit: usize,
    #[arg(long, default_value_t = DEFAULT_FRAGMENT_SIZE)]
    pub fragment_size: usize,
    #[arg(long, default_value_t = 10.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Station i starts at i times this offset, microseconds.
    #[arg(long, default_value_t = 0.0)]
    pub start_offset_us: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_station_counts(s: &str) -> Result<Vec<usize>> {
    let bad = || CliError::Usage(format!("cannot parse station count {s:?}"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let counts = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if counts.is_empty() || counts.contains(&0) {
        return Err(bad());
    }
    Ok(counts)
}

pub fn simulate_reports(args: &SimulateArgs) -> Result<Vec<Value>> {
    let spec = args.source.to_spec()?;
    if !(args.link_mbps > 0.0) || !(args.prop_delay_us >= 0.0) || !(args.start_offset_us >= 0.0) {
        return Err(CliError::Usage(
            "link rate must be positive and delays non-negative".into(),
        ));
    }
    let source_meta = args.source.describe(&spec);
    let mut reports = Vec::new();
    for n in parse_station_counts(&args.stations)? {
        let cfg = ScenarioConfig {
            stations: (0..n)
                .map(|i| StationConfig {
                    source: spec.clone(),
                    start_offset_ns: (i as f64 * args.start_offset_us * 1e3).round() as u64,
                })
                .collect(),
            link_rate_bps: (args.link_mbps * 1e6).round() as u64,
            propagation_delay_ns: (args.prop_delay_us * 1e3).round() as u64,
            overhead_bytes: args.overhead_bytes,
            loss_prob: args.loss,
            queue_limit: args.queue_limit,
            duration_s: args.duration_s,
            seed: args.seed,
            fragment_size: args.fragment_size,
        };
        let report = run_scenario(&cfg)?;
        let mut v = serde_json::to_value(&report).map_err(burstlab::Error::from)?;
        v["n_stations"] = json!(n);
        v["source"] = json!(source_meta);
        reports.push(v);
    }
    Ok(reports)
}

pub fn simulate_json(args: &SimulateArgs) -> Result<String> {
    let reports = simulate_reports(args)?;
    let v = if reports.len() == 1 {
        reports.into_iter().next().unwrap()
    } else {
        Value::Array(reports)
    };
    Ok(serde_json::to_string_pretty(&v).map_err(burstlab::Error::from)? + "\n")
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    write_output(args.out.as_deref(), &simulate_json(args)?)
}

#[derive(Clone, Debug, Args)]
pub struct FitArgs {
    /// Trace CSVs, one per (rate, frame rate) group. Repeat the flag.
    #[arg(long = "trace", required = true)]
    pub traces: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "us")]
    pub period_unit: PeriodUnitArg,
    #[arg(long, default_value_t = 50)]
    pub restarts: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Weight every group equally instead of by goodness of fit.
    #[arg(long)]
    pub uniform_weights: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn fit_json(args: &FitArgs) -> Result<String> {
    let groups = args
        .traces
        .iter()
        .map(|p| {
            Ok(TraceGroup::from_trace(&load_trace_with_unit(
                p,
                args.period_unit.into(),
            )?))
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = FitOptions {
        em: EmConfig {
            restarts: args.restarts,
            max_iter: args.max_iter,
            tol: args.tol,
        },
        weighting: if args.uniform_weights {
            GroupWeighting::Uniform
        } else {
            GroupWeighting::Goodness
        },
        seed: args.seed,
    };
    let report = fit_vr_model(&groups, &opts)?;
    let mut v = serde_json::to_value(&report).map_err(burstlab::Error::from)?;
    v["options"] = serde_json::to_value(opts).map_err(burstlab::Error::from)?;
    v["traces"] = json!(args
        .traces
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>());
    Ok(serde_json::to_string_pretty(&v).map_err(burstlab::Error::from)? + "\n")
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    write_output(args.out.as_deref(), &fit_json(args)?)
}

#[derive(Clone, Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, value_enum, default_value = "us")]
    pub period_unit: PeriodUnitArg,
}

fn moments(xs: &[u64]) -> Value {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    json!({
        "mean": mean,
        "std": std,
        "p95": percentile(xs, 95.0).ok(),
    })
}

pub fn trace_stats(trace: &TraceFile) -> Value {
    let sizes: Vec<u64> = trace.records.iter().map(|r| r.burst_size).collect();
    let periods_us: Vec<u64> = trace
        .records
        .iter()
        .map(|r| r.next_period_ns / 1000)
        .collect();
    let total_bytes: u64 = sizes.iter().sum();
    let total_s = trace.duration_ns() as f64 / 1e9;
    json!({
        "count": trace.records.len(),
        "size_bytes": moments(&sizes),
        "period_us": moments(&periods_us),
        "duration_s": total_s,
        "data_rate_bps": total_bytes as f64 * 8.0 / total_s,
        "metadata": trace.metadata,
    })
}

pub fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let trace = load_trace_with_unit(&args.trace, args.period_unit.into())?;
    let body =
        serde_json::to_string_pretty(&trace_stats(&trace)).map_err(burstlab::Error::from)? + "\n";
    write_output(None, &body)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Replay(a) => cmd_replay(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Send(a) => live::cmd_send(&a),
        Command::Recv(a) => live::cmd_recv(&a),
    }
}
