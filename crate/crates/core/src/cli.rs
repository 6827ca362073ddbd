//! Command-line front end.
//!
//! Each subcommand is a library function returning data, so the binary only
//! parses arguments, prints, and maps results to exit codes.
//!
//! Output files of `run`:
//!
//! - `trace.jsonl`: a header line, then one event per line.
//! - `metrics.csv`: columns `kind,id,sent,destinations,latency,throughput`.
//!   One `message` row per multicast; a final `run` row carries throughput.
//! - `report.txt`: run status and the checker's verdicts.
//!
//! `bench` writes `tree,groups,replicas,dst_count,payload,messages,mean_latency,p50_latency,max_latency,throughput`.
//! Times are simulated ticks; throughput is messages per 1000 ticks.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::checker::{check, CheckReport};
use crate::overlay::{OverlayError, Shape, TopologyFile, TreeOverlay};
use crate::sim::{self, DestinationSpec, MessageLatency, RunStatus, Scenario, ScenarioFile, SimError, SimOutcome};
use crate::trace::{DeliveryTrace, Time, TraceError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "tram", version, about = "Simulate and verify tree-based atomic multicast")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario, check its trace and write trace, metrics and report.
    Run(RunArgs),
    /// Check a recorded trace.
    Check(CheckArgs),
    /// Sweep workloads and report simulated latency and throughput as CSV.
    Bench(BenchArgs),
    /// Write a topology file of a standard shape.
    GenTopology(GenTopologyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Replaces the scenario's own topology.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    /// A trace.jsonl file.
    pub trace: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = Shape::Base)]
    pub shape: Shape,
    #[arg(long, default_value_t = 8)]
    pub groups: u32,
    #[arg(long, default_value_t = 3)]
    pub replicas: u32,
    /// Use this topology instead of a generated shape.
    #[arg(long, conflicts_with = "sweep_replicas")]
    pub topology: Option<PathBuf>,
    /// Sweep destination counts 1..=N.
    #[arg(long)]
    pub sweep_dst: Option<u32>,
    /// Destination count when not sweeping.
    #[arg(long, default_value_t = 1)]
    pub dst: u32,
    /// Payload sizes in bytes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub payload: Vec<usize>,
    /// Replica counts to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sweep_replicas: Vec<u32>,
    #[arg(long, default_value_t = 200)]
    pub messages: u32,
    #[arg(long, default_value_t = 4)]
    pub clients: u32,
    /// Ticks between consecutive sends.
    #[arg(long, default_value_t = 40)]
    pub interval: Time,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Bytes transferred per tick; 0 ignores payload size.
    #[arg(long, default_value_t = 64)]
    pub bandwidth: u64,
    /// Issue writes to several targets one after another instead of together.
    #[arg(long)]
    pub serialized: bool,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenTopologyArgs {
    #[arg(long, value_enum)]
    pub shape: Shape,
    #[arg(long)]
    pub groups: u32,
    #[arg(long, default_value_t = 3)]
    pub replicas: u32,
    /// Destination file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Result of `run`.
#[derive(Debug)]
pub struct RunSummary {
    pub outcome: SimOutcome,
    pub report: CheckReport,
    pub out: PathBuf,
}

impl RunSummary {
    /// Quiescent, every check passed, nothing blocked.
    pub fn ok(&self) -> bool {
        self.outcome.status == RunStatus::Quiescent && self.report.is_clean()
    }
}

#[derive(Debug, Serialize)]
struct MetricRow {
    kind: &'static str,
    id: Option<u64>,
    sent: Option<Time>,
    destinations: Option<usize>,
    latency: Option<Time>,
    throughput: Option<f64>,
}

/// Messages whose every destination delivered, per 1000 ticks between the
/// first send and the last completion.
pub fn throughput(latencies: &[MessageLatency]) -> f64 {
    let done: Vec<(Time, Time)> = latencies
        .iter()
        .filter_map(|l| l.latency.map(|d| (l.sent, l.sent + d)))
        .collect();
    let Some(start) = done.iter().map(|d| d.0).min() else {
        return 0.0;
    };
    let end = done.iter().map(|d| d.1).max().unwrap_or(start);
    done.len() as f64 * 1000.0 / (end - start).max(1) as f64
}

pub fn load_scenario(path: &Path, topology: Option<&Path>, seed: Option<u64>) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut file: ScenarioFile = toml::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if let Some(seed) = seed {
        file.seed = seed;
    }
    Ok(match topology {
        Some(t) => Scenario::from_file_with_tree(&file, TreeOverlay::load(t)?)?,
        None => Scenario::from_file(&file, path.parent().unwrap_or(Path::new(".")))?,
    })
}

pub fn cmd_run(args: &RunArgs) -> Result<RunSummary, CliError> {
    let scenario = load_scenario(&args.scenario, args.topology.as_deref(), args.seed)?;
    let outcome = sim::run(scenario)?;
    let report = check(&outcome.trace)?;
    let out = &args.out;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let path = out.join("trace.jsonl");
    let f = fs::File::create(&path).map_err(io_err(&path))?;
    outcome.trace.write_jsonl(BufWriter::new(f)).map_err(io_err(&path))?;

    let path = out.join("metrics.csv");
    let latencies = sim::message_latencies(&outcome.trace);
    let mut w = csv::Writer::from_path(&path)?;
    for l in &latencies {
        w.serialize(MetricRow {
            kind: "message",
            id: Some(l.id.0),
            sent: Some(l.sent),
            destinations: Some(l.destinations),
            latency: l.latency,
            throughput: None,
        })?;
    }
    w.serialize(MetricRow {
        kind: "run",
        id: None,
        sent: None,
        destinations: None,
        latency: None,
        throughput: Some(throughput(&latencies)),
    })?;
    w.flush().map_err(io_err(&path))?;

    let path = out.join("report.txt");
    let mut text = format!(
        "status: {}  steps: {}  end: {}\n{}",
        outcome.status, outcome.steps, outcome.end_time, report
    );
    if outcome.status != RunStatus::Quiescent {
        text.push_str(&outcome.snapshot());
    }
    fs::write(&path, text).map_err(io_err(&path))?;

    Ok(RunSummary {
        outcome,
        report,
        out: out.clone(),
    })
}

pub fn cmd_check(args: &CheckArgs) -> Result<CheckReport, CliError> {
    let f = fs::File::open(&args.trace).map_err(io_err(&args.trace))?;
    let trace = DeliveryTrace::read_jsonl(io::BufReader::new(f))?;
    Ok(check(&trace)?)
}

/// One row of `bench` output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchPoint {
    pub tree: String,
    pub groups: u32,
    pub replicas: u32,
    pub dst_count: u32,
    pub payload: usize,
    pub messages: u32,
    pub mean_latency: f64,
    pub p50_latency: Time,
    pub max_latency: Time,
    pub throughput: f64,
}

fn bench_point(
    args: &BenchArgs,
    tree: &TreeOverlay,
    name: &str,
    k: u32,
    payload: usize,
) -> Result<BenchPoint, CliError> {
    let mut s = Scenario::new(tree.clone(), args.clients, args.seed);
    s.workload.messages = args.messages;
    s.workload.interval = args.interval;
    s.workload.payload = payload;
    s.workload.destinations = DestinationSpec::Uniform { k: Some(k) };
    s.latency.bytes_per_unit = args.bandwidth;
    s.latency.batched = !args.serialized;
    s.validate()?;
    let outcome = sim::run(s)?;
    let report = check(&outcome.trace)?;
    if outcome.status != RunStatus::Quiescent || !report.is_clean() {
        return Err(CliError::Usage(format!(
            "{name} dst={k} payload={payload}: run did not complete cleanly ({})\n{report}",
            outcome.status
        )));
    }
    let lat = sim::message_latencies(&outcome.trace);
    let mut v: Vec<Time> = lat.iter().filter_map(|l| l.latency).collect();
    v.sort_unstable();
    let mean = if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<Time>() as f64 / v.len() as f64
    };
    Ok(BenchPoint {
        tree: name.to_string(),
        groups: tree.len() as u32,
        replicas: tree.replicas(tree.root())?,
        dst_count: k,
        payload,
        messages: args.messages,
        mean_latency: mean,
        p50_latency: v.get(v.len().saturating_sub(1) / 2).copied().unwrap_or(0),
        max_latency: v.last().copied().unwrap_or(0),
        throughput: throughput(&lat),
    })
}

/// Runs every point of the requested sweep.
pub fn bench(args: &BenchArgs) -> Result<Vec<BenchPoint>, CliError> {
    let name = match (&args.topology, args.shape) {
        (Some(p), _) => p
            .file_stem()
            .map_or("custom".into(), |s| s.to_string_lossy().into_owned()),
        (None, Shape::Base) => "base".into(),
        (None, Shape::Breadth) => "breadth".into(),
        (None, Shape::Depth) => "depth".into(),
    };
    let trees: Vec<TreeOverlay> = match &args.topology {
        Some(p) => vec![TreeOverlay::load(p)?],
        None if args.sweep_replicas.is_empty() => vec![TreeOverlay::shape(args.shape, args.groups, args.replicas)?],
        None => args
            .sweep_replicas
            .iter()
            .map(|&n| TreeOverlay::shape(args.shape, args.groups, n))
            .collect::<Result<_, _>>()?,
    };
    let ks: Vec<u32> = match args.sweep_dst {
        Some(0) => return Err(CliError::Usage("--sweep-dst needs at least 1".into())),
        Some(n) => (1..=n).collect(),
        None => vec![args.dst],
    };
    let mut jobs = Vec::new();
    for tree in &trees {
        for &k in &ks {
            if k as usize > tree.len() {
                return Err(CliError::Usage(format!(
                    "{k} destinations but only {} groups",
                    tree.len()
                )));
            }
            for &p in &args.payload {
                jobs.push((tree, k, p));
            }
        }
    }
    // Points are independent and deterministic, so they run in parallel.
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(tree, k, p)| {
                let name = name.as_str();
                scope.spawn(move || bench_point(args, tree, name, k, p))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench worker panicked"))
            .collect()
    })
}

pub fn write_bench_csv<W: Write>(points: &[BenchPoint], w: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(w);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))?;
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<BenchPoint>, CliError> {
    let points = bench(args)?;
    match &args.out {
        Some(path) => write_bench_csv(&points, fs::File::create(path).map_err(io_err(path))?)?,
        None => write_bench_csv(&points, io::stdout().lock())?,
    }
    Ok(points)
}

pub fn cmd_gen_topology(args: &GenTopologyArgs) -> Result<TopologyFile, CliError> {
    let file = TreeOverlay::shape(args.shape, args.groups, args.replicas)?.to_file();
    match &args.out {
        Some(path) => fs::write(path, file.to_toml()).map_err(io_err(path))?,
        None => print!("{}", file.to_toml()),
    }
    Ok(file)
}

/// Exit codes: 0 success, 1 a check failed or obligations were blocked, 2 usage or I/O error.
pub fn dispatch(cli: &Cli) -> Result<ExitCode, CliError> {
    let fail = |ok: bool| if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
    match &cli.command {
        Command::Run(args) => {
            let summary = cmd_run(args)?;
            println!(
                "status: {}  steps: {}  end: {}",
                summary.outcome.status, summary.outcome.steps, summary.outcome.end_time
            );
            print!("{}", summary.report);
            println!("wrote {}", summary.out.display());
            Ok(fail(summary.ok()))
        }
        Command::Check(args) => {
            let report = cmd_check(args)?;
            if args.json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{report}");
            }
            Ok(fail(report.is_clean()))
        }
        Command::Bench(args) => {
            cmd_bench(args)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::GenTopology(args) => {
            cmd_gen_topology(args)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::MessageId;

    fn lat(sent: Time, latency: Option<Time>) -> MessageLatency {
        MessageLatency {
            id: MessageId(sent + 1),
            sent,
            destinations: 1,
            latency,
        }
    }

    #[test]
    fn throughput_counts_completed_messages_over_span() {
        let l = [lat(0, Some(10)), lat(10, Some(10)), lat(20, None), lat(30, Some(20))];
        // 3 messages between t=0 and t=50.
        assert!((throughput(&l) - 60.0).abs() < 1e-9);
        assert_eq!(throughput(&[lat(0, None)]), 0.0);
    }

    #[test]
    fn cli_parses_every_subcommand() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from([
            "tram",
            "bench",
            "--shape",
            "depth",
            "--sweep-dst",
            "4",
            "--payload",
            "16,256",
        ])
        .unwrap();
        let Command::Bench(b) = cli.command else { panic!() };
        assert_eq!(
            (b.shape, b.sweep_dst, b.payload),
            (Shape::Depth, Some(4), vec![16, 256])
        );
        assert!(Cli::try_parse_from(["tram", "gen-topology", "--shape", "ring", "--groups", "2"]).is_err());
    }
}
