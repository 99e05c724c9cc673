//! Command line front end: single runs, load sweeps, validation and trace
//! replay.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sdwlan_core::report::MetricsReport;
use sdwlan_core::scenario::{parse_scenario, Scenario, ScenarioError};
use sdwlan_core::sim::trace::{digest_records, TraceRecord};
use sdwlan_core::sim::{run_with, Mode, RunError, RunOptions};

pub const EXIT_OK: i32 = 0;
/// I/O or other failures outside the scenario and the run.
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_ASSERTION: i32 = 3;

pub const REPORT_JSON: &str = "report.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CSV: &str = "sweep.csv";

pub const DEFAULT_LOADS: [f64; 6] = [0.0, 0.25, 0.5, 0.75, 0.9, 1.2];

#[derive(Debug, Parser)]
#[command(name = "sdwlan", version, about = "SDN WLAN controller simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write report.json and metrics.csv.
    Run(RunArgs),
    /// Scale traffic over a list of load points, in one or both modes.
    Sweep(SweepArgs),
    /// Parse and validate a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Re-execute the run behind a trace file and compare digests.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value = "proposed")]
    pub mode: Mode,
    /// Defaults to the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Also dump the event trace (JSON lines) to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Both modes when absent.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Offered-load multipliers applied to every traffic rate.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LOADS)]
    pub loads: Vec<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Failure of a command, already mapped to its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = match e {
            ScenarioError::Io { .. } => EXIT_ERROR,
            _ => EXIT_INVALID,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = match e {
            RunError::Invalid(_) => EXIT_INVALID,
            RunError::Assertion(_) => EXIT_ASSERTION,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure {
            code: EXIT_ERROR,
            message: format!("{e:#}"),
        }
    }
}

/// Runs a parsed command line; diagnostics go to standard error.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Replay { scenario, trace } => cmd_replay(&scenario, &trace),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    parse_scenario(path).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

pub fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let sc = load(path)?;
    println!(
        "{}: ok ({} APs, {} UEs, {} directives)",
        sc.name,
        sc.topology.aps.len(),
        sc.ues.len(),
        sc.directives.len()
    );
    Ok(())
}

pub fn cmd_run(a: &RunArgs) -> Result<(), Failure> {
    let sc = load(&a.scenario)?;
    let seed = a.seed.unwrap_or(sc.seed);
    let out = run_with(
        &sc,
        a.mode,
        seed,
        RunOptions {
            keep_trace: a.trace.is_some(),
        },
    )?;
    let r = &out.report;
    let mut files = vec![
        (a.out.join(REPORT_JSON), r.to_json()),
        (a.out.join(METRICS_CSV), r.to_csv()),
    ];
    if let (Some(path), Some(records)) = (&a.trace, &out.trace) {
        files.push((path.clone(), trace_file(r, records)));
    }
    write_all_or_nothing(&files)?;
    println!(
        "{} mode={} seed={} events={} digest={} control_rtt_mean_us={:.1} data_mbps={:.3}",
        r.scenario,
        r.mode,
        r.seed,
        r.events,
        r.digest,
        r.control_rtt_us.mean,
        r.data_throughput_mbps()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub load: f64,
    pub mode: Mode,
    pub seed: u64,
    pub mean_rtt_us: f64,
    pub p95_rtt_us: u64,
    pub rtt_samples: u64,
    pub throughput_mbps: f64,
    pub drops: u64,
    pub digest: String,
}

impl SweepRow {
    fn from_report(load: f64, r: &MetricsReport) -> Self {
        Self {
            load,
            mode: r.mode,
            seed: r.seed,
            mean_rtt_us: r.control_rtt_us.mean,
            p95_rtt_us: r.control_rtt_us.p95,
            rtt_samples: r.control_rtt_us.samples,
            throughput_mbps: r.data_throughput_mbps(),
            drops: r.total_drops(),
            digest: r.digest.clone(),
        }
    }
}

/// Runs every (mode, load) point in parallel. Point `i` of `loads` runs
/// with seed `seed ^ i` in each mode. Results come back mode-major, in the
/// order of `modes` and `loads`.
pub fn sweep_reports(
    sc: &Scenario,
    modes: &[Mode],
    loads: &[f64],
    seed: u64,
) -> Result<Vec<(f64, MetricsReport)>, RunError> {
    if let Some(bad) = loads.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(RunError::Invalid(vec![format!("load point {bad} must be finite and >= 0")]));
    }
    let points: Vec<(Mode, usize)> = modes
        .iter()
        .flat_map(|&m| (0..loads.len()).map(move |i| (m, i)))
        .collect();
    let results: Vec<Result<(f64, MetricsReport), RunError>> = std::thread::scope(|s| {
        let handles: Vec<_> = points
            .iter()
            .map(|&(mode, i)| {
                s.spawn(move || {
                    let scaled = sc.scaled(loads[i]);
                    run_with(&scaled, mode, seed ^ i as u64, RunOptions::default()).map(|o| (loads[i], o.report))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    results.into_iter().collect()
}

pub fn sweep(sc: &Scenario, modes: &[Mode], loads: &[f64], seed: u64) -> Result<Vec<SweepRow>, RunError> {
    Ok(sweep_reports(sc, modes, loads, seed)?
        .iter()
        .map(|(load, r)| SweepRow::from_report(*load, r))
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("load,mode,seed,mean_rtt_us,p95_rtt_us,rtt_samples,throughput_mbps,drops,digest\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.load, r.mode, r.seed, r.mean_rtt_us, r.p95_rtt_us, r.rtt_samples, r.throughput_mbps, r.drops, r.digest
        );
    }
    s
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = format!(
        "{:>6}  {:<9} {:>12} {:>10} {:>12} {:>8}\n",
        "load", "mode", "mean_rtt_us", "p95_rtt_us", "data_mbps", "drops"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6.2}  {:<9} {:>12.1} {:>10} {:>12.3} {:>8}",
            r.load, r.mode, r.mean_rtt_us, r.p95_rtt_us, r.throughput_mbps, r.drops
        );
    }
    s
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    let sc = load(&a.scenario)?;
    let modes: Vec<Mode> = match a.mode {
        Some(m) => vec![m],
        None => Mode::ALL.to_vec(),
    };
    let rows = sweep(&sc, &modes, &a.loads, a.seed.unwrap_or(sc.seed))?;
    let mut json = serde_json::to_string_pretty(&rows).context("serializing sweep")?;
    json.push('\n');
    write_all_or_nothing(&[(a.out.join(SWEEP_JSON), json), (a.out.join(SWEEP_CSV), sweep_csv(&rows))])?;
    print!("{}", sweep_table(&rows));
    Ok(())
}

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub events: u64,
    pub digest: String,
}

fn trace_file(r: &MetricsReport, records: &[TraceRecord]) -> String {
    let header = TraceHeader {
        scenario: r.scenario.clone(),
        mode: r.mode,
        seed: r.seed,
        events: r.events,
        digest: r.digest.clone(),
    };
    let mut s = serde_json::to_string(&header).expect("header serializes");
    s.push('\n');
    for rec in records {
        s.push_str(&serde_json::to_string(rec).expect("record serializes"));
        s.push('\n');
    }
    s
}

pub fn read_trace(path: &Path) -> anyhow::Result<(TraceHeader, Vec<TraceRecord>)> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(f).lines();
    let Some(first) = lines.next() else {
        bail!("{}: empty trace file", path.display());
    };
    let header: TraceHeader = serde_json::from_str(&first?).context("trace header")?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let rec = serde_json::from_str(&line?).with_context(|| format!("trace line {}", i + 2))?;
        records.push(rec);
    }
    Ok((header, records))
}

pub fn cmd_replay(scenario: &Path, trace: &Path) -> Result<(), Failure> {
    let sc = load(scenario)?;
    let (header, records) = read_trace(trace)?;
    let file_digest = format!("{:016x}", digest_records(&records));
    if file_digest != header.digest {
        return Err(Failure {
            code: EXIT_ASSERTION,
            message: format!(
                "trace records hash to {file_digest} but the header says {}",
                header.digest
            ),
        });
    }
    let rerun = run_with(&sc, header.mode, header.seed, RunOptions { keep_trace: true })?;
    let again = rerun.trace.expect("trace kept");
    if rerun.report.digest != file_digest {
        let at = records.iter().zip(&again).position(|(a, b)| a != b).unwrap_or(records.len().min(again.len()));
        return Err(Failure {
            code: EXIT_ASSERTION,
            message: format!(
                "digest mismatch: trace {file_digest}, rerun {}; first divergence at event {at} ({} vs {} events)",
                rerun.report.digest,
                records.len(),
                again.len()
            ),
        });
    }
    println!(
        "replay ok: {} mode={} seed={} events={} digest={}",
        header.scenario, header.mode, header.seed, header.events, file_digest
    );
    Ok(())
}

/// Writes every file or none: each goes to a temporary sibling first and
/// all are renamed into place only once every write succeeded.
pub fn write_all_or_nothing(files: &[(PathBuf, String)]) -> anyhow::Result<()> {
    let mut staged = Vec::new();
    let result = (|| {
        for (path, text) in files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let name = path.file_name().context("output path has no file name")?;
            let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
            let mut w = BufWriter::new(fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?);
            staged.push(tmp.clone());
            w.write_all(text.as_bytes())?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        for ((path, _), tmp) in files.iter().zip(&staged) {
            fs::rename(tmp, path).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    })();
    if result.is_err() {
        for tmp in &staged {
            let _ = fs::remove_file(tmp);
        }
    }
    result
}
