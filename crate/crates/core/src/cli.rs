//! Command-line front end.
//!
//! Exit status is 0 on success, 1 when a check the command performs fails
//! and 2 on invalid arguments or input. Output is CSV or JSON unless
//! `--format table` is given. Parallel commands honor `RAYON_NUM_THREADS`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    builtin_preset, committee_size_solver, committee_size_upper_bound, layout_upper_bound, run_preset, sweep_events,
    sweep_report, FailureEvent, Fraction, ModelSpec, PresetReport, SizingParams,
};
use crate::overlay::{form_overlay, node_range, OverlayParams};
use crate::rng::Seed;
use crate::sim::campaign::{authenticator_report, builtin_campaign, campaign_names, run_campaign, Campaign};
use crate::sim::{check_trace, replay_jsonl, run, Property, Scenario};

/// Minimum uncentered R² for the authenticator fit.
const AUTH_MIN_R2: f64 = 0.95;

#[derive(Debug, Parser)]
#[command(name = "carnot", version, about = "Committee-tree consensus: overlay, analysis, sizing and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the committee tree for a node set in canonical JSON.
    Overlay(OverlayArgs),
    /// Choose committee sizes for a failure-probability target.
    Size(SizeArgs),
    /// Committee failure probabilities across committee counts.
    Analyze(AnalyzeArgs),
    /// Run a scenario, a seed matrix, or replay a recorded trace.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Table,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_nodes: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub committee_size: u64,
    /// Up to 64 hex digits, optional 0x prefix.
    #[arg(long, default_value = "0")]
    pub seed: Seed,
}

#[derive(Debug, Args)]
pub struct SizeArgs {
    /// Run a sizing preset grid instead of a single point.
    #[arg(long, conflicts_with_all = ["n_nodes", "delta"])]
    pub preset: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..), required_unless_present = "preset")]
    pub n_nodes: Option<u64>,
    /// Target failure probability.
    #[arg(long, required_unless_present = "preset")]
    pub delta: Option<f64>,
    /// Per-node corruption probability.
    #[arg(long, default_value_t = 0.25)]
    pub p: f64,
    /// Committee failure threshold.
    #[arg(long, default_value = "1/3")]
    pub a: Fraction,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Binomial,
    Hypergeometric,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, conflicts_with_all = ["event", "model"])]
    pub preset: Option<String>,
    /// `e0`, `e1`, `e2`, `e3`, … or a full form such as `E3(2/3)`.
    #[arg(long, required_unless_present = "preset")]
    pub event: Option<String>,
    /// Threshold for events given without one.
    #[arg(long, default_value = "1/3")]
    pub fraction: Fraction,
    #[arg(long, value_enum, required_unless_present = "preset")]
    pub model: Option<ModelKind>,
    #[arg(long, default_value_t = 1000)]
    pub n_nodes: usize,
    /// Corruption probability for the binomial model.
    #[arg(long, default_value_t = 0.25)]
    pub p: f64,
    /// Adversary count for the hypergeometric model; defaults to `round(P N)`.
    #[arg(long)]
    pub adversaries: Option<usize>,
    /// Committee counts: `start..end[:step]` (inclusive) or a comma list.
    #[arg(long, default_value = "1..15:2")]
    pub committees: String,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with_all = ["matrix", "replay"])]
    pub scenario: Option<PathBuf>,
    /// Built-in campaign name.
    #[arg(long, conflicts_with = "replay")]
    pub matrix: Option<String>,
    /// Campaign JSON file.
    #[arg(long, conflicts_with_all = ["matrix", "replay", "scenario"])]
    pub matrix_file: Option<PathBuf>,
    /// Re-run a recorded JSON-lines trace and compare.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Write the trace as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Keep the per-event log in the written trace.
    #[arg(long)]
    pub record_log: bool,
    /// Override the campaign's seed count.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Write the per-run campaign summary as CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// Failure a command reports.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unreadable input (exit 2).
    Usage(String),
    /// A check failed (exit 1).
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Check(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses arguments, runs the command and returns the exit status. Regular
/// output goes to `out`, diagnostics to `err`.
pub fn execute<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}

/// Entry point for the binary.
pub fn main() -> std::process::ExitCode {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = execute(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    std::process::ExitCode::from(code as u8)
}

pub fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Overlay(a) => overlay(a, out),
        Command::Size(a) => size(a, out, err),
        Command::Analyze(a) => analyze(a, out, err),
        Command::Simulate(a) => simulate(a, out, err),
    }
}

fn overlay(a: OverlayArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let nodes = node_range(a.n_nodes as usize);
    let tree = form_overlay(&nodes, OverlayParams { n: a.committee_size as usize, xi: a.seed }).map_err(usage)?;
    writeln!(out, "{}", tree.to_json()).map_err(usage)
}

fn size(a: SizeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let report = match &a.preset {
        Some(name) => {
            let preset = builtin_preset(name).map_err(usage)?;
            run_preset(&preset).map_err(usage)?
        }
        None => {
            let (n, delta) = (a.n_nodes.expect("required by clap") as usize, a.delta.expect("required by clap"));
            let r = committee_size_solver(SizingParams { n_nodes: n, p: a.p, a: a.a, delta }).map_err(usage)?;
            let ub = layout_upper_bound(n, r.n, r.failure, a.p, a.a).map_err(usage)?;
            let ub_target = committee_size_upper_bound(n, r.n, delta, a.p, a.a).map_err(usage)?;
            let row = vec![
                n.to_string(),
                format!("{delta:e}"),
                a.p.to_string(),
                a.a.to_string(),
                r.k.to_string(),
                r.n.to_string(),
                r.r.to_string(),
                format!("{:e}", r.failure),
                format!("{ub:.6}"),
                format!("{ub_target:.6}"),
            ];
            let header = ["N", "delta", "P", "A", "K", "n", "r", "failure", "n_upper_bound", "n_upper_bound_at_target"].map(String::from).to_vec();
            let mut failures = Vec::new();
            if r.failure > delta {
                failures.push(format!("no layout meets delta = {delta:e}; a single committee fails with {:e}", r.failure));
            }
            PresetReport { name: "size".into(), header, rows: vec![row], checks: Vec::new(), failures }
        }
    };
    emit(&report, a.format, a.out.as_ref(), out, err)
}

fn parse_committees(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = || usage(format!("bad committee list {s:?}; use start..end[:step] or a,b,c"));
    let values: Vec<usize> = if let Some((start, rest)) = s.split_once("..") {
        let (end, step) = rest.split_once(':').unwrap_or((rest, "1"));
        let (start, end, step): (usize, usize, usize) =
            (start.parse().map_err(|_| bad())?, end.parse().map_err(|_| bad())?, step.parse().map_err(|_| bad())?);
        if step == 0 {
            return Err(bad());
        }
        (start..=end).step_by(step).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

fn parse_event(s: &str, fraction: Fraction) -> Result<FailureEvent, CliError> {
    if s.contains('(') || s.eq_ignore_ascii_case("e0") {
        return s.parse().map_err(usage);
    }
    format!("{s}({fraction})").parse().map_err(usage)
}

fn analyze(a: AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let report = match &a.preset {
        Some(name) => run_preset(&builtin_preset(name).map_err(usage)?).map_err(usage)?,
        None => {
            let event = parse_event(a.event.as_deref().expect("required by clap"), a.fraction)?;
            let model = match a.model.expect("required by clap") {
                ModelKind::Binomial => ModelSpec::Binomial(a.p),
                ModelKind::Hypergeometric => {
                    ModelSpec::Hypergeometric(a.adversaries.unwrap_or((a.p * a.n_nodes as f64).round() as usize))
                }
            };
            let ks = parse_committees(&a.committees)?;
            let rows = sweep_events(a.n_nodes, &ks, &[model], &[event]).map_err(usage)?;
            if rows.is_empty() {
                return Err(usage(format!("{event} is undefined for every committee count in {:?}", a.committees)));
            }
            sweep_report("analyze", &rows)
        }
    };
    emit(&report, a.format, a.out.as_ref(), out, err)
}

fn emit(
    report: &PresetReport,
    format: Format,
    path: Option<&PathBuf>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            write_report(report, format, &mut BufWriter::new(f))?;
        }
        None => write_report(report, format, out)?,
    }
    for c in &report.checks {
        let _ = writeln!(err, "{c}");
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Check(report.failures.join("; ")))
    }
}

fn write_report(report: &PresetReport, format: Format, w: &mut dyn Write) -> Result<(), CliError> {
    match format {
        Format::Csv => report.write_csv(w).map_err(usage),
        Format::Table => write_aligned(w, &report.header, &report.rows).map_err(usage),
    }
}

fn write_aligned(w: &mut dyn Write, header: &[String], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
    };
    writeln!(w, "{}", line(header))?;
    for row in rows {
        writeln!(w, "{}", line(row))?;
    }
    Ok(())
}

fn read_text(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    if let Some(path) = &a.replay {
        let f = File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let report = replay_jsonl(BufReader::new(f)).map_err(usage)?;
        writeln!(
            out,
            "digest {}, commits {}, final states {}, log {}",
            same(report.digest_matches),
            same(report.commits_match),
            same(report.final_states_match),
            same(report.log_matches)
        )
        .map_err(usage)?;
        return if report.identical() {
            Ok(())
        } else {
            Err(CliError::Check(format!("replay diverged; differing nodes: {:?}", report.differing_nodes)))
        };
    }
    if let Some(path) = &a.scenario {
        let mut scenario = Scenario::from_json(&read_text(path)?).map_err(usage)?;
        scenario.record_log |= a.record_log;
        return simulate_one(&scenario, a.trace.as_ref(), out);
    }
    let campaign = match (&a.matrix, &a.matrix_file) {
        (Some(name), _) => builtin_campaign(name).map_err(usage)?,
        (None, Some(path)) => Campaign::from_json(&read_text(path)?).map_err(usage)?,
        (None, None) => {
            return Err(usage(format!(
                "give --scenario, --matrix ({}), --matrix-file or --replay",
                campaign_names().join(", ")
            )))
        }
    };
    simulate_campaign(campaign, &a, out, err)
}

fn same(b: bool) -> &'static str {
    if b {
        "identical"
    } else {
        "DIFFERENT"
    }
}

fn simulate_one(scenario: &Scenario, trace_path: Option<&PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    let trace = run(scenario).map_err(usage)?;
    if let Some(p) = trace_path {
        let f = File::create(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        let mut w = BufWriter::new(f);
        trace.write_jsonl(&mut w).map_err(usage)?;
        w.flush().map_err(usage)?;
    }
    let report = check_trace(&trace, &Property::ALL);
    let s = &trace.summary;
    let summary = serde_json::json!({
        "n_nodes": scenario.n_nodes,
        "committee_size": trace.header.committee_size,
        "committees": trace.header.committees,
        "byzantine": trace.header.byzantine.len(),
        "views": scenario.views_to_run,
        "max_view": s.stats.max_view,
        "commits": s.commits.iter().filter(|(n, _)| trace.is_honest(**n)).map(|(_, c)| c.len()).min().unwrap_or(0),
        "timeout_qcs": s.stats.timeout_qcs,
        "messages": s.stats.messages_sent,
        "events": s.stats.events,
        "truncated": s.stats.truncated,
        "log_digest": s.log_digest,
        "checks": report.checked.iter().map(|(p, n)| (p.name().to_string(), *n)).collect::<std::collections::BTreeMap<_, _>>(),
        "violations": report.violations,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("summary serializes")).map_err(usage)?;
    if s.stats.truncated {
        return Err(CliError::Check("event budget exhausted; trace truncated".into()));
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Check(format!("{} property violations", report.violations.len())))
    }
}

fn simulate_campaign(mut campaign: Campaign, a: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    if let Some(s) = a.seeds {
        if s == 0 {
            return Err(usage("--seeds must be positive"));
        }
        campaign.seeds = s;
    }
    let report = run_campaign(&campaign).map_err(usage)?;
    if let Some(p) = &a.summary {
        let f = File::create(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        report.write_csv(BufWriter::new(f)).map_err(usage)?;
    } else {
        report.write_csv(&mut *out).map_err(usage)?;
    }
    let mut failures = Vec::new();
    for (p, n) in &report.checks.checked {
        let bad = report.checks.count(*p);
        let _ = writeln!(err, "{p}: {n} checks, {bad} violations");
        if bad > 0 {
            failures.push(format!("{bad} {p} violations"));
        }
    }
    let truncated = report.rows.iter().filter(|r| r.truncated).count();
    if truncated > 0 {
        failures.push(format!("{truncated} truncated runs"));
    }
    if campaign.check_authenticators {
        let auth = authenticator_report(&report.rows);
        let _ = writeln!(
            err,
            "authenticators per view ~ {:.3} ln N, R^2 = {:.4}; every node within 4n: {}",
            auth.fit.c, auth.fit.r_squared, auth.within_band
        );
        if auth.fit.r_squared < AUTH_MIN_R2 {
            failures.push(format!("authenticator fit R^2 {:.4} below {AUTH_MIN_R2}", auth.fit.r_squared));
        }
        if !auth.within_band {
            failures.push("a node verified more than 4n authenticators in a view".into());
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failures.join("; ")))
    }
}
