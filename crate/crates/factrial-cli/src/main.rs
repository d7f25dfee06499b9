//! Command-line driver: configuration and data in, analysis reports out.
//!
//! Exit codes: 0 = full success, 2 = the run finished but at least one
//! analysis failed (the report names it), 1 = fatal error (bad flags,
//! unreadable files, invalid config or data).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use factrial::data::{load_trial_data_lenient, write_mems_csv, write_participants_csv, ValidationIssue};
use factrial::sim::{monte_carlo_calibration, simulate_trial, SimulationConfig};
use factrial::{
    emit_report, load_trial_data, run_scoped, AnalysisConfig, AnalysisStatus, ReportFormat,
    RunScope,
};

const DEFAULT_SIM_N: usize = 400;
const DEFAULT_CALIBRATION_REPS: usize = 1000;

#[derive(Parser)]
#[command(
    name = "factrial",
    version,
    about = "Analysis engine for a 2x2 factorial trial: outcome derivation, standardized effect estimates, sensitivity analyses, and a calibrated simulator"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores). Results do
    /// not depend on the thread count.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Descriptive baseline and timepoint tables only
    Describe(AnalyzeArgs),
    /// The full prespecified analysis set
    Analyze(AnalyzeArgs),
    /// Missing-data sensitivity analyses only, run regardless of triggers
    Sensitivity(AnalyzeArgs),
    /// Generate a synthetic trial dataset as CSV files
    Simulate(SimulateArgs),
    /// Monte Carlo calibration of the estimators against known truth
    Calibrate(CalibrateArgs),
    /// Check input files against the schema and invariants without analyzing
    Validate(ValidateArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Analysis configuration TOML (plan defaults when omitted)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Participant-level CSV
    #[arg(long, value_name = "FILE")]
    participants: PathBuf,
    /// Pill-bottle opening events CSV
    #[arg(long, value_name = "FILE")]
    mems: PathBuf,
    /// Screening CSV for the enrolled-vs-declined comparison
    #[arg(long, value_name = "FILE")]
    screened: Option<PathBuf>,
    /// Where to write the report: a file for json/markdown, a directory for
    /// csv. Omitted: json/markdown go to stdout, csv is an error.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Report format: json, markdown, or csv (overrides the config file)
    #[arg(long, value_name = "FORMAT")]
    format: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation configuration TOML (plan defaults when omitted)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Number of participants (overrides the config file)
    #[arg(long, value_name = "N")]
    n: Option<usize>,
    /// Master RNG seed (overrides the config file)
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Directory for participants.csv and mems.csv
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Simulation configuration TOML (plan defaults when omitted)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Participants per simulated trial (overrides the config file)
    #[arg(long, value_name = "N")]
    n: Option<usize>,
    /// Master RNG seed (overrides the config file)
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Number of simulated replications
    #[arg(long, value_name = "R")]
    reps: Option<usize>,
    /// Output file for the calibration report JSON (stdout when omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Analysis configuration TOML (plan defaults when omitted)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Participant-level CSV
    #[arg(long, value_name = "FILE")]
    participants: PathBuf,
    /// Pill-bottle opening events CSV
    #[arg(long, value_name = "FILE")]
    mems: PathBuf,
    /// Screening CSV
    #[arg(long, value_name = "FILE")]
    screened: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Describe(args) => run_analysis(args, RunScope::Describe),
        Command::Analyze(args) => run_analysis(args, RunScope::Full),
        Command::Sensitivity(args) => run_analysis(args, RunScope::Sensitivity),
        Command::Simulate(args) => run_simulate(args),
        Command::Calibrate(args) => run_calibrate(args),
        Command::Validate(args) => run_validate(args),
    }
}

fn load_analysis_config(path: Option<&Path>) -> anyhow::Result<AnalysisConfig> {
    match path {
        Some(p) => AnalysisConfig::from_path(p)
            .with_context(|| format!("loading analysis config {}", p.display())),
        None => Ok(AnalysisConfig::plan_defaults()),
    }
}

fn load_simulation_config(args_config: Option<&Path>, n: Option<usize>, seed: Option<u64>) -> anyhow::Result<SimulationConfig> {
    let mut config = match args_config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading simulation config {}", p.display()))?;
            SimulationConfig::from_toml_str(&text)
                .with_context(|| format!("loading simulation config {}", p.display()))?
        }
        None => SimulationConfig::plan_defaults(n.unwrap_or(DEFAULT_SIM_N), seed.unwrap_or(0)),
    };
    if let Some(n) = n {
        config.n = n;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn issue_line(issue: &ValidationIssue) -> String {
    match &issue.participant_id {
        Some(id) => format!("participant `{id}`: {}", issue.message),
        None => issue.message.clone(),
    }
}

fn run_analysis(args: &AnalyzeArgs, scope: RunScope) -> anyhow::Result<i32> {
    let mut config = load_analysis_config(args.config.as_deref())?;
    if let Some(format) = &args.format {
        config.output.format = format.parse::<ReportFormat>()?;
    }
    let (dataset, validation) = load_trial_data(
        &args.participants,
        &args.mems,
        args.screened.as_deref(),
        &config,
    )?;
    for w in &validation.warnings {
        eprintln!("warning: {}", issue_line(w));
    }

    let report = run_scoped(&dataset, &config, scope)?;
    let files = emit_report(&report, config.output.format)?;
    let written = write_report_files(args.out.as_deref(), config.output.format, &files)?;

    let failed = report.failed_count();
    let skipped = report.analyses.iter().filter(|a| a.status == AnalysisStatus::Skipped).count();
    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    eprintln!(
        "analyses: {} ok, {skipped} skipped, {failed} failed",
        report.analyses.len() - failed - skipped
    );
    if failed > 0 {
        for a in report.analyses.iter().filter(|a| a.status == AnalysisStatus::Failed) {
            eprintln!("failed: {} ({})", a.name, a.error.as_deref().unwrap_or("unknown error"));
        }
        Ok(2)
    } else {
        Ok(0)
    }
}

/// Write the emitted report files. Single-file formats go to `out` (or into
/// it, when `out` is an existing directory), or to stdout when `out` is
/// omitted. The csv format needs a directory.
fn write_report_files(
    out: Option<&Path>,
    format: ReportFormat,
    files: &[(String, Vec<u8>)],
) -> anyhow::Result<Vec<PathBuf>> {
    match format {
        ReportFormat::Json | ReportFormat::Markdown => {
            let (name, bytes) = &files[0];
            match out {
                None => {
                    std::io::stdout().write_all(bytes).context("writing the report to stdout")?;
                    Ok(Vec::new())
                }
                Some(path) => {
                    let target =
                        if path.is_dir() { path.join(name) } else { path.to_path_buf() };
                    write_file(&target, bytes)?;
                    Ok(vec![target])
                }
            }
        }
        ReportFormat::Csv => {
            let dir = out.context("the csv format writes multiple files; pass --out DIR")?;
            let mut written = Vec::with_capacity(files.len());
            for (rel, bytes) in files {
                let target = dir.join(rel);
                write_file(&target, bytes)?;
                written.push(target);
            }
            Ok(written)
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating directory {}", parent.display()))?;
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn run_simulate(args: &SimulateArgs) -> anyhow::Result<i32> {
    let config = load_simulation_config(args.config.as_deref(), args.n, args.seed)?;
    let dataset = simulate_trial(&config)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating directory {}", args.out.display()))?;
    let participants_path = args.out.join("participants.csv");
    let mems_path = args.out.join("mems.csv");
    write_file(&participants_path, write_participants_csv(&dataset.participants).as_bytes())?;
    write_file(&mems_path, write_mems_csv(&dataset.mems_events).as_bytes())?;

    eprintln!(
        "simulated {} participants with seed {} (dataset fingerprint {})",
        dataset.participants.len(),
        config.seed,
        dataset.fingerprint()
    );
    println!("{}", participants_path.display());
    println!("{}", mems_path.display());
    Ok(0)
}

fn run_calibrate(args: &CalibrateArgs) -> anyhow::Result<i32> {
    let config = load_simulation_config(args.config.as_deref(), args.n, args.seed)?;
    let reps = args.reps.unwrap_or(DEFAULT_CALIBRATION_REPS);
    let report = monte_carlo_calibration(&config, reps)?;
    let json = serde_json::to_string_pretty(&report).context("serializing the calibration report")? + "\n";
    match &args.out {
        Some(path) => {
            write_file(path, json.as_bytes())?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{json}"),
    }
    Ok(0)
}

fn run_validate(args: &ValidateArgs) -> anyhow::Result<i32> {
    let config = load_analysis_config(args.config.as_deref())?;
    let (dataset, report) = load_trial_data_lenient(
        &args.participants,
        &args.mems,
        args.screened.as_deref(),
        &config,
    )?;
    println!(
        "participants: {}, mems events: {}, screened records: {}",
        dataset.participants.len(),
        dataset.mems_events.len(),
        dataset.screened_declined.as_ref().map_or(0, Vec::len)
    );
    for e in &report.errors {
        println!("error: {}", issue_line(e));
    }
    for w in &report.warnings {
        println!("warning: {}", issue_line(w));
    }
    if report.is_ok() {
        println!("validation passed ({} warnings)", report.warnings.len());
        Ok(0)
    } else {
        println!(
            "validation failed ({} errors, {} warnings)",
            report.errors.len(),
            report.warnings.len()
        );
        Ok(1)
    }
}
