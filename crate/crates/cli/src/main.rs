use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info, warn};
use metric_geninv::harness::{
    parse_document, selftest, suite, write_json, write_reports, Family, Format, Outcome, RunOptions, ScenarioConfig,
    SuiteReport,
};

/// Generalized inverses between l^p spaces: scenario generator and checker.
#[derive(Debug, Parser)]
#[command(name = "metric-geninv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed override (for `gen`, the seed written into the skeleton).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Json)]
    format: OutFormat,

    /// Identity tolerance override for every scenario.
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Record wall-clock time per scenario (makes reports non-reproducible).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print a scenario config skeleton.
    Gen {
        #[arg(long, value_enum, default_value_t = FamilyArg::F2)]
        family: FamilyArg,
    },
    /// Execute one config document (a scenario or a suite).
    Run { config: PathBuf },
    /// Execute every `*.json` document in a directory.
    Suite { dir: PathBuf },
    /// Run the built-in property corpus.
    Selftest,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FamilyArg {
    F1,
    F2,
    F3,
    F4,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::F1 => Family::F1,
            FamilyArg::F2 => Family::F2,
            FamilyArg::F3 => Family::F3,
            FamilyArg::F4 => Family::F4,
        }
    }
}

/// A failure before any scenario ran, with its exit status.
struct Fatal(Outcome, String);

fn invalid(msg: impl Into<String>) -> Fatal {
    Fatal(Outcome::InvalidConfig, msg.into())
}

fn read_document(path: &Path) -> Result<Vec<ScenarioConfig>, Fatal> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    parse_document(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_dir(dir: &Path) -> Result<Vec<ScenarioConfig>, Fatal> {
    let entries = fs::read_dir(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(invalid(format!("{}: no .json configs", dir.display())));
    }
    let mut out = Vec::new();
    for p in &paths {
        out.extend(read_document(p)?);
    }
    Ok(out)
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Fatal> {
    match out {
        Some(path) => fs::File::create(path)
            .map(|f| Box::new(io::BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| invalid(format!("{}: {e}", path.display()))),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn log_summary(report: &SuiteReport) {
    let s = &report.summary;
    info!(
        "{} scenarios, {} passed, {} decided violations, {} decided stable, {} splits",
        s.scenarios, s.passed, s.decided_violations, s.decided_stable, s.splits
    );
    for r in report.reports.iter().filter(|r| !r.passed()) {
        warn!("{}: {:?}", r.id, r.outcome);
        for f in &r.failures {
            warn!("  {f}");
        }
        if let Some(e) = &r.error {
            warn!("  {e}");
        }
    }
}

fn execute(cli: &Cli) -> Result<Outcome, Fatal> {
    let format = match cli.format {
        OutFormat::Json => Format::Json,
        OutFormat::Csv => Format::Csv,
    };
    if let Some(tol) = cli.tol {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(invalid(format!("--tol must be a positive number, got {tol}")));
        }
    }
    let opts = RunOptions {
        tol: cli.tol,
        seed: cli.seed,
        timing: cli.timing,
    };
    let report = match &cli.command {
        Command::Gen { family } => {
            let skeleton = ScenarioConfig::skeleton((*family).into(), cli.seed.unwrap_or(0));
            let mut w = sink(&cli.out)?;
            write_json(&mut w, &skeleton).map_err(|e| invalid(e.to_string()))?;
            return Ok(Outcome::Pass);
        }
        Command::Run { config } => {
            let configs = read_document(config)?;
            suite(&configs, &opts, cli.jobs).map_err(|e| invalid(e.to_string()))?
        }
        Command::Suite { dir } => {
            let configs = read_dir(dir)?;
            suite(&configs, &opts, cli.jobs).map_err(|e| invalid(e.to_string()))?
        }
        Command::Selftest => {
            let seed = cli.seed.unwrap_or(0);
            let opts = RunOptions { seed: None, ..opts };
            selftest(seed, &opts, cli.jobs).map_err(|e| invalid(e.to_string()))?
        }
    };
    log_summary(&report);
    let mut w = sink(&cli.out)?;
    write_reports(&mut w, format, &report)
        .and_then(|_| w.flush())
        .map_err(|e| invalid(format!("writing report: {e}")))?;
    Ok(report.outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("METRIC_GENINV_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = match execute(&cli) {
        Ok(o) => o,
        Err(Fatal(o, msg)) => {
            error!("{msg}");
            eprintln!("metric-geninv: {msg}");
            o
        }
    };
    ExitCode::from(outcome.exit_code() as u8)
}
