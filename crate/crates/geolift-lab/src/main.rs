//! Command-line front end: generate synthetic panels, run a single
//! estimator on a panel CSV, or run a full Monte Carlo study.
//!
//! Exit codes: 0 success; 1 a study finished but some estimator produced
//! zero successful replications; 2 any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use geolift_lab::dml::{self, DmlSpec, DmlVariant};
use geolift_lab::error::{Error, Result};
use geolift_lab::harness::{run_study, write_artifacts, EstimatorSpec, StudyConfig};
use geolift_lab::panel::{EstimatorId, Panel};
use geolift_lab::rng::stream_rng;
use geolift_lab::scm::{self, ScmSpec, ScmVariant};
use geolift_lab::sim::{generate, ScenarioId, ScenarioSpec, SimConfig};

#[derive(Parser)]
#[command(
    name = "geolift-lab",
    about = "Synthetic geo-experiment panels and causal lift estimators",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one synthetic panel (and optionally its ground truth) as CSV.
    Sim(SimArgs),
    /// Run one estimator on a panel CSV and write the result as JSON.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study and write report tables.
    Study(StudyArgs),
}

#[derive(Args)]
struct SimArgs {
    /// Scenario id (BASE, S1..S5); overrides the config file's id.
    #[arg(long)]
    scenario: Option<String>,
    /// Master seed for the random-number streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replication index within the seed.
    #[arg(long, default_value_t = 0)]
    rep: u64,
    /// Generator settings as JSON (defaults used for absent fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path for the panel.
    #[arg(long)]
    out: PathBuf,
    /// Optional output CSV path for the ground-truth grids.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Estimator name (asc-y, asc-dem, asc-dem-lag, cre-dml, twfe-dml,
    /// fd-dml, wg-dml).
    #[arg(long)]
    method: String,
    /// Panel CSV produced by `sim` (or in the same layout).
    #[arg(long)]
    panel: PathBuf,
    /// Donor-weight ridge penalty (synthetic-control methods only).
    #[arg(long)]
    lambda: Option<f64>,
    /// Cross-fitting folds (DML methods only).
    #[arg(long)]
    folds: Option<usize>,
    /// Weight-trimming quantile (DML methods only).
    #[arg(long)]
    trim: Option<f64>,
    /// Geo-bootstrap replicates for a percentile interval (DML only).
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Seed for fold assignment and learner randomness (DML only).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    /// Scenario id (BASE, S1..S5); overrides the config file's id.
    #[arg(long)]
    scenario: Option<String>,
    /// Number of Monte Carlo replications.
    #[arg(long, default_value_t = 100)]
    reps: u64,
    /// Master seed (the GEOLIFT_SEED environment variable overrides this).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for replications.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Generator settings as JSON (defaults used for absent fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated estimator names (default: all seven).
    #[arg(long)]
    estimators: Option<String>,
    /// Directory for report.md, report.csv, and replications.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

/// The `--config` file: one flat JSON object holding any generator or
/// scenario field; everything absent keeps its default.
#[derive(Debug, Default, Deserialize)]
struct SimFile {
    #[serde(flatten)]
    sim: SimConfig,
    #[serde(flatten)]
    scenario: ScenarioSpec,
}

fn load_sim_file(path: Option<&Path>) -> Result<(SimConfig, ScenarioSpec)> {
    match path {
        None => Ok((SimConfig::default(), ScenarioSpec::default())),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let file: SimFile = serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
            Ok((file.sim, file.scenario))
        }
    }
}

/// Scenario precedence: explicit flag > config file id > BASE default.
fn resolve_scenario(mut scenario: ScenarioSpec, flag: Option<&str>) -> Result<ScenarioSpec> {
    if let Some(name) = flag {
        scenario.id = ScenarioId::from_str(name)?;
    }
    Ok(scenario)
}

fn run_sim(args: &SimArgs) -> Result<ExitCode> {
    let (sim, scenario) = load_sim_file(args.config.as_deref())?;
    let scenario = resolve_scenario(scenario, args.scenario.as_deref())?;
    let (panel, truth) = generate(&sim, &scenario, args.seed, args.rep)?;
    write_csv(&args.out, |w| panel.export_csv(w))?;
    if let Some(truth_path) = &args.truth {
        write_csv(truth_path, |w| truth.export_csv(w))?;
    }
    eprintln!(
        "wrote {} ({} geos x {} weeks, scenario {}, true ATT {:.6})",
        args.out.display(),
        panel.n_units(),
        panel.n_weeks(),
        scenario.id,
        truth.true_att()
    );
    Ok(ExitCode::SUCCESS)
}

fn write_csv(path: &Path, write: impl FnOnce(&mut std::fs::File) -> Result<()>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    write(&mut file)
}

fn reject_flag(present: bool, flag: &str, family: &str) -> Result<()> {
    if present {
        return Err(Error::InvalidConfig(format!("--{flag} only applies to {family} methods")));
    }
    Ok(())
}

fn run_estimate(args: &EstimateArgs) -> Result<ExitCode> {
    let method = EstimatorId::from_str(&args.method)?;
    let file = std::fs::File::open(&args.panel)?;
    let panel = Panel::import_csv(file)?;

    let json = match method {
        EstimatorId::AscY | EstimatorId::AscDem | EstimatorId::AscDemLag => {
            for (present, flag) in [
                (args.folds.is_some(), "folds"),
                (args.trim.is_some(), "trim"),
                (args.bootstrap.is_some(), "bootstrap"),
            ] {
                reject_flag(present, flag, "DML")?;
            }
            let variant = ScmVariant::from_str(method.name())?;
            let mut spec = ScmSpec::new(variant);
            if let Some(lambda) = args.lambda {
                spec.ridge_lambda = lambda;
            }
            let (estimate, weights) = scm::estimate_with_weights(&panel, &spec)?;
            serde_json::json!({ "estimate": estimate, "donor_weights": weights })
        }
        _ => {
            reject_flag(args.lambda.is_some(), "lambda", "synthetic-control")?;
            let variant = DmlVariant::from_str(method.name())?;
            let mut spec = DmlSpec::new(variant);
            if let Some(folds) = args.folds {
                spec.n_folds = folds;
            }
            if let Some(trim) = args.trim {
                spec.trim_quantile = trim;
            }
            if let Some(reps) = args.bootstrap {
                spec.bootstrap_reps = reps;
            }
            let mut rng = stream_rng(args.seed, 0, "cli/estimate");
            let (estimate, folds) = dml::estimate_detailed(&panel, &spec, &mut rng)?;
            serde_json::json!({ "estimate": estimate, "folds": folds })
        }
    };

    let text = serde_json::to_string_pretty(&json).map_err(Error::Json)?;
    match &args.out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_roster(list: &str) -> Result<Vec<EstimatorSpec>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| EstimatorId::from_str(name).map(EstimatorSpec::for_id))
        .collect()
}

fn run_study_cmd(args: &StudyArgs) -> Result<ExitCode> {
    let (sim, scenario) = load_sim_file(args.config.as_deref())?;
    let scenario = resolve_scenario(scenario, args.scenario.as_deref())?;
    let master_seed = match std::env::var("GEOLIFT_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|_| Error::Parse(format!("GEOLIFT_SEED must be an integer, got {v:?}")))?,
        Err(_) => args.seed,
    };
    let estimators = match &args.estimators {
        Some(list) => parse_roster(list)?,
        None => EstimatorSpec::default_roster(),
    };
    let cfg = StudyConfig {
        scenario,
        sim,
        replications: args.reps,
        estimators,
        master_seed,
        parallelism: args.jobs,
    };
    let (report, outcomes) = run_study(&cfg)?;
    write_artifacts(&args.out_dir, &cfg, &report, &outcomes)?;
    eprintln!(
        "wrote {}/report.md, report.csv, replications.csv ({} replications, seed {})",
        args.out_dir.display(),
        cfg.replications,
        cfg.master_seed
    );
    if report.has_unavailable_rows() {
        eprintln!("warning: at least one estimator produced zero successful replications");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match &cli.command {
        Command::Sim(args) => run_sim(args),
        Command::Estimate(args) => run_estimate(args),
        Command::Study(args) => run_study_cmd(args),
    };
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
