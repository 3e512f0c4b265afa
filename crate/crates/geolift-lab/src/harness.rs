//! Monte Carlo study runner: generate R panels per scenario, run every
//! configured estimator on each panel, and aggregate absolute bias,
//! coverage, power, and average confidence-interval width into report
//! tables.
//!
//! Replications run in a bounded worker pool and results are collected in
//! replication order, so report artifacts are byte-identical regardless of
//! the parallelism level. Failures are recorded per (estimator,
//! replication) cell and excluded from the aggregates, with success counts
//! reported; an estimator that never succeeds is marked unavailable.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dml::{self, DmlSpec, DmlVariant};
use crate::error::{Error, Result};
use crate::panel::{EstimateResult, EstimatorId, GroundTruth, Panel};
use crate::rng::stream_rng;
use crate::scm::{self, ScmSpec, ScmVariant};
use crate::sim::{generate, ScenarioSpec, SimConfig};

/// One configured estimator: either a synthetic-control variant or a
/// double-machine-learning variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum EstimatorSpec {
    Scm(ScmSpec),
    Dml(DmlSpec),
}

impl EstimatorSpec {
    pub fn estimator_id(&self) -> EstimatorId {
        match self {
            EstimatorSpec::Scm(spec) => spec.variant.estimator_id(),
            EstimatorSpec::Dml(spec) => spec.variant.estimator_id(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EstimatorSpec::Scm(spec) => spec.validate(),
            EstimatorSpec::Dml(spec) => spec.validate(),
        }
    }

    /// The default-configured estimator behind a reporting id.
    pub fn for_id(id: EstimatorId) -> EstimatorSpec {
        match id {
            EstimatorId::AscY => EstimatorSpec::Scm(ScmSpec::new(ScmVariant::AscY)),
            EstimatorId::AscDem => EstimatorSpec::Scm(ScmSpec::new(ScmVariant::AscDem)),
            EstimatorId::AscDemLag => EstimatorSpec::Scm(ScmSpec::new(ScmVariant::AscDemLag)),
            EstimatorId::CreDml => EstimatorSpec::Dml(DmlSpec::new(DmlVariant::Cre)),
            EstimatorId::TwfeDml => EstimatorSpec::Dml(DmlSpec::new(DmlVariant::Twfe)),
            EstimatorId::FdDml => EstimatorSpec::Dml(DmlSpec::new(DmlVariant::Fd)),
            EstimatorId::WgDml => EstimatorSpec::Dml(DmlSpec::new(DmlVariant::Wg)),
        }
    }

    /// All seven estimators with default settings, in reporting order.
    pub fn default_roster() -> Vec<EstimatorSpec> {
        EstimatorId::ALL.into_iter().map(EstimatorSpec::for_id).collect()
    }

    /// Runs this estimator on one panel. The estimator's randomness (fold
    /// assignment, learner subsampling, bootstrap) comes from a stream
    /// keyed by seed, replication, and estimator name, so results do not
    /// depend on roster order or thread scheduling.
    pub fn run(&self, panel: &Panel, master_seed: u64, replication: u64) -> Result<EstimateResult> {
        match self {
            EstimatorSpec::Scm(spec) => scm::jackknife_ci(panel, spec),
            EstimatorSpec::Dml(spec) => {
                let label = format!("estimate/{}", self.estimator_id().name());
                let mut rng = stream_rng(master_seed, replication, &label);
                dml::estimate(panel, spec, &mut rng)
            }
        }
    }
}

/// A full Monte Carlo study: scenario, panel dimensions, replication
/// count, estimator roster, and execution settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub scenario: ScenarioSpec,
    pub sim: SimConfig,
    pub replications: u64,
    pub estimators: Vec<EstimatorSpec>,
    pub master_seed: u64,
    pub parallelism: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSpec::default(),
            sim: SimConfig::default(),
            replications: 100,
            estimators: EstimatorSpec::default_roster(),
            master_seed: 0,
            parallelism: 1,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.sim.validate()?;
        if self.replications < 1 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("the estimator roster must not be empty".into()));
        }
        for spec in &self.estimators {
            spec.validate()?;
        }
        if self.parallelism < 1 {
            return Err(Error::InvalidConfig("parallelism must be at least 1".into()));
        }
        Ok(())
    }
}

/// Every estimator's result (or failure message) on one generated panel.
#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub replication: u64,
    pub true_att: f64,
    pub cells: Vec<(EstimatorId, std::result::Result<EstimateResult, String>)>,
}

/// Generates replication `r`'s panel and runs the whole roster on it.
/// Estimator failures are recorded in their cells; only simulator failures
/// propagate.
pub fn run_replication(cfg: &StudyConfig, r: u64) -> Result<ReplicationOutcome> {
    let (panel, truth) = generate(&cfg.sim, &cfg.scenario, cfg.master_seed, r)?;
    run_roster_on(cfg, &panel, &truth, r)
}

fn run_roster_on(
    cfg: &StudyConfig,
    panel: &Panel,
    truth: &GroundTruth,
    r: u64,
) -> Result<ReplicationOutcome> {
    let cells = cfg
        .estimators
        .iter()
        .map(|spec| {
            let outcome = spec
                .run(panel, cfg.master_seed, r)
                .map_err(|e| format!("replication {r}: {e}"));
            (spec.estimator_id(), outcome)
        })
        .collect();
    Ok(ReplicationOutcome { replication: r, true_att: truth.true_att(), cells })
}

/// One estimator's aggregated metrics over its successful replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    /// Mean absolute error of the point estimate against the true effect.
    pub abs_bias: f64,
    /// Mean signed error (negative = under-estimation).
    pub signed_bias: f64,
    /// Fraction of intervals containing the true effect.
    pub coverage: f64,
    /// Fraction of intervals excluding zero.
    pub power: f64,
    pub avg_ci_width: f64,
}

/// One report row; `metrics` is `None` when the estimator never succeeded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub estimator: EstimatorId,
    pub n_success: u64,
    pub n_replications: u64,
    pub metrics: Option<MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub rows: Vec<ReportRow>,
}

impl StudyReport {
    pub fn row(&self, id: EstimatorId) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.estimator == id)
    }

    /// True when any estimator produced no successful replication (the
    /// study-level failure signal).
    pub fn has_unavailable_rows(&self) -> bool {
        self.rows.iter().any(|r| r.metrics.is_none())
    }
}

/// Collapses per-replication outcomes into the four reported metrics per
/// estimator, over successful replications only.
pub fn aggregate(outcomes: &[ReplicationOutcome]) -> Result<StudyReport> {
    let first = outcomes
        .first()
        .ok_or_else(|| Error::EstimatorInput("cannot aggregate zero replications".into()))?;
    let order: Vec<EstimatorId> = first.cells.iter().map(|(id, _)| *id).collect();
    let n_replications = outcomes.len() as u64;

    let mut rows = Vec::with_capacity(order.len());
    for (idx, id) in order.into_iter().enumerate() {
        let mut abs_err = 0.0;
        let mut signed_err = 0.0;
        let mut covered = 0u64;
        let mut rejected = 0u64;
        let mut width = 0.0;
        let mut n_success = 0u64;
        for outcome in outcomes {
            let cell = outcome.cells.get(idx).filter(|(cell_id, _)| *cell_id == id).ok_or_else(
                || {
                    Error::EstimatorInput(format!(
                        "replication {} does not carry estimator {id} at roster position {idx}",
                        outcome.replication
                    ))
                },
            )?;
            if let Ok(est) = &cell.1 {
                n_success += 1;
                abs_err += (est.att_hat - outcome.true_att).abs();
                signed_err += est.att_hat - outcome.true_att;
                covered += u64::from(est.covers(outcome.true_att));
                rejected += u64::from(est.rejects_zero());
                width += est.ci_high - est.ci_low;
            }
        }
        let metrics = (n_success > 0).then(|| {
            let n = n_success as f64;
            MetricRow {
                abs_bias: abs_err / n,
                signed_bias: signed_err / n,
                coverage: covered as f64 / n,
                power: rejected as f64 / n,
                avg_ci_width: width / n,
            }
        });
        rows.push(ReportRow { estimator: id, n_success, n_replications, metrics });
    }
    Ok(StudyReport { rows })
}

/// Runs the whole study: all replications (parallel up to
/// `cfg.parallelism`, collected in replication order) plus aggregation.
pub fn run_study(cfg: &StudyConfig) -> Result<(StudyReport, Vec<ReplicationOutcome>)> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let outcomes: Vec<ReplicationOutcome> = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| run_replication(cfg, r))
            .collect::<Result<Vec<_>>>()
    })?;
    let report = aggregate(&outcomes)?;
    Ok((report, outcomes))
}

fn fmt_sig(x: f64) -> String {
    format!("{x:.11e}")
}

/// The aggregate table as CSV (12-significant-digit floats, byte-stable
/// across reruns and parallelism levels).
pub fn report_csv(report: &StudyReport) -> String {
    let mut out = String::from(
        "estimator,n_success,n_replications,abs_bias,signed_bias,coverage,power,avg_ci_width\n",
    );
    for row in &report.rows {
        let metrics = match &row.metrics {
            Some(m) => format!(
                "{},{},{},{},{}",
                fmt_sig(m.abs_bias),
                fmt_sig(m.signed_bias),
                fmt_sig(m.coverage),
                fmt_sig(m.power),
                fmt_sig(m.avg_ci_width)
            ),
            None => ",,,,".into(),
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.estimator.name(),
            row.n_success,
            row.n_replications,
            metrics
        ));
    }
    out
}

/// The aggregate table as a Markdown report.
pub fn report_md(cfg: &StudyConfig, report: &StudyReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# Scenario {} — {} replications, seed {}\n\n",
        cfg.scenario.id.name(),
        cfg.replications,
        cfg.master_seed
    ));
    out.push_str("| Model | Abs. Bias | Coverage | Power | Avg. CI Width |\n");
    out.push_str("|---|---|---|---|---|\n");
    for row in &report.rows {
        match &row.metrics {
            Some(m) => {
                let success = if row.n_success == row.n_replications {
                    String::new()
                } else {
                    format!(" ({}/{} ok)", row.n_success, row.n_replications)
                };
                out.push_str(&format!(
                    "| {}{} | {:.1} | {:.2} | {:.2} | {:.1} |\n",
                    row.estimator.label(),
                    success,
                    m.abs_bias,
                    m.coverage,
                    m.power,
                    m.avg_ci_width
                ));
            }
            None => {
                out.push_str(&format!(
                    "| {} | unavailable (0/{} ok) | — | — | — |\n",
                    row.estimator.label(),
                    row.n_replications
                ));
            }
        }
    }
    out.push_str(
        "\nIntervals: synthetic-control rows use leave-one-treated-out jackknife; \
         DML rows use geo-cluster-robust analytic intervals. Coverage and power \
         are fractions of successful replications whose 95% interval contains \
         the true effect / excludes zero.\n",
    );
    out
}

/// Per-replication long-format CSV: one row per (replication, estimator).
pub fn replications_csv(outcomes: &[ReplicationOutcome]) -> String {
    let mut out =
        String::from("replication,estimator,true_att,att_hat,se,ci_low,ci_high,converged,error\n");
    for outcome in outcomes {
        for (id, cell) in &outcome.cells {
            match cell {
                Ok(est) => out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},\n",
                    outcome.replication,
                    id.name(),
                    fmt_sig(outcome.true_att),
                    fmt_sig(est.att_hat),
                    fmt_sig(est.se),
                    fmt_sig(est.ci_low),
                    fmt_sig(est.ci_high),
                    est.converged
                )),
                Err(msg) => out.push_str(&format!(
                    "{},{},{},,,,,,{:?}\n",
                    outcome.replication,
                    id.name(),
                    fmt_sig(outcome.true_att),
                    msg
                )),
            }
        }
    }
    out
}

/// Writes `report.md`, `report.csv`, and `replications.csv` into `dir`.
pub fn write_artifacts(
    dir: &Path,
    cfg: &StudyConfig,
    report: &StudyReport,
    outcomes: &[ReplicationOutcome],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, content) in [
        ("report.md", report_md(cfg, report)),
        ("report.csv", report_csv(report)),
        ("replications.csv", replications_csv(outcomes)),
    ] {
        let mut file = std::fs::File::create(dir.join(name))?;
        file.write_all(content.as_bytes())?;
    }
    Ok(())
}
