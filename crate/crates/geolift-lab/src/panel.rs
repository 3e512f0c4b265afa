//! Core panel data structures: observed panels, ground-truth grids, the
//! target estimand, estimator identifiers, estimate results, and CSV I/O.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width multiplier for normal-approximation 95% confidence intervals.
pub const Z_95: f64 = 1.96;

/// An observed geo-week panel.
///
/// Outcomes are strictly positive levels (e.g. weekly conversions). Weeks are
/// indexed `0..t_pre + t_post`; the treatment switches on at week `t_pre` for
/// every ever-treated unit and stays on through the end of the panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    n_units: usize,
    t_pre: usize,
    t_post: usize,
    /// Observed outcome, `n_units x n_weeks`.
    outcome: DMatrix<f64>,
    /// Active-treatment indicator `D[i, t]` in {0, 1}, `n_units x n_weeks`.
    treat_active: DMatrix<f64>,
    /// Ever-treated flag `G[i]` per unit.
    ever_treated: Vec<bool>,
    /// Time-invariant covariates, `n_units x n_static`.
    static_covariates: DMatrix<f64>,
    /// Time-varying covariates, one `n_units x n_weeks` grid per covariate.
    dynamic_covariates: Vec<DMatrix<f64>>,
}

impl Panel {
    /// Validates shapes and flags and assembles a panel.
    pub fn new(
        t_pre: usize,
        t_post: usize,
        outcome: DMatrix<f64>,
        treat_active: DMatrix<f64>,
        ever_treated: Vec<bool>,
        static_covariates: DMatrix<f64>,
        dynamic_covariates: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n_units = outcome.nrows();
        let n_weeks = t_pre + t_post;
        if n_units == 0 {
            return Err(Error::InvalidPanel("panel has no units".into()));
        }
        if t_pre == 0 || t_post == 0 {
            return Err(Error::InvalidPanel(format!(
                "need at least one pre and one post week, got t_pre={t_pre}, t_post={t_post}"
            )));
        }
        if outcome.ncols() != n_weeks {
            return Err(Error::InvalidPanel(format!(
                "outcome has {} weeks, expected {}",
                outcome.ncols(),
                n_weeks
            )));
        }
        if treat_active.shape() != (n_units, n_weeks) {
            return Err(Error::InvalidPanel(format!(
                "treatment grid is {:?}, expected {:?}",
                treat_active.shape(),
                (n_units, n_weeks)
            )));
        }
        if ever_treated.len() != n_units {
            return Err(Error::InvalidPanel(format!(
                "ever-treated flags cover {} units, expected {}",
                ever_treated.len(),
                n_units
            )));
        }
        if static_covariates.nrows() != n_units {
            return Err(Error::InvalidPanel(format!(
                "static covariates cover {} units, expected {}",
                static_covariates.nrows(),
                n_units
            )));
        }
        for (q, grid) in dynamic_covariates.iter().enumerate() {
            if grid.shape() != (n_units, n_weeks) {
                return Err(Error::InvalidPanel(format!(
                    "dynamic covariate {q} is {:?}, expected {:?}",
                    grid.shape(),
                    (n_units, n_weeks)
                )));
            }
        }
        for i in 0..n_units {
            for t in 0..n_weeks {
                let y = outcome[(i, t)];
                if !y.is_finite() || y <= 0.0 {
                    return Err(Error::InvalidPanel(format!(
                        "outcome must be finite and positive, got {y} at unit {i}, week {t}"
                    )));
                }
                let d = treat_active[(i, t)];
                if d != 0.0 && d != 1.0 {
                    return Err(Error::InvalidPanel(format!(
                        "treatment indicator must be 0 or 1, got {d} at unit {i}, week {t}"
                    )));
                }
                let expected = if ever_treated[i] && t >= t_pre { 1.0 } else { 0.0 };
                if d != expected {
                    return Err(Error::InvalidPanel(format!(
                        "treatment indicator {d} at unit {i}, week {t} conflicts with \
                         ever-treated flag {} and treatment start {t_pre}",
                        ever_treated[i]
                    )));
                }
            }
        }
        if !ever_treated.iter().any(|&g| g) {
            return Err(Error::InvalidPanel("panel has no treated units".into()));
        }
        Ok(Self {
            n_units,
            t_pre,
            t_post,
            outcome,
            treat_active,
            ever_treated,
            static_covariates,
            dynamic_covariates,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_weeks(&self) -> usize {
        self.t_pre + self.t_post
    }

    pub fn t_pre(&self) -> usize {
        self.t_pre
    }

    pub fn t_post(&self) -> usize {
        self.t_post
    }

    pub fn outcome(&self) -> &DMatrix<f64> {
        &self.outcome
    }

    pub fn treat_active(&self) -> &DMatrix<f64> {
        &self.treat_active
    }

    pub fn ever_treated(&self) -> &[bool] {
        &self.ever_treated
    }

    pub fn static_covariates(&self) -> &DMatrix<f64> {
        &self.static_covariates
    }

    pub fn n_static_covariates(&self) -> usize {
        self.static_covariates.ncols()
    }

    pub fn dynamic_covariates(&self) -> &[DMatrix<f64>] {
        &self.dynamic_covariates
    }

    pub fn n_dynamic_covariates(&self) -> usize {
        self.dynamic_covariates.len()
    }

    /// Week-index ranges `(pre, post)`.
    pub fn split_pre_post(&self) -> (Range<usize>, Range<usize>) {
        (0..self.t_pre, self.t_pre..self.n_weeks())
    }

    /// Indices of ever-treated units, ascending.
    pub fn treated_units(&self) -> Vec<usize> {
        (0..self.n_units).filter(|&i| self.ever_treated[i]).collect()
    }

    /// Indices of never-treated units (the donor pool), ascending.
    pub fn donor_units(&self) -> Vec<usize> {
        (0..self.n_units).filter(|&i| !self.ever_treated[i]).collect()
    }

    /// A copy of the panel without one unit (rows above it shift down by
    /// one). Fails if the drop would leave no treated unit.
    pub fn drop_unit(&self, unit: usize) -> Result<Panel> {
        if unit >= self.n_units {
            return Err(Error::InvalidPanel(format!(
                "cannot drop unit {unit} from a {}-unit panel",
                self.n_units
            )));
        }
        let keep: Vec<usize> = (0..self.n_units).filter(|&i| i != unit).collect();
        self.select_units(&keep)
    }

    /// A panel made of the given unit rows, in order; duplicates are
    /// allowed (e.g. bootstrap resamples). Fails if no treated unit is
    /// selected.
    pub fn select_units(&self, units: &[usize]) -> Result<Panel> {
        if let Some(&bad) = units.iter().find(|&&u| u >= self.n_units) {
            return Err(Error::InvalidPanel(format!(
                "unit {bad} is out of range for a {}-unit panel",
                self.n_units
            )));
        }
        let rows = |m: &DMatrix<f64>| -> DMatrix<f64> {
            DMatrix::from_fn(units.len(), m.ncols(), |i, j| m[(units[i], j)])
        };
        Panel::new(
            self.t_pre,
            self.t_post,
            rows(&self.outcome),
            rows(&self.treat_active),
            units.iter().map(|&i| self.ever_treated[i]).collect(),
            rows(&self.static_covariates),
            self.dynamic_covariates.iter().map(&rows).collect(),
        )
    }

    /// Writes the panel in long format:
    /// `geo,week,y,d,g,xs0..,xd0..`, one row per geo-week, geo-major.
    pub fn export_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = vec!["geo".into(), "week".into(), "y".into(), "d".into(), "g".into()];
        for p in 0..self.n_static_covariates() {
            header.push(format!("xs{p}"));
        }
        for q in 0..self.n_dynamic_covariates() {
            header.push(format!("xd{q}"));
        }
        w.write_record(&header)?;
        for i in 0..self.n_units {
            for t in 0..self.n_weeks() {
                let mut rec: Vec<String> = vec![
                    i.to_string(),
                    t.to_string(),
                    fmt_value(self.outcome[(i, t)]),
                    (self.treat_active[(i, t)] as i64).to_string(),
                    i64::from(self.ever_treated[i]).to_string(),
                ];
                for p in 0..self.n_static_covariates() {
                    rec.push(fmt_value(self.static_covariates[(i, p)]));
                }
                for grid in &self.dynamic_covariates {
                    rec.push(fmt_value(grid[(i, t)]));
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a panel written by [`Panel::export_csv`].
    ///
    /// Geo ids must be `0..n_units` and weeks `0..n_weeks`, each complete.
    /// The treatment start week is inferred as the earliest week with an
    /// active treatment indicator.
    pub fn import_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        for (pos, name) in ["geo", "week", "y", "d", "g"].iter().enumerate() {
            if cols.get(pos) != Some(name) {
                return Err(Error::Parse(format!(
                    "panel csv must start with columns geo,week,y,d,g; found {:?}",
                    &cols[..cols.len().min(5)]
                )));
            }
        }
        let n_static = cols.iter().filter(|c| c.starts_with("xs")).count();
        let n_dynamic = cols.iter().filter(|c| c.starts_with("xd")).count();
        for p in 0..n_static {
            if cols.get(5 + p) != Some(&format!("xs{p}").as_str()) {
                return Err(Error::Parse("static covariate columns must be xs0,xs1,... in order".into()));
            }
        }
        for q in 0..n_dynamic {
            if cols.get(5 + n_static + q) != Some(&format!("xd{q}").as_str()) {
                return Err(Error::Parse("dynamic covariate columns must be xd0,xd1,... in order".into()));
            }
        }

        struct Row {
            geo: usize,
            week: usize,
            y: f64,
            d: f64,
            g: bool,
            xs: Vec<f64>,
            xd: Vec<f64>,
        }
        let mut rows: Vec<Row> = Vec::new();
        let mut max_geo = 0usize;
        let mut max_week = 0usize;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 5 + n_static + n_dynamic {
                return Err(Error::Parse(format!(
                    "row has {} fields, expected {}",
                    rec.len(),
                    5 + n_static + n_dynamic
                )));
            }
            let geo: usize = parse_field(&rec, 0, "geo")?;
            let week: usize = parse_field(&rec, 1, "week")?;
            let y: f64 = parse_field(&rec, 2, "y")?;
            let d: f64 = parse_field(&rec, 3, "d")?;
            let g_raw: i64 = parse_field(&rec, 4, "g")?;
            let g = match g_raw {
                0 => false,
                1 => true,
                other => return Err(Error::Parse(format!("g must be 0 or 1, got {other}"))),
            };
            let xs = (0..n_static)
                .map(|p| parse_field(&rec, 5 + p, "xs"))
                .collect::<Result<Vec<f64>>>()?;
            let xd = (0..n_dynamic)
                .map(|q| parse_field(&rec, 5 + n_static + q, "xd"))
                .collect::<Result<Vec<f64>>>()?;
            max_geo = max_geo.max(geo);
            max_week = max_week.max(week);
            rows.push(Row { geo, week, y, d, g, xs, xd });
        }
        if rows.is_empty() {
            return Err(Error::Parse("panel csv has no data rows".into()));
        }
        let n_units = max_geo + 1;
        let n_weeks = max_week + 1;
        if rows.len() != n_units * n_weeks {
            return Err(Error::Parse(format!(
                "expected {} rows for {} geos x {} weeks, found {}",
                n_units * n_weeks,
                n_units,
                n_weeks,
                rows.len()
            )));
        }

        let mut outcome = DMatrix::from_element(n_units, n_weeks, f64::NAN);
        let mut treat = DMatrix::from_element(n_units, n_weeks, f64::NAN);
        let mut ever: Vec<Option<bool>> = vec![None; n_units];
        let mut statics = DMatrix::from_element(n_units, n_static, f64::NAN);
        let mut dynamics = vec![DMatrix::from_element(n_units, n_weeks, f64::NAN); n_dynamic];
        for row in &rows {
            if !outcome[(row.geo, row.week)].is_nan() {
                return Err(Error::Parse(format!(
                    "duplicate cell for geo {}, week {}",
                    row.geo, row.week
                )));
            }
            outcome[(row.geo, row.week)] = row.y;
            treat[(row.geo, row.week)] = row.d;
            match ever[row.geo] {
                None => ever[row.geo] = Some(row.g),
                Some(prev) if prev != row.g => {
                    return Err(Error::Parse(format!("inconsistent g flag for geo {}", row.geo)))
                }
                _ => {}
            }
            for (p, &v) in row.xs.iter().enumerate() {
                let cell = statics[(row.geo, p)];
                if cell.is_nan() {
                    statics[(row.geo, p)] = v;
                } else if cell != v {
                    return Err(Error::Parse(format!(
                        "static covariate xs{p} varies within geo {}",
                        row.geo
                    )));
                }
            }
            for (q, &v) in row.xd.iter().enumerate() {
                dynamics[q][(row.geo, row.week)] = v;
            }
        }
        let ever_treated: Vec<bool> = ever
            .into_iter()
            .map(|g| g.ok_or_else(|| Error::Parse("geo with no rows".into())))
            .collect::<Result<Vec<bool>>>()?;

        // Infer the treatment start as the earliest active week.
        let mut t_start: Option<usize> = None;
        for t in 0..n_weeks {
            if (0..n_units).any(|i| treat[(i, t)] == 1.0) {
                t_start = Some(t);
                break;
            }
        }
        let t_pre = t_start
            .ok_or_else(|| Error::Parse("panel csv has no active-treatment rows".into()))?;
        if t_pre == 0 {
            return Err(Error::Parse("treatment is active from week 0; no pre-period".into()));
        }
        let t_post = n_weeks - t_pre;
        Panel::new(t_pre, t_post, outcome, treat, ever_treated, statics, dynamics)
    }
}

fn parse_field<T: FromStr>(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| Error::Parse(format!("missing field {name}")))?;
    raw.trim()
        .parse::<T>()
        .map_err(|_| Error::Parse(format!("cannot parse {name} from {raw:?}")))
}

/// Formats a float with 12 significant digits, the precision contract of the
/// CSV exports. Re-importing and re-exporting is byte-stable at this
/// precision.
fn fmt_value(x: f64) -> String {
    format!("{x:.11e}")
}

/// Potential-outcome grids and the implied target estimand for one simulated
/// panel.
///
/// `y0` is the untreated potential outcome, `y1` the treated one, and `tau`
/// the multiplicative lift, with `y1 = y0 * (1 + tau)` cell by cell. `tau`
/// is exactly zero for every never-treated unit and every pre-period week.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    y0: DMatrix<f64>,
    y1: DMatrix<f64>,
    tau: DMatrix<f64>,
    true_att: f64,
}

impl GroundTruth {
    /// Validates the grids against a panel and computes the target estimand.
    pub fn new(panel: &Panel, y0: DMatrix<f64>, y1: DMatrix<f64>, tau: DMatrix<f64>) -> Result<Self> {
        let shape = (panel.n_units(), panel.n_weeks());
        for (name, grid) in [("y0", &y0), ("y1", &y1), ("tau", &tau)] {
            if grid.shape() != shape {
                return Err(Error::InvalidPanel(format!(
                    "ground-truth grid {name} is {:?}, expected {:?}",
                    grid.shape(),
                    shape
                )));
            }
        }
        for i in 0..shape.0 {
            for t in 0..shape.1 {
                let masked = !panel.ever_treated()[i] || t < panel.t_pre();
                if masked && tau[(i, t)] != 0.0 {
                    return Err(Error::InvalidPanel(format!(
                        "lift must be exactly zero outside treated post-period cells; \
                         got {} at unit {i}, week {t}",
                        tau[(i, t)]
                    )));
                }
                let implied = y0[(i, t)] * (1.0 + tau[(i, t)]);
                let err = (y1[(i, t)] - implied).abs();
                if err > 1e-9 * implied.abs().max(1.0) {
                    return Err(Error::InvalidPanel(format!(
                        "y1 must equal y0 * (1 + tau); off by {err} at unit {i}, week {t}"
                    )));
                }
            }
        }
        let true_att = att_from_grids(panel, &y0, &y1);
        Ok(Self { y0, y1, tau, true_att })
    }

    pub fn y0(&self) -> &DMatrix<f64> {
        &self.y0
    }

    pub fn y1(&self) -> &DMatrix<f64> {
        &self.y1
    }

    pub fn tau(&self) -> &DMatrix<f64> {
        &self.tau
    }

    /// The target estimand: the average of `y1 - y0` over treated units and
    /// post-period weeks (average treatment effect on the treated, in
    /// outcome units per geo-week).
    pub fn true_att(&self) -> f64 {
        self.true_att
    }

    /// Writes the grids in long format: `geo,week,y0,y1,tau`.
    pub fn export_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["geo", "week", "y0", "y1", "tau"])?;
        let (n_units, n_weeks) = self.y0.shape();
        for i in 0..n_units {
            for t in 0..n_weeks {
                w.write_record(&[
                    i.to_string(),
                    t.to_string(),
                    fmt_value(self.y0[(i, t)]),
                    fmt_value(self.y1[(i, t)]),
                    fmt_value(self.tau[(i, t)]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads grids written by [`GroundTruth::export_csv`] and revalidates
    /// them against the panel.
    pub fn import_csv<R: Read>(panel: &Panel, reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let expect = ["geo", "week", "y0", "y1", "tau"];
        if header.iter().collect::<Vec<_>>() != expect {
            return Err(Error::Parse(format!(
                "ground-truth csv header must be {expect:?}, found {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let shape = (panel.n_units(), panel.n_weeks());
        let mut y0 = DMatrix::from_element(shape.0, shape.1, f64::NAN);
        let mut y1 = y0.clone();
        let mut tau = y0.clone();
        for rec in r.records() {
            let rec = rec?;
            let geo: usize = parse_field(&rec, 0, "geo")?;
            let week: usize = parse_field(&rec, 1, "week")?;
            if geo >= shape.0 || week >= shape.1 {
                return Err(Error::Parse(format!(
                    "cell ({geo}, {week}) outside panel of shape {shape:?}"
                )));
            }
            y0[(geo, week)] = parse_field(&rec, 2, "y0")?;
            y1[(geo, week)] = parse_field(&rec, 3, "y1")?;
            tau[(geo, week)] = parse_field(&rec, 4, "tau")?;
        }
        if y0.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse("ground-truth csv is missing cells".into()));
        }
        GroundTruth::new(panel, y0, y1, tau)
    }
}

/// Average of `y1 - y0` over treated units and post-period weeks.
fn att_from_grids(panel: &Panel, y0: &DMatrix<f64>, y1: &DMatrix<f64>) -> f64 {
    let (_, post) = panel.split_pre_post();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in panel.treated_units() {
        for t in post.clone() {
            sum += y1[(i, t)] - y0[(i, t)];
            count += 1;
        }
    }
    sum / count as f64
}

/// The target estimand: the average of `y1 - y0` over treated units and
/// post-period weeks, recomputed from the grids.
pub fn true_att(gt: &GroundTruth, panel: &Panel) -> Result<f64> {
    let shape = (panel.n_units(), panel.n_weeks());
    if gt.y0().shape() != shape {
        return Err(Error::InvalidPanel(format!(
            "ground truth of shape {:?} does not match panel of shape {shape:?}",
            gt.y0().shape()
        )));
    }
    if panel.treated_units().is_empty() {
        return Err(Error::InvalidPanel("panel has no treated units".into()));
    }
    Ok(att_from_grids(panel, gt.y0(), gt.y1()))
}

/// The seven benchmarked estimators, in canonical reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorId {
    /// Augmented synthetic control matched on pre-period outcomes only.
    AscY,
    /// Synthetic control matched on outcomes plus static demographics.
    AscDem,
    /// Synthetic control matched on outcomes, demographics, and lagged
    /// dynamic covariates.
    AscDemLag,
    /// Double ML with correlated-random-effects (per-geo mean) controls.
    CreDml,
    /// Double ML with unit and week fixed-effect dummies.
    TwfeDml,
    /// Double ML on first-differenced data.
    FdDml,
    /// Double ML on within-geo demeaned data.
    WgDml,
}

impl EstimatorId {
    /// All estimators, in the canonical reporting order.
    pub const ALL: [EstimatorId; 7] = [
        EstimatorId::AscY,
        EstimatorId::AscDem,
        EstimatorId::AscDemLag,
        EstimatorId::CreDml,
        EstimatorId::TwfeDml,
        EstimatorId::FdDml,
        EstimatorId::WgDml,
    ];

    /// Stable kebab-case name used in CLIs and reports.
    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::AscY => "asc-y",
            EstimatorId::AscDem => "asc-dem",
            EstimatorId::AscDemLag => "asc-dem-lag",
            EstimatorId::CreDml => "cre-dml",
            EstimatorId::TwfeDml => "twfe-dml",
            EstimatorId::FdDml => "fd-dml",
            EstimatorId::WgDml => "wg-dml",
        }
    }

    /// Human-readable label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            EstimatorId::AscY => "ASC-Y",
            EstimatorId::AscDem => "ASC-DEM",
            EstimatorId::AscDemLag => "ASC-DEM-LAG",
            EstimatorId::CreDml => "CRE-DML",
            EstimatorId::TwfeDml => "TWFE-DML",
            EstimatorId::FdDml => "FD-DML",
            EstimatorId::WgDml => "WG-DML",
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        // DML variants also answer to their bare transform names ("wg", "fd", ...),
        // matching the transform parser used elsewhere.
        let expanded = match lower.as_str() {
            "cre" | "twfe" | "fd" | "wg" => format!("{lower}-dml"),
            _ => lower,
        };
        EstimatorId::ALL
            .into_iter()
            .find(|id| id.name() == expanded || id.label().to_ascii_lowercase() == expanded)
            .ok_or_else(|| {
                Error::Parse(format!(
                    "unknown estimator {s:?}; expected one of {}",
                    EstimatorId::ALL.map(|id| id.name()).join(", ")
                ))
            })
    }
}

/// A point estimate with its normal-approximation 95% confidence interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimator: EstimatorId,
    /// Estimated average treatment effect on the treated, per geo-week.
    pub att_hat: f64,
    /// Standard error of `att_hat`.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Whether every inner optimization reported convergence.
    pub converged: bool,
    /// Estimator-specific scalar diagnostics.
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimateResult {
    /// Builds a result with `ci = att_hat +/- 1.96 * se`.
    pub fn from_att_se(estimator: EstimatorId, att_hat: f64, se: f64, converged: bool) -> Self {
        Self {
            estimator,
            att_hat,
            se,
            ci_low: att_hat - Z_95 * se,
            ci_high: att_hat + Z_95 * se,
            converged,
            diagnostics: BTreeMap::new(),
        }
    }

    /// True when the open interval `(ci_low, ci_high)` excludes zero,
    /// i.e. the estimator rejects the no-effect null at the 5% level.
    pub fn rejects_zero(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }

    /// True when the interval contains `target`.
    pub fn covers(&self, target: f64) -> bool {
        self.ci_low <= target && target <= self.ci_high
    }
}
