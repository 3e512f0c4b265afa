//! Panel-aware double machine learning in four flavors: two-way-fixed-
//! effects dummies (TWFE), within-geo demeaning (WG), first differences
//! (FD), and correlated-random-effects/Mundlak mean augmentation (CRE).
//!
//! Pipeline: transform the panel, split geos into cluster-balanced
//! stratified folds, cross-fit outcome and propensity learners out-of-fold,
//! form stabilized inverse-propensity weights winsorized at an upper
//! quantile, and run a weighted no-intercept regression of outcome
//! residuals on treatment residuals with geo-cluster-robust sandwich
//! inference. An optional stratified geo bootstrap adds a percentile
//! interval.
//!
//! Treatment-residual bookkeeping: the propensity learner is always fit on
//! the *raw* 0/1 active-treatment indicator (so its predictions can serve
//! the inverse-propensity weight formula), using the variant's transformed
//! covariates. The treatment residual is the transformed indicator minus
//! the *same transform applied to the predicted probability surface*:
//! identity for TWFE/CRE, per-geo demeaning for WG, and first differences
//! for FD, where the week-0 surface value is the structural zero (no
//! treatment is ever active in week 0). Inverse-propensity weights use a
//! copy of the predictions clamped inside (0, 1); the residuals use the
//! learner output as-is.
//!
//! CRE's mean-of-treatment column is part of the transformed covariate
//! matrix but is excluded from both nuisance fits: with a deterministic
//! launch-week design, treatment status is an exact function of that column
//! and the week, so a learner that sees it collapses the treatment residual
//! (degenerate propensity) or absorbs the lift into the outcome model.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit, LearnerKind, LearnerSpec};
use crate::panel::{EstimateResult, EstimatorId, Panel};

/// The four panel transformations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DmlVariant {
    #[serde(rename = "twfe")]
    Twfe,
    #[serde(rename = "wg")]
    Wg,
    #[serde(rename = "fd")]
    Fd,
    #[serde(rename = "cre")]
    Cre,
}

impl DmlVariant {
    pub fn estimator_id(self) -> EstimatorId {
        match self {
            DmlVariant::Twfe => EstimatorId::TwfeDml,
            DmlVariant::Wg => EstimatorId::WgDml,
            DmlVariant::Fd => EstimatorId::FdDml,
            DmlVariant::Cre => EstimatorId::CreDml,
        }
    }
}

impl std::str::FromStr for DmlVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "twfe" | "twfe-dml" => Ok(DmlVariant::Twfe),
            "wg" | "wg-dml" => Ok(DmlVariant::Wg),
            "fd" | "fd-dml" => Ok(DmlVariant::Fd),
            "cre" | "cre-dml" => Ok(DmlVariant::Cre),
            other => Err(Error::Parse(format!("unknown panel-DML variant {other:?}"))),
        }
    }
}

/// Double-machine-learning estimator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmlSpec {
    pub variant: DmlVariant,
    pub n_folds: usize,
    /// Upper quantile at which inverse-propensity weights are winsorized.
    pub trim_quantile: f64,
    pub outcome_learner: LearnerSpec,
    pub propensity_learner: LearnerSpec,
    /// Stratified geo-bootstrap replicates for a percentile interval
    /// (0 = off).
    pub bootstrap_reps: usize,
}

impl Default for DmlSpec {
    fn default() -> Self {
        Self {
            variant: DmlVariant::Wg,
            n_folds: 5,
            trim_quantile: 0.95,
            outcome_learner: LearnerSpec::new(LearnerKind::GbtRegressor),
            propensity_learner: LearnerSpec::new(LearnerKind::GbtClassifier),
            bootstrap_reps: 0,
        }
    }
}

impl DmlSpec {
    pub fn new(variant: DmlVariant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_folds must be at least 2, got {}",
                self.n_folds
            )));
        }
        if !(self.trim_quantile > 0.5 && self.trim_quantile <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "trim_quantile must be in (0.5, 1], got {}",
                self.trim_quantile
            )));
        }
        if self.outcome_learner.kind.is_classifier() {
            return Err(Error::InvalidConfig(
                "the outcome learner must be a regressor kind".into(),
            ));
        }
        self.outcome_learner.validate()?;
        self.propensity_learner.validate()?;
        Ok(())
    }
}

/// One panel after its variant's transformation, in geo-major row order.
#[derive(Debug, Clone)]
pub struct TransformedPanel {
    pub variant: DmlVariant,
    /// Transformed outcome per row.
    pub y_dagger: Vec<f64>,
    /// Transformed treatment per row.
    pub d_dagger: Vec<f64>,
    /// Transformed covariates (see the per-variant layout in `transform`).
    pub x_dagger: DMatrix<f64>,
    /// Cluster (geo) id per row.
    pub geo_of_row: Vec<usize>,
    /// Week index per row.
    pub week_of_row: Vec<usize>,
    /// Raw 0/1 active-treatment indicator at the row's geo-week.
    pub d_raw: Vec<f64>,
    /// Rows dropped by the transform (first differences lose week 0).
    pub rows_dropped: usize,
    /// Indices of `x_dagger` columns the nuisance learners see.
    pub nuisance_cols: Vec<usize>,
    n_units: usize,
}

impl TransformedPanel {
    pub fn n_rows(&self) -> usize {
        self.y_dagger.len()
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    /// The nuisance learners' feature matrix (`nuisance_cols` of
    /// `x_dagger`).
    pub fn nuisance_features(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_rows(), self.nuisance_cols.len(), |r, j| {
            self.x_dagger[(r, self.nuisance_cols[j])]
        })
    }
}

/// Applies one variant's panel transformation.
///
/// Covariate layouts (columns of `x_dagger`):
/// * WG:   demeaned dynamic covariates, demeaned week index.
/// * FD:   differenced dynamic covariates, differenced week index (all 1).
/// * TWFE: statics, dynamics, week index, unit dummies for units `1..n`,
///   week dummies for weeks `1..T`.
/// * CRE:  statics, dynamics, week index, per-geo means of each dynamic
///   covariate, per-geo mean week, per-geo mean treatment (last column).
///
/// Statics are omitted where the transform would zero them (WG, FD).
pub fn transform(panel: &Panel, variant: DmlVariant) -> Result<TransformedPanel> {
    let n = panel.n_units();
    let t = panel.n_weeks();
    let p = panel.n_static_covariates();
    let q = panel.n_dynamic_covariates();
    let y = panel.outcome();
    let d = panel.treat_active();
    let dyn_cov = panel.dynamic_covariates();

    let mut y_dagger;
    let mut d_dagger;
    let mut x_dagger;
    let mut geo_of_row;
    let mut week_of_row;
    let mut d_raw;
    let rows_dropped;

    match variant {
        DmlVariant::Wg => {
            let rows = n * t;
            y_dagger = Vec::with_capacity(rows);
            d_dagger = Vec::with_capacity(rows);
            geo_of_row = Vec::with_capacity(rows);
            week_of_row = Vec::with_capacity(rows);
            d_raw = Vec::with_capacity(rows);
            x_dagger = DMatrix::zeros(rows, q + 1);
            rows_dropped = 0;
            let week_mean = (0..t).map(|w| w as f64).sum::<f64>() / t as f64;
            for i in 0..n {
                let y_mean = (0..t).map(|w| y[(i, w)]).sum::<f64>() / t as f64;
                let d_mean = (0..t).map(|w| d[(i, w)]).sum::<f64>() / t as f64;
                let dyn_means: Vec<f64> = (0..q)
                    .map(|c| (0..t).map(|w| dyn_cov[c][(i, w)]).sum::<f64>() / t as f64)
                    .collect();
                for w in 0..t {
                    let r = i * t + w;
                    y_dagger.push(y[(i, w)] - y_mean);
                    d_dagger.push(d[(i, w)] - d_mean);
                    geo_of_row.push(i);
                    week_of_row.push(w);
                    d_raw.push(d[(i, w)]);
                    for c in 0..q {
                        x_dagger[(r, c)] = dyn_cov[c][(i, w)] - dyn_means[c];
                    }
                    x_dagger[(r, q)] = w as f64 - week_mean;
                }
            }
        }
        DmlVariant::Fd => {
            let rows = n * (t - 1);
            y_dagger = Vec::with_capacity(rows);
            d_dagger = Vec::with_capacity(rows);
            geo_of_row = Vec::with_capacity(rows);
            week_of_row = Vec::with_capacity(rows);
            d_raw = Vec::with_capacity(rows);
            x_dagger = DMatrix::zeros(rows, q + 1);
            rows_dropped = n;
            for i in 0..n {
                for w in 1..t {
                    let r = i * (t - 1) + (w - 1);
                    y_dagger.push(y[(i, w)] - y[(i, w - 1)]);
                    d_dagger.push(d[(i, w)] - d[(i, w - 1)]);
                    geo_of_row.push(i);
                    week_of_row.push(w);
                    d_raw.push(d[(i, w)]);
                    for c in 0..q {
                        x_dagger[(r, c)] = dyn_cov[c][(i, w)] - dyn_cov[c][(i, w - 1)];
                    }
                    x_dagger[(r, q)] = 1.0;
                }
            }
        }
        DmlVariant::Twfe => {
            let rows = n * t;
            y_dagger = Vec::with_capacity(rows);
            d_dagger = Vec::with_capacity(rows);
            geo_of_row = Vec::with_capacity(rows);
            week_of_row = Vec::with_capacity(rows);
            d_raw = Vec::with_capacity(rows);
            x_dagger = DMatrix::zeros(rows, p + q + 1 + (n - 1) + (t - 1));
            rows_dropped = 0;
            for i in 0..n {
                for w in 0..t {
                    let r = i * t + w;
                    y_dagger.push(y[(i, w)]);
                    d_dagger.push(d[(i, w)]);
                    geo_of_row.push(i);
                    week_of_row.push(w);
                    d_raw.push(d[(i, w)]);
                    for c in 0..p {
                        x_dagger[(r, c)] = panel.static_covariates()[(i, c)];
                    }
                    for c in 0..q {
                        x_dagger[(r, p + c)] = dyn_cov[c][(i, w)];
                    }
                    x_dagger[(r, p + q)] = w as f64;
                    if i >= 1 {
                        x_dagger[(r, p + q + 1 + (i - 1))] = 1.0;
                    }
                    if w >= 1 {
                        x_dagger[(r, p + q + 1 + (n - 1) + (w - 1))] = 1.0;
                    }
                }
            }
        }
        DmlVariant::Cre => {
            let rows = n * t;
            y_dagger = Vec::with_capacity(rows);
            d_dagger = Vec::with_capacity(rows);
            geo_of_row = Vec::with_capacity(rows);
            week_of_row = Vec::with_capacity(rows);
            d_raw = Vec::with_capacity(rows);
            x_dagger = DMatrix::zeros(rows, p + q + 1 + q + 2);
            rows_dropped = 0;
            let week_mean = (0..t).map(|w| w as f64).sum::<f64>() / t as f64;
            for i in 0..n {
                let d_mean = (0..t).map(|w| d[(i, w)]).sum::<f64>() / t as f64;
                let dyn_means: Vec<f64> = (0..q)
                    .map(|c| (0..t).map(|w| dyn_cov[c][(i, w)]).sum::<f64>() / t as f64)
                    .collect();
                for w in 0..t {
                    let r = i * t + w;
                    y_dagger.push(y[(i, w)]);
                    d_dagger.push(d[(i, w)]);
                    geo_of_row.push(i);
                    week_of_row.push(w);
                    d_raw.push(d[(i, w)]);
                    for c in 0..p {
                        x_dagger[(r, c)] = panel.static_covariates()[(i, c)];
                    }
                    for c in 0..q {
                        x_dagger[(r, p + c)] = dyn_cov[c][(i, w)];
                        x_dagger[(r, p + q + 1 + c)] = dyn_means[c];
                    }
                    x_dagger[(r, p + q)] = w as f64;
                    x_dagger[(r, p + q + 1 + q)] = week_mean;
                    x_dagger[(r, p + q + 1 + q + 1)] = d_mean;
                }
            }
        }
    }

    let n_cols = x_dagger.ncols();
    let nuisance_cols: Vec<usize> = match variant {
        // Everything except the mean-treatment column (the last one).
        DmlVariant::Cre => (0..n_cols - 1).collect(),
        _ => (0..n_cols).collect(),
    };

    Ok(TransformedPanel {
        variant,
        y_dagger,
        d_dagger,
        x_dagger,
        geo_of_row,
        week_of_row,
        d_raw,
        rows_dropped,
        nuisance_cols,
        n_units: n,
    })
}

/// Geo-level fold labels, stratified by treatment status.
#[derive(Debug, Clone, Serialize)]
pub struct FoldAssignment {
    pub fold_of_geo: Vec<usize>,
    pub n_folds: usize,
}

/// Assigns geos to folds: treated and control geos are shuffled separately
/// and dealt round-robin, so each fold holds both strata with sizes within
/// one of each other.
pub fn make_folds(panel: &Panel, spec: &DmlSpec, rng: &mut ChaCha12Rng) -> Result<FoldAssignment> {
    let treated = panel.treated_units();
    let controls = panel.donor_units();
    for (label, stratum) in [("treated", &treated), ("control", &controls)] {
        if stratum.len() < spec.n_folds {
            return Err(Error::EstimatorInput(format!(
                "{} {label} geos cannot fill {} folds",
                stratum.len(),
                spec.n_folds
            )));
        }
    }
    let mut fold_of_geo = vec![0usize; panel.n_units()];
    for stratum in [treated, controls] {
        let mut shuffled = stratum;
        shuffled.shuffle(rng);
        for (j, geo) in shuffled.into_iter().enumerate() {
            fold_of_geo[geo] = j % spec.n_folds;
        }
    }
    Ok(FoldAssignment { fold_of_geo, n_folds: spec.n_folds })
}

/// Out-of-fold residuals and propensity predictions, aligned with the
/// transformed panel's rows.
#[derive(Debug, Clone)]
pub struct Crossfit {
    pub eps_y: Vec<f64>,
    pub eps_d: Vec<f64>,
    /// Raw propensity-learner predictions (the fitted treatment surface).
    pub p_hat: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Cross-fits both nuisance learners: for each fold, models trained on all
/// other folds' geos predict this fold's rows, so no row is predicted by a
/// model that saw its geo.
pub fn crossfit_residuals(
    tp: &TransformedPanel,
    folds: &FoldAssignment,
    spec: &DmlSpec,
    rng: &mut ChaCha12Rng,
) -> Result<Crossfit> {
    let n_rows = tp.n_rows();
    let features = tp.nuisance_features();
    let mut eps_y = vec![f64::NAN; n_rows];
    let mut eps_d = vec![f64::NAN; n_rows];
    let mut p_hat = vec![f64::NAN; n_rows];

    for k in 0..folds.n_folds {
        let train_rows: Vec<usize> = (0..n_rows)
            .filter(|&r| folds.fold_of_geo[tp.geo_of_row[r]] != k)
            .collect();
        let test_rows: Vec<usize> = (0..n_rows)
            .filter(|&r| folds.fold_of_geo[tp.geo_of_row[r]] == k)
            .collect();
        let x_train = rows_of(&features, &train_rows);
        let x_test = rows_of(&features, &test_rows);

        let y_train: Vec<f64> = train_rows.iter().map(|&r| tp.y_dagger[r]).collect();
        let outcome = fit(&spec.outcome_learner, &x_train, &y_train, rng)
            .map_err(|e| Error::EstimatorInput(format!("fold {k} outcome learner: {e}")))?;
        let y_pred = outcome
            .predict(&x_test)
            .map_err(|e| Error::EstimatorInput(format!("fold {k} outcome prediction: {e}")))?;
        for (idx, &r) in test_rows.iter().enumerate() {
            eps_y[r] = tp.y_dagger[r] - y_pred[idx];
        }

        let d_train: Vec<f64> = train_rows.iter().map(|&r| tp.d_raw[r]).collect();
        let propensity = fit(&spec.propensity_learner, &x_train, &d_train, rng)
            .map_err(|e| Error::EstimatorInput(format!("fold {k} propensity learner: {e}")))?;
        let p_pred = propensity
            .predict(&x_test)
            .map_err(|e| Error::EstimatorInput(format!("fold {k} propensity prediction: {e}")))?;
        for (idx, &r) in test_rows.iter().enumerate() {
            p_hat[r] = p_pred[idx];
        }

        // Transform the predicted treatment surface like the indicator.
        // Rows of one geo are contiguous and week-ordered by construction.
        let mut pos = 0usize;
        while pos < test_rows.len() {
            let geo = tp.geo_of_row[test_rows[pos]];
            let mut end = pos;
            while end < test_rows.len() && tp.geo_of_row[test_rows[end]] == geo {
                end += 1;
            }
            let geo_rows = &test_rows[pos..end];
            match tp.variant {
                DmlVariant::Twfe | DmlVariant::Cre => {
                    for &r in geo_rows {
                        eps_d[r] = tp.d_dagger[r] - p_hat[r];
                    }
                }
                DmlVariant::Wg => {
                    let mean = geo_rows.iter().map(|&r| p_hat[r]).sum::<f64>() / geo_rows.len() as f64;
                    for &r in geo_rows {
                        eps_d[r] = tp.d_dagger[r] - (p_hat[r] - mean);
                    }
                }
                DmlVariant::Fd => {
                    // The week-0 surface value is the structural zero: no
                    // geo is treated in week 0, so its difference partner
                    // is 0 rather than a prediction.
                    let mut prev = 0.0;
                    for &r in geo_rows {
                        eps_d[r] = tp.d_dagger[r] - (p_hat[r] - prev);
                        prev = p_hat[r];
                    }
                }
            }
            pos = end;
        }
    }
    debug_assert!(eps_y.iter().all(|v| v.is_finite()));
    Ok(Crossfit { eps_y, eps_d, p_hat })
}

/// Linear interpolation quantile on sorted data (the common "type 7" rule).
fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

fn stabilized_weight(d: f64, p: f64) -> f64 {
    d * (1.0 - p) / p + (1.0 - d) * p / (1.0 - p)
}

/// Stabilized inverse-propensity weights, winsorized at the
/// `trim_quantile` empirical quantile (weights above it are set to it, not
/// dropped).
pub fn iptw_weights(p_hat: &[f64], d_raw: &[f64], trim_quantile: f64) -> Result<Vec<f64>> {
    if p_hat.len() != d_raw.len() {
        return Err(Error::EstimatorInput(format!(
            "{} propensities vs {} treatment rows",
            p_hat.len(),
            d_raw.len()
        )));
    }
    if let Some(&bad) = p_hat.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::EstimatorInput(format!(
            "propensities must lie strictly inside (0, 1), got {bad}"
        )));
    }
    if d_raw.iter().any(|&d| d != 0.0 && d != 1.0) {
        return Err(Error::EstimatorInput("treatment indicator must be 0 or 1".into()));
    }
    let mut weights: Vec<f64> = d_raw.iter().zip(p_hat).map(|(&d, &p)| stabilized_weight(d, p)).collect();
    let mut sorted = weights.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite weight"));
    let cap = quantile_type7(&sorted, trim_quantile);
    for w in weights.iter_mut() {
        if *w > cap {
            *w = cap;
        }
    }
    Ok(weights)
}

/// Weighted no-intercept regression of outcome residuals on treatment
/// residuals with geo-cluster-robust sandwich standard errors.
pub fn second_stage(
    estimator: EstimatorId,
    eps_y: &[f64],
    eps_d: &[f64],
    weights: &[f64],
    geo_of_row: &[usize],
) -> Result<EstimateResult> {
    let n = eps_y.len();
    if eps_d.len() != n || weights.len() != n || geo_of_row.len() != n {
        return Err(Error::EstimatorInput("second-stage inputs differ in length".into()));
    }
    if eps_y.iter().chain(eps_d).chain(weights).any(|v| !v.is_finite()) {
        return Err(Error::EstimatorInput("non-finite second-stage inputs".into()));
    }
    let denom: f64 = (0..n).map(|i| weights[i] * eps_d[i] * eps_d[i]).sum();
    if !(denom > 0.0) {
        return Err(Error::Numerical(
            "treatment residuals are degenerate (weighted sum of squares is zero)".into(),
        ));
    }
    let numer: f64 = (0..n).map(|i| weights[i] * eps_d[i] * eps_y[i]).sum();
    let theta = numer / denom;

    let n_geos = geo_of_row.iter().max().map_or(0, |&g| g + 1);
    let mut cluster_sum = vec![0.0f64; n_geos];
    let mut seen = vec![false; n_geos];
    for i in 0..n {
        let g = geo_of_row[i];
        let resid = eps_y[i] - theta * eps_d[i];
        cluster_sum[g] += weights[i] * eps_d[i] * resid;
        seen[g] = true;
    }
    let g_count = seen.iter().filter(|&&s| s).count();
    if g_count < 2 {
        return Err(Error::EstimatorInput(format!(
            "cluster-robust inference needs at least 2 geo clusters, got {g_count}"
        )));
    }
    let meat: f64 = cluster_sum.iter().map(|s| s * s).sum();
    let se = (g_count as f64 / (g_count as f64 - 1.0) * meat / (denom * denom)).sqrt();

    let mut result = EstimateResult::from_att_se(estimator, theta, se, true);
    result.diagnostics.insert("n_clusters".into(), g_count as f64);
    result.diagnostics.insert("denominator".into(), denom);
    Ok(result)
}

fn clamp_propensity(p: f64) -> f64 {
    p.clamp(crate::learners::PROB_CLIP, 1.0 - crate::learners::PROB_CLIP)
}

fn run_pipeline(
    panel: &Panel,
    spec: &DmlSpec,
    rng: &mut ChaCha12Rng,
) -> Result<(EstimateResult, FoldAssignment, usize, f64)> {
    let tp = transform(panel, spec.variant)?;
    let folds = make_folds(panel, spec, rng)?;
    if spec.variant == DmlVariant::Fd {
        // Guaranteed by construction (every treated geo differences to a 1
        // at onset and every fold holds a treated geo); verified anyway.
        for k in 0..folds.n_folds {
            let any = (0..tp.n_rows())
                .any(|r| folds.fold_of_geo[tp.geo_of_row[r]] == k && tp.d_dagger[r] != 0.0);
            if !any {
                return Err(Error::EstimatorInput(format!(
                    "fold {k} has no treatment change under first differencing"
                )));
            }
        }
    }
    let cf = crossfit_residuals(&tp, &folds, spec, rng)?;
    let clamped: Vec<f64> = cf.p_hat.iter().map(|&p| clamp_propensity(p)).collect();
    let weights = iptw_weights(&clamped, &tp.d_raw, spec.trim_quantile)?;
    let cap = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n_trimmed = clamped
        .iter()
        .zip(&tp.d_raw)
        .filter(|(&p, &d)| stabilized_weight(d, p) > cap)
        .count();
    let mut result = second_stage(
        spec.variant.estimator_id(),
        &cf.eps_y,
        &cf.eps_d,
        &weights,
        &tp.geo_of_row,
    )?;
    result.diagnostics.insert("n_folds".into(), spec.n_folds as f64);
    result.diagnostics.insert("n_trimmed".into(), n_trimmed as f64);
    result.diagnostics.insert("trim_threshold".into(), cap);
    result.diagnostics.insert("rows".into(), tp.n_rows() as f64);
    Ok((result, folds, n_trimmed, cap))
}

/// Full estimate plus the fold map (for reporting).
pub fn estimate_detailed(
    panel: &Panel,
    spec: &DmlSpec,
    rng: &mut ChaCha12Rng,
) -> Result<(EstimateResult, FoldAssignment)> {
    spec.validate()?;
    let (mut result, folds, _, _) = run_pipeline(panel, spec, rng)?;

    if spec.bootstrap_reps > 0 {
        let treated = panel.treated_units();
        let controls = panel.donor_units();
        let mut thetas = Vec::with_capacity(spec.bootstrap_reps);
        for _ in 0..spec.bootstrap_reps {
            let mut units = Vec::with_capacity(panel.n_units());
            for _ in 0..treated.len() {
                units.push(treated[rng.random_range(0..treated.len())]);
            }
            for _ in 0..controls.len() {
                units.push(controls[rng.random_range(0..controls.len())]);
            }
            let resampled = panel.select_units(&units)?;
            let (boot, _, _, _) = run_pipeline(&resampled, spec, rng)?;
            thetas.push(boot.att_hat);
        }
        thetas.sort_by(|a, b| a.partial_cmp(b).expect("non-finite bootstrap estimate"));
        result
            .diagnostics
            .insert("bootstrap_ci_low".into(), quantile_type7(&thetas, 0.025));
        result
            .diagnostics
            .insert("bootstrap_ci_high".into(), quantile_type7(&thetas, 0.975));
        result
            .diagnostics
            .insert("bootstrap_reps".into(), spec.bootstrap_reps as f64);
    }
    Ok((result, folds))
}

/// Transform, fold, cross-fit, weight, and regress: one DML estimate.
pub fn estimate(panel: &Panel, spec: &DmlSpec, rng: &mut ChaCha12Rng) -> Result<EstimateResult> {
    estimate_detailed(panel, spec, rng).map(|(result, _)| result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::sim::{generate, ScenarioSpec, SimConfig};
    use approx::assert_relative_eq;

    fn ridge_spec(variant: DmlVariant) -> DmlSpec {
        DmlSpec {
            variant,
            outcome_learner: LearnerSpec { ridge_lambda: 1e-8, ..LearnerSpec::new(LearnerKind::Ridge) },
            propensity_learner: LearnerSpec { ridge_lambda: 1e-8, ..LearnerSpec::new(LearnerKind::Ridge) },
            ..DmlSpec::default()
        }
    }

    fn small_sim_panel() -> Panel {
        let cfg = SimConfig {
            n_units: 24,
            n_treated: 6,
            t_pre: 12,
            t_post: 4,
            ..SimConfig::default()
        };
        generate(&cfg, &ScenarioSpec::default(), 77, 0).unwrap().0
    }

    /// A hand-built linear panel: y = a_i + trend * t + slope * x + theta * D
    /// with one dynamic covariate and no noise beyond x itself.
    fn linear_panel(
        n: usize,
        n_treated: usize,
        t_pre: usize,
        t_post: usize,
        theta: f64,
        common_intercept: bool,
        seed: u64,
    ) -> Panel {
        use rand::Rng;
        let t = t_pre + t_post;
        let mut rng = stream_rng(seed, 0, "test/linear-panel");
        let intercepts: Vec<f64> = (0..n)
            .map(|_| if common_intercept { 500.0 } else { 500.0 + rng.random::<f64>() * 100.0 })
            .collect();
        let x = DMatrix::from_fn(n, t, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let ever: Vec<bool> = (0..n).map(|i| i < n_treated).collect();
        let outcome = DMatrix::from_fn(n, t, |i, w| {
            let d = if ever[i] && w >= t_pre { 1.0 } else { 0.0 };
            intercepts[i] + 2.0 * w as f64 + 30.0 * x[(i, w)] + theta * d
        });
        let active = DMatrix::from_fn(n, t, |i, w| if ever[i] && w >= t_pre { 1.0 } else { 0.0 });
        Panel::new(t_pre, t_post, outcome, active, ever, DMatrix::zeros(n, 0), vec![x]).unwrap()
    }

    #[test]
    fn spec_defaults_and_validation() {
        let spec = DmlSpec::default();
        assert_eq!(spec.n_folds, 5);
        assert_eq!(spec.trim_quantile, 0.95);
        assert_eq!(spec.outcome_learner.kind, LearnerKind::GbtRegressor);
        assert_eq!(spec.propensity_learner.kind, LearnerKind::GbtClassifier);
        assert_eq!(spec.bootstrap_reps, 0);
        spec.validate().unwrap();

        assert!(DmlSpec { n_folds: 1, ..DmlSpec::default() }.validate().is_err());
        assert!(DmlSpec { trim_quantile: 0.5, ..DmlSpec::default() }.validate().is_err());
        assert!(DmlSpec { trim_quantile: 1.01, ..DmlSpec::default() }.validate().is_err());
        let bad_outcome = DmlSpec {
            outcome_learner: LearnerSpec::new(LearnerKind::GbtClassifier),
            ..DmlSpec::default()
        };
        assert!(bad_outcome.validate().is_err());
    }

    #[test]
    fn within_transform_demeans_everything_per_geo() {
        let panel = small_sim_panel();
        let tp = transform(&panel, DmlVariant::Wg).unwrap();
        assert_eq!(tp.n_rows(), 24 * 16);
        assert_eq!(tp.rows_dropped, 0);
        // Statics are dropped: only dynamics + week remain.
        assert_eq!(tp.x_dagger.ncols(), panel.n_dynamic_covariates() + 1);
        for i in 0..24 {
            let rows: Vec<usize> = (0..16).map(|w| i * 16 + w).collect();
            let y_mean: f64 = rows.iter().map(|&r| tp.y_dagger[r]).sum::<f64>() / 16.0;
            assert!(y_mean.abs() < 1e-8, "geo {i} y mean {y_mean}");
            for c in 0..tp.x_dagger.ncols() {
                let x_mean: f64 = rows.iter().map(|&r| tp.x_dagger[(r, c)]).sum::<f64>() / 16.0;
                assert!(x_mean.abs() < 1e-8, "geo {i} col {c} mean {x_mean}");
            }
        }

        // A constant-outcome geo demeans to exactly zero.
        let outcome = DMatrix::from_fn(3, 4, |i, _| if i == 0 { 7.0 } else { 1.0 + i as f64 });
        let active = DMatrix::from_fn(3, 4, |i, w| if i == 2 && w >= 2 { 1.0 } else { 0.0 });
        let toy = Panel::new(
            2,
            2,
            outcome,
            active,
            vec![false, false, true],
            DMatrix::zeros(3, 0),
            Vec::new(),
        )
        .unwrap();
        let tp = transform(&toy, DmlVariant::Wg).unwrap();
        for w in 0..4 {
            assert_eq!(tp.y_dagger[w], 0.0);
        }
    }

    #[test]
    fn first_differences_drop_week_zero_and_spike_at_onset() {
        let panel = small_sim_panel();
        let tp = transform(&panel, DmlVariant::Fd).unwrap();
        assert_eq!(tp.n_rows(), 24 * 15);
        assert_eq!(tp.rows_dropped, 24);
        assert!(tp.d_dagger.iter().all(|&d| d == 0.0 || d == 1.0 || d == -1.0));
        for i in 0..24 {
            let spikes: Vec<usize> = (0..15)
                .filter(|&k| tp.d_dagger[i * 15 + k] != 0.0)
                .map(|k| tp.week_of_row[i * 15 + k])
                .collect();
            if panel.ever_treated()[i] {
                assert_eq!(spikes, vec![12], "geo {i}");
                assert_eq!(tp.d_dagger[i * 15 + 11], 1.0);
            } else {
                assert!(spikes.is_empty(), "geo {i}");
            }
        }
        // The differenced week column is identically 1.
        let week_col = tp.x_dagger.ncols() - 1;
        assert!((0..tp.n_rows()).all(|r| tp.x_dagger[(r, week_col)] == 1.0));
    }

    #[test]
    fn dummy_transform_adds_unit_and_week_indicators() {
        let panel = small_sim_panel();
        let tp = transform(&panel, DmlVariant::Twfe).unwrap();
        let (p, q) = (4, 2);
        assert_eq!(tp.x_dagger.ncols(), p + q + 1 + 23 + 15);
        for (i, w) in [(0usize, 0usize), (5, 3), (23, 15)] {
            let r = i * 16 + w;
            for u in 1..24 {
                let expect = if i == u { 1.0 } else { 0.0 };
                assert_eq!(tp.x_dagger[(r, p + q + 1 + (u - 1))], expect);
            }
            for wk in 1..16 {
                let expect = if w == wk { 1.0 } else { 0.0 };
                assert_eq!(tp.x_dagger[(r, p + q + 1 + 23 + (wk - 1))], expect);
            }
            assert_eq!(tp.x_dagger[(r, p + q)], w as f64);
        }
        assert_eq!(tp.nuisance_cols.len(), tp.x_dagger.ncols());
    }

    #[test]
    fn mean_augmented_transform_carries_per_geo_means() {
        let cfg = SimConfig { n_units: 10, n_treated: 2, ..SimConfig::default() };
        let (panel, _) = generate(&cfg, &ScenarioSpec::default(), 5, 0).unwrap();
        let tp = transform(&panel, DmlVariant::Cre).unwrap();
        let (p, q, t) = (4usize, 2usize, 64usize);
        assert_eq!(tp.x_dagger.ncols(), p + q + 1 + q + 2);
        let mean_d_col = tp.x_dagger.ncols() - 1;
        for i in 0..10 {
            let expect = if panel.ever_treated()[i] { 12.0 / 64.0 } else { 0.0 };
            for w in 0..t {
                assert_eq!(tp.x_dagger[(i * t + w, mean_d_col)], expect);
            }
            // Mean of the first dynamic covariate is constant within geo.
            let m = (0..t).map(|w| panel.dynamic_covariates()[0][(i, w)]).sum::<f64>() / t as f64;
            assert_relative_eq!(tp.x_dagger[(i * t, p + q + 1)], m, max_relative = 1e-12);
        }
        let treated_geo = panel.treated_units()[0];
        assert_eq!(tp.x_dagger[(treated_geo * t, mean_d_col)], 0.1875);
        // The nuisance learners never see the mean-treatment column.
        assert!(!tp.nuisance_cols.contains(&mean_d_col));
        assert_eq!(tp.nuisance_cols.len(), tp.x_dagger.ncols() - 1);
    }

    #[test]
    fn folds_balance_both_strata() {
        let cfg = SimConfig::default();
        let (panel, _) = generate(&cfg, &ScenarioSpec::default(), 9, 0).unwrap();
        let spec = DmlSpec::default();
        let folds = make_folds(&panel, &spec, &mut stream_rng(9, 0, "folds")).unwrap();
        for k in 0..5 {
            let treated = (0..200)
                .filter(|&g| folds.fold_of_geo[g] == k && panel.ever_treated()[g])
                .count();
            let control = (0..200)
                .filter(|&g| folds.fold_of_geo[g] == k && !panel.ever_treated()[g])
                .count();
            assert_eq!(treated, 8, "fold {k}");
            assert_eq!(control, 32, "fold {k}");
        }

        // Determinism per stream.
        let again = make_folds(&panel, &spec, &mut stream_rng(9, 0, "folds")).unwrap();
        assert_eq!(folds.fold_of_geo, again.fold_of_geo);
        let other = make_folds(&panel, &spec, &mut stream_rng(9, 1, "folds")).unwrap();
        assert_ne!(folds.fold_of_geo, other.fold_of_geo);

        // Tiny strata: 2 treated, 2 control, 2 folds.
        let tiny_cfg = SimConfig { n_units: 4, n_treated: 2, t_pre: 4, t_post: 2, ..SimConfig::default() };
        let (tiny, _) = generate(&tiny_cfg, &ScenarioSpec::default(), 1, 0).unwrap();
        let spec2 = DmlSpec { n_folds: 2, ..DmlSpec::default() };
        let f = make_folds(&tiny, &spec2, &mut stream_rng(0, 0, "folds")).unwrap();
        for k in 0..2 {
            assert_eq!(
                (0..4).filter(|&g| f.fold_of_geo[g] == k && tiny.ever_treated()[g]).count(),
                1
            );
            assert_eq!(
                (0..4).filter(|&g| f.fold_of_geo[g] == k && !tiny.ever_treated()[g]).count(),
                1
            );
        }

        // Too-small stratum errors.
        assert!(make_folds(&tiny, &DmlSpec::default(), &mut stream_rng(0, 0, "folds")).is_err());
    }

    #[test]
    fn constant_outcome_learner_residualizes_around_fold_means() {
        let panel = small_sim_panel();
        let tp = transform(&panel, DmlVariant::Wg).unwrap();
        let spec = DmlSpec {
            // A huge ridge penalty forces predictions to the training mean.
            outcome_learner: LearnerSpec { ridge_lambda: 1e18, ..LearnerSpec::new(LearnerKind::Ridge) },
            propensity_learner: LearnerSpec::new(LearnerKind::Logistic),
            n_folds: 3,
            ..DmlSpec::default()
        };
        let folds = make_folds(&panel, &spec, &mut stream_rng(3, 0, "folds")).unwrap();
        let cf = crossfit_residuals(&tp, &folds, &spec, &mut stream_rng(3, 0, "fit")).unwrap();
        for k in 0..3 {
            let train_mean = {
                let rows: Vec<usize> = (0..tp.n_rows())
                    .filter(|&r| folds.fold_of_geo[tp.geo_of_row[r]] != k)
                    .collect();
                rows.iter().map(|&r| tp.y_dagger[r]).sum::<f64>() / rows.len() as f64
            };
            for r in (0..tp.n_rows()).filter(|&r| folds.fold_of_geo[tp.geo_of_row[r]] == k) {
                assert_relative_eq!(cf.eps_y[r], tp.y_dagger[r] - train_mean, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn propensity_predictions_respect_classifier_clipping() {
        let panel = small_sim_panel();
        let tp = transform(&panel, DmlVariant::Twfe).unwrap();
        let spec = DmlSpec {
            variant: DmlVariant::Twfe,
            outcome_learner: LearnerSpec::new(LearnerKind::Ridge),
            propensity_learner: LearnerSpec { n_trees: 30, ..LearnerSpec::new(LearnerKind::GbtClassifier) },
            n_folds: 3,
            ..DmlSpec::default()
        };
        let folds = make_folds(&panel, &spec, &mut stream_rng(4, 0, "folds")).unwrap();
        let cf = crossfit_residuals(&tp, &folds, &spec, &mut stream_rng(4, 0, "fit")).unwrap();
        for &p in &cf.p_hat {
            assert!((1e-6..=1.0 - 1e-6).contains(&p), "propensity {p}");
        }
    }

    #[test]
    fn treatment_residuals_center_near_zero_under_random_assignment() {
        // Assignment is independent of covariates, so pooled treatment
        // residuals should be near zero.
        let panel = linear_panel(30, 10, 10, 5, 0.0, false, 21);
        let spec = ridge_spec(DmlVariant::Wg);
        let tp = transform(&panel, DmlVariant::Wg).unwrap();
        let folds = make_folds(&panel, &spec, &mut stream_rng(21, 0, "folds")).unwrap();
        let cf = crossfit_residuals(&tp, &folds, &spec, &mut stream_rng(21, 0, "fit")).unwrap();
        let n = cf.eps_d.len() as f64;
        let mean = cf.eps_d.iter().sum::<f64>() / n;
        let sd = (cf.eps_d.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt() + 1e-9, "mean {mean}, sd {sd}");
    }

    #[test]
    fn treatment_residuals_are_uncorrelated_with_covariates() {
        let panel = linear_panel(40, 10, 16, 4, 3.0, false, 22);
        let spec = ridge_spec(DmlVariant::Wg);
        let tp = transform(&panel, DmlVariant::Wg).unwrap();
        let folds = make_folds(&panel, &spec, &mut stream_rng(22, 0, "folds")).unwrap();
        let cf = crossfit_residuals(&tp, &folds, &spec, &mut stream_rng(22, 0, "fit")).unwrap();
        let n = cf.eps_d.len();
        for c in 0..tp.x_dagger.ncols() {
            let xs: Vec<f64> = (0..n).map(|r| tp.x_dagger[(r, c)]).collect();
            let mx = xs.iter().sum::<f64>() / n as f64;
            let me = cf.eps_d.iter().sum::<f64>() / n as f64;
            let cov: f64 = (0..n).map(|r| (xs[r] - mx) * (cf.eps_d[r] - me)).sum();
            let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            let ve: f64 = cf.eps_d.iter().map(|e| (e - me) * (e - me)).sum();
            let corr = cov / (vx * ve).sqrt();
            assert!(corr.abs() < 0.05, "column {c} correlation {corr}");
        }
    }

    #[test]
    fn weight_formula_and_winsorization() {
        // Direct evaluations of the stabilized weight formula.
        let w = iptw_weights(&[0.5, 0.5, 0.2], &[1.0, 0.0, 1.0], 1.0).unwrap();
        assert_relative_eq!(w[0], 1.0);
        assert_relative_eq!(w[1], 1.0);
        assert_relative_eq!(w[2], 4.0);

        // Flat propensities make trimming a no-op.
        let w = iptw_weights(&[0.5; 6], &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], 0.8).unwrap();
        assert!(w.iter().all(|&x| x == 1.0));

        // The post-trim maximum equals the trim-quantile value exactly.
        let p: Vec<f64> = (1..=100).map(|k| k as f64 / 101.0).collect();
        let d: Vec<f64> = (0..100).map(|k| (k % 2) as f64).collect();
        let raw: Vec<f64> = d.iter().zip(&p).map(|(&d, &p)| stabilized_weight(d, p)).collect();
        let mut sorted = raw.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected_cap = quantile_type7(&sorted, 0.95);
        let trimmed = iptw_weights(&p, &d, 0.95).unwrap();
        let max = trimmed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, expected_cap);
        assert!(raw.iter().zip(&trimmed).any(|(r, t)| r > t), "something was trimmed");

        // Out-of-range propensities are rejected.
        assert!(iptw_weights(&[0.0], &[1.0], 0.95).is_err());
        assert!(iptw_weights(&[1.0], &[0.0], 0.95).is_err());
        assert!(iptw_weights(&[0.4], &[0.5], 0.95).is_err());
    }

    #[test]
    fn second_stage_closed_forms() {
        // Exact proportionality: theta = 3, zero residual variance.
        let eps_d = vec![1.0, -2.0, 0.5, 3.0];
        let eps_y: Vec<f64> = eps_d.iter().map(|e| 3.0 * e).collect();
        let w = vec![1.0, 2.0, 0.5, 1.5];
        let geos = vec![0, 0, 1, 1];
        let r = second_stage(EstimatorId::WgDml, &eps_y, &eps_d, &w, &geos).unwrap();
        assert_relative_eq!(r.att_hat, 3.0, epsilon = 1e-12);
        assert!(r.se < 1e-9);

        // Two singleton clusters: theta = 1, sandwich SE = 1.
        let r = second_stage(
            EstimatorId::WgDml,
            &[2.0, 0.0],
            &[1.0, -1.0],
            &[1.0, 1.0],
            &[0, 1],
        )
        .unwrap();
        assert_relative_eq!(r.att_hat, 1.0);
        assert_relative_eq!(r.se, 1.0);

        // Degenerate treatment residuals are an error.
        assert!(second_stage(EstimatorId::WgDml, &[1.0, 2.0], &[0.0, 0.0], &[1.0, 1.0], &[0, 1]).is_err());
    }

    #[test]
    fn second_stage_matches_an_independent_weighted_least_squares() {
        use rand::Rng;
        let mut rng = stream_rng(30, 0, "test/wls");
        for case in 0..5 {
            let n = 100;
            let eps_d: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let eps_y: Vec<f64> = eps_d
                .iter()
                .map(|&e| 2.0 * e + rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let w: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
            let geos: Vec<usize> = (0..n).map(|i| i % 10).collect();
            let r = second_stage(EstimatorId::FdDml, &eps_y, &eps_d, &w, &geos).unwrap();

            // Oracle: solve the 1x1 weighted normal equations directly,
            // then the cluster sandwich with map-based accumulation.
            let sxx: f64 = (0..n).map(|i| w[i] * eps_d[i] * eps_d[i]).sum();
            let sxy: f64 = (0..n).map(|i| w[i] * eps_d[i] * eps_y[i]).sum();
            let theta = sxy / sxx;
            let mut by_geo = std::collections::BTreeMap::<usize, f64>::new();
            for i in 0..n {
                *by_geo.entry(geos[i]).or_insert(0.0) += w[i] * eps_d[i] * (eps_y[i] - theta * eps_d[i]);
            }
            let g = by_geo.len() as f64;
            let meat: f64 = by_geo.values().map(|s| s * s).sum();
            let se = (g / (g - 1.0) * meat / (sxx * sxx)).sqrt();
            assert_relative_eq!(r.att_hat, theta, epsilon = 1e-8);
            assert_relative_eq!(r.se, se, epsilon = 1e-8);
            let _ = case;
        }
    }

    #[test]
    fn second_stage_is_scale_equivariant() {
        let eps_d = vec![1.0, -0.5, 2.0, 0.25];
        let eps_y = vec![0.7, 1.1, -0.4, 0.9];
        let w = vec![1.0, 0.5, 2.0, 1.0];
        let geos = vec![0, 1, 0, 1];
        let base = second_stage(EstimatorId::WgDml, &eps_y, &eps_d, &w, &geos).unwrap();
        let scaled_y: Vec<f64> = eps_y.iter().map(|v| v * 10.0).collect();
        let scaled = second_stage(EstimatorId::WgDml, &scaled_y, &eps_d, &w, &geos).unwrap();
        assert_relative_eq!(scaled.att_hat, 10.0 * base.att_hat, max_relative = 1e-12);
        assert_relative_eq!(scaled.se, 10.0 * base.se, max_relative = 1e-12);
    }

    #[test]
    fn linear_within_and_dummy_variants_agree_exactly_on_linear_panels() {
        // Exactly linear outcome with a common intercept, ridge learners
        // with a vanishing penalty: both pipelines residualize with the
        // same projection, so both recover the planted effect and hence
        // each other. (Geo-specific intercepts would break the dummy
        // variant here: a held-out geo's dummy column is identically zero
        // in training, so its intercept cannot be learned out-of-fold.
        // The penalty must not be pushed arbitrarily low: the dummy
        // design's week-index column is an exact combination of the week
        // dummies, and below 1e-7 or so the solve noise along that null
        // direction grows like machine-epsilon over lambda.)
        use rand::Rng;
        let (n, t_pre, t_post) = (20usize, 10usize, 4usize);
        let t = t_pre + t_post;
        let mut rng = stream_rng(33, 0, "test/linear-panel");
        let x = DMatrix::from_fn(n, t, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let ever: Vec<bool> = (0..n).map(|i| i < 6).collect();
        let outcome = DMatrix::from_fn(n, t, |i, w| {
            let d = if ever[i] && w >= t_pre { 1.0 } else { 0.0 };
            20.0 + 0.3 * w as f64 + 2.0 * x[(i, w)] + 3.0 * d
        });
        let active = DMatrix::from_fn(n, t, |i, w| if ever[i] && w >= t_pre { 1.0 } else { 0.0 });
        let panel =
            Panel::new(t_pre, t_post, outcome, active, ever, DMatrix::zeros(n, 0), vec![x]).unwrap();

        let mut spec = ridge_spec(DmlVariant::Wg);
        spec.outcome_learner.ridge_lambda = 1e-6;
        spec.propensity_learner.ridge_lambda = 1e-6;
        let wg = estimate(&panel, &spec, &mut stream_rng(33, 0, "est")).unwrap();
        spec.variant = DmlVariant::Twfe;
        let twfe = estimate(&panel, &spec, &mut stream_rng(33, 1, "est")).unwrap();
        assert_relative_eq!(wg.att_hat, 3.0, epsilon = 1e-7);
        assert_relative_eq!(twfe.att_hat, 3.0, epsilon = 1e-6);
        assert!((wg.att_hat - twfe.att_hat).abs() < 1e-6);
    }

    #[test]
    fn planted_effects_are_recovered_with_honest_coverage() {
        // Known-truth linear panels: the estimate should sit within two
        // analytic standard errors of the planted effect almost always.
        let mut hits = 0;
        let reps = 40;
        for rep in 0..reps {
            let panel = linear_panel(24, 8, 10, 4, 500.0, false, 1000 + rep);
            let spec = ridge_spec(DmlVariant::Wg);
            let r = estimate(&panel, &spec, &mut stream_rng(2000, rep, "est")).unwrap();
            if (r.att_hat - 500.0).abs() <= 2.0 * r.se.max(1e-9) + 1e-6 {
                hits += 1;
            }
        }
        assert!(hits >= reps * 9 / 10, "{hits}/{reps} within 2 SE");
    }

    #[test]
    fn estimate_is_deterministic_per_stream() {
        let panel = small_sim_panel();
        let spec = DmlSpec {
            n_folds: 3,
            outcome_learner: LearnerSpec::new(LearnerKind::Ridge),
            propensity_learner: LearnerSpec::new(LearnerKind::Logistic),
            ..DmlSpec::default()
        };
        let a = estimate(&panel, &spec, &mut stream_rng(50, 3, "est")).unwrap();
        let b = estimate(&panel, &spec, &mut stream_rng(50, 3, "est")).unwrap();
        assert_eq!(a.att_hat, b.att_hat);
        assert_eq!(a.se, b.se);
        assert!(a.att_hat.is_finite() && a.se.is_finite());
        assert!(a.diagnostics.contains_key("n_trimmed"));
        assert!(a.diagnostics.contains_key("n_clusters"));
    }

    #[test]
    fn all_variants_run_end_to_end_on_a_simulated_panel() {
        let panel = small_sim_panel();
        for variant in [DmlVariant::Wg, DmlVariant::Fd, DmlVariant::Twfe, DmlVariant::Cre] {
            let spec = DmlSpec { n_folds: 3, ..ridge_spec(variant) };
            let r = estimate(&panel, &spec, &mut stream_rng(60, 0, "est")).unwrap();
            assert!(r.att_hat.is_finite(), "{variant:?}");
            assert!(r.se.is_finite() && r.se >= 0.0, "{variant:?}");
            assert!(r.ci_low <= r.ci_high, "{variant:?}");
        }
    }

    #[test]
    fn bootstrap_percentile_interval_is_reported_and_deterministic() {
        let panel = linear_panel(16, 5, 8, 3, 100.0, false, 44);
        let spec = DmlSpec { n_folds: 3, bootstrap_reps: 15, ..ridge_spec(DmlVariant::Wg) };
        let a = estimate(&panel, &spec, &mut stream_rng(70, 0, "est")).unwrap();
        let lo = a.diagnostics["bootstrap_ci_low"];
        let hi = a.diagnostics["bootstrap_ci_high"];
        assert!(lo <= hi);
        assert_eq!(a.diagnostics["bootstrap_reps"], 15.0);
        let b = estimate(&panel, &spec, &mut stream_rng(70, 0, "est")).unwrap();
        assert_eq!(a.diagnostics["bootstrap_ci_low"], b.diagnostics["bootstrap_ci_low"]);
    }
}
