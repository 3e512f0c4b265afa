//! Nuisance learners behind one interface: gradient-boosted trees for
//! regression (squared loss) and classification (logistic loss), plus ridge
//! and penalized-logistic linear baselines.
//!
//! Hyper-parameters are fixed ex-ante and shared by every benchmark
//! scenario; there is no tuning loop. Classifier probabilities are clipped
//! away from 0 and 1 so downstream inverse-propensity weights stay finite.

mod linear;
mod tree;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use tree::{build_tree, index_features, Tree, TreeParams};

/// Probability clipping bound for classifiers.
pub const PROB_CLIP: f64 = 1e-6;

/// Which learner to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LearnerKind {
    #[serde(rename = "gbt-regressor")]
    GbtRegressor,
    #[serde(rename = "gbt-classifier")]
    GbtClassifier,
    #[serde(rename = "ridge")]
    Ridge,
    #[serde(rename = "logistic")]
    Logistic,
}

impl LearnerKind {
    pub fn is_classifier(self) -> bool {
        matches!(self, LearnerKind::GbtClassifier | LearnerKind::Logistic)
    }

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::GbtRegressor => "gbt-regressor",
            LearnerKind::GbtClassifier => "gbt-classifier",
            LearnerKind::Ridge => "ridge",
            LearnerKind::Logistic => "logistic",
        }
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gbt-regressor" => Ok(LearnerKind::GbtRegressor),
            "gbt-classifier" => Ok(LearnerKind::GbtClassifier),
            "ridge" => Ok(LearnerKind::Ridge),
            "logistic" => Ok(LearnerKind::Logistic),
            other => Err(Error::Parse(format!("unknown learner kind {other:?}"))),
        }
    }
}

/// Learner hyper-parameters. Tree fields are ignored by the linear kinds and
/// `ridge_lambda` by the tree kinds, so one flat spec describes any learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub subsample: f64,
    pub l2_leaf: f64,
    pub ridge_lambda: f64,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self {
            kind: LearnerKind::GbtRegressor,
            n_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
            subsample: 1.0,
            l2_leaf: 1.0,
            ridge_lambda: 1.0,
        }
    }
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.max_depth < 1 {
            return Err(Error::InvalidConfig("max_depth must be at least 1".into()));
        }
        if self.min_leaf < 1 {
            return Err(Error::InvalidConfig("min_leaf must be at least 1".into()));
        }
        if self.kind.is_tree() && self.n_trees < 1 {
            return Err(Error::InvalidConfig("n_trees must be at least 1".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "subsample must be in (0, 1], got {}",
                self.subsample
            )));
        }
        for (name, v) in [("l2_leaf", self.l2_leaf), ("ridge_lambda", self.ridge_lambda)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl LearnerKind {
    fn is_tree(self) -> bool {
        matches!(self, LearnerKind::GbtRegressor | LearnerKind::GbtClassifier)
    }
}

#[derive(Debug, Clone)]
enum ModelState {
    Boosted { base_score: f64, trees: Vec<Tree> },
    Linear { intercept: f64, coefficients: DVector<f64> },
    ConstantProb { p: f64 },
}

/// An immutable fitted learner; prediction is a pure function of this state.
#[derive(Debug, Clone)]
pub struct FittedModel {
    spec: LearnerSpec,
    n_features: usize,
    state: ModelState,
    /// Training loss after 0, 1, .., n trees (boosted kinds only).
    train_loss_curve: Vec<f64>,
}

impl FittedModel {
    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn is_classifier(&self) -> bool {
        self.spec.kind.is_classifier()
    }

    /// Training loss by boosting stage (mean squared error or mean log
    /// loss); empty for linear kinds.
    pub fn train_loss_curve(&self) -> &[f64] {
        &self.train_loss_curve
    }

    /// Predicts levels (regressors) or clipped probabilities (classifiers).
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::EstimatorInput(format!(
                "prediction input has {} features, model was trained on {}",
                x.ncols(),
                self.n_features
            )));
        }
        let raw: Vec<f64> = match &self.state {
            ModelState::Boosted { base_score, trees } => (0..x.nrows())
                .map(|r| base_score + trees.iter().map(|t| t.predict_row(x, r)).sum::<f64>())
                .collect(),
            ModelState::Linear { intercept, coefficients } => (0..x.nrows())
                .map(|r| {
                    intercept
                        + (0..self.n_features).map(|j| coefficients[j] * x[(r, j)]).sum::<f64>()
                })
                .collect(),
            ModelState::ConstantProb { p } => return Ok(vec![*p; x.nrows()]),
        };
        if self.is_classifier() {
            Ok(raw.into_iter().map(|e| clip_prob(sigmoid(e))).collect())
        } else {
            Ok(raw)
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// Fits a learner. The RNG stream is consumed only when `subsample < 1`,
/// and identical spec + data + stream always produce an identical model.
pub fn fit(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    rng: &mut ChaCha12Rng,
) -> Result<FittedModel> {
    spec.validate()?;
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::EstimatorInput(format!(
            "design has {n} rows but target has {} entries",
            y.len()
        )));
    }
    let min_rows = if spec.kind.is_tree() { 2 * spec.min_leaf } else { 2 };
    if n < min_rows {
        return Err(Error::EstimatorInput(format!(
            "need at least {min_rows} rows to fit a {} learner, got {n}",
            spec.kind.name()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::EstimatorInput("non-finite training values".into()));
    }
    if spec.kind.is_classifier() && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::EstimatorInput("classifier targets must be 0 or 1".into()));
    }

    // Single-class classification degenerates to a constant probability.
    if spec.kind.is_classifier() {
        let mean = y.iter().sum::<f64>() / n as f64;
        if mean == 0.0 || mean == 1.0 {
            return Ok(FittedModel {
                spec: spec.clone(),
                n_features: x.ncols(),
                state: ModelState::ConstantProb { p: clip_prob(mean) },
                train_loss_curve: Vec::new(),
            });
        }
    }

    let (state, curve) = match spec.kind {
        LearnerKind::Ridge => {
            let (intercept, coefficients) = linear::fit_ridge(x, y, spec.ridge_lambda)?;
            (ModelState::Linear { intercept, coefficients }, Vec::new())
        }
        LearnerKind::Logistic => {
            let (intercept, coefficients) = linear::fit_logistic(x, y, spec.ridge_lambda)?;
            (ModelState::Linear { intercept, coefficients }, Vec::new())
        }
        LearnerKind::GbtRegressor | LearnerKind::GbtClassifier => {
            let (base, trees, curve) = fit_boosted(spec, x, y, rng);
            (ModelState::Boosted { base_score: base, trees }, curve)
        }
    };
    Ok(FittedModel {
        spec: spec.clone(),
        n_features: x.ncols(),
        state,
        train_loss_curve: curve,
    })
}

fn fit_boosted(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    rng: &mut ChaCha12Rng,
) -> (f64, Vec<Tree>, Vec<f64>) {
    let n = x.nrows();
    let classify = spec.kind.is_classifier();
    let base_score = if classify {
        let p = clip_prob(y.iter().sum::<f64>() / n as f64);
        (p / (1.0 - p)).ln()
    } else {
        y.iter().sum::<f64>() / n as f64
    };
    let mut raw = vec![base_score; n];

    let loss = |raw: &[f64]| -> f64 {
        if classify {
            raw.iter()
                .zip(y)
                .map(|(&f, &yv)| {
                    let p = clip_prob(sigmoid(f));
                    -(yv * p.ln() + (1.0 - yv) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n as f64
        } else {
            raw.iter().zip(y).map(|(&f, &yv)| (f - yv) * (f - yv)).sum::<f64>() / n as f64
        }
    };

    let orders = index_features(x);
    let params = TreeParams {
        max_depth: spec.max_depth,
        min_leaf: spec.min_leaf,
        l2_leaf: spec.l2_leaf,
        learning_rate: spec.learning_rate,
    };
    let mut curve = Vec::with_capacity(spec.n_trees + 1);
    curve.push(loss(&raw));
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut node_of_row = vec![0u32; n];
    let mut train_pred = vec![0.0; n];
    let mut trees = Vec::with_capacity(spec.n_trees);

    for _ in 0..spec.n_trees {
        for r in 0..n {
            if classify {
                let p = sigmoid(raw[r]);
                grad[r] = p - y[r];
                hess[r] = p * (1.0 - p);
            } else {
                grad[r] = raw[r] - y[r];
                hess[r] = 1.0;
            }
        }
        if spec.subsample < 1.0 {
            let keep = ((spec.subsample * n as f64).floor() as usize).max(1);
            node_of_row.iter_mut().for_each(|v| *v = u32::MAX);
            for idx in rand::seq::index::sample(rng, n, keep) {
                node_of_row[idx] = 0;
            }
        } else {
            node_of_row.iter_mut().for_each(|v| *v = 0);
        }
        train_pred.iter_mut().for_each(|v| *v = f64::NAN);
        let tree = build_tree(x, &orders, &grad, &hess, &mut node_of_row, &mut train_pred, &params);
        for (r, f) in raw.iter_mut().enumerate() {
            // Rows the subsample left out were never routed; traverse them.
            let p = train_pred[r];
            *f += if p.is_nan() { tree.predict_row(x, r) } else { p };
        }
        trees.push(tree);
        curve.push(loss(&raw));
    }
    (base_score, trees, curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn rsq(pred: &[f64], y: &[f64]) -> f64 {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let ss_res: f64 = pred.iter().zip(y).map(|(p, v)| (v - p) * (v - p)).sum();
        let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        1.0 - ss_res / ss_tot
    }

    #[test]
    fn spec_defaults_and_validation() {
        let spec = LearnerSpec::default();
        assert_eq!(spec.kind, LearnerKind::GbtRegressor);
        assert_eq!(spec.n_trees, 200);
        assert_eq!(spec.max_depth, 3);
        assert_eq!(spec.learning_rate, 0.1);
        assert_eq!(spec.min_leaf, 5);
        assert_eq!(spec.subsample, 1.0);
        assert_eq!(spec.l2_leaf, 1.0);
        assert_eq!(spec.ridge_lambda, 1.0);
        spec.validate().unwrap();

        assert!(LearnerSpec { learning_rate: 0.0, ..spec.clone() }.validate().is_err());
        assert!(LearnerSpec { learning_rate: 1.5, ..spec.clone() }.validate().is_err());
        assert!(LearnerSpec { max_depth: 0, ..spec.clone() }.validate().is_err());
        assert!(LearnerSpec { subsample: 0.0, ..spec.clone() }.validate().is_err());
        assert!(LearnerSpec { l2_leaf: -1.0, ..spec }.validate().is_err());
    }

    #[test]
    fn constant_target_predicts_the_constant_for_every_kind() {
        let x = DMatrix::from_fn(20, 2, |r, c| (r + c) as f64);
        let y = vec![7.25; 20];
        for kind in [LearnerKind::GbtRegressor, LearnerKind::Ridge] {
            let spec = LearnerSpec::new(kind);
            let model = fit(&spec, &x, &y, &mut stream_rng(0, 0, "test")).unwrap();
            let pred = model.predict(&x).unwrap();
            assert!(pred.iter().all(|p| (p - 7.25).abs() < 1e-9), "{kind:?}");
        }
    }

    #[test]
    fn boosted_trees_capture_interactions_linear_models_cannot() {
        let mut rng = stream_rng(1, 0, "test/xor");
        let n = 2000;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..n)
            .map(|r| if (x[(r, 0)] > 0.0) != (x[(r, 1)] > 0.0) { 1.0 } else { 0.0 })
            .collect();

        let gbt = fit(&LearnerSpec::default(), &x, &y, &mut stream_rng(1, 1, "test")).unwrap();
        let r2_gbt = rsq(&gbt.predict(&x).unwrap(), &y);
        assert!(r2_gbt > 0.9, "boosted R^2 {r2_gbt}");

        let lin = fit(&LearnerSpec::new(LearnerKind::Ridge), &x, &y, &mut stream_rng(1, 2, "test")).unwrap();
        let r2_lin = rsq(&lin.predict(&x).unwrap(), &y);
        assert!(r2_lin < 0.1, "linear R^2 {r2_lin}");
    }

    #[test]
    fn classifier_probabilities_stay_strictly_inside_unit_interval() {
        let x = DMatrix::from_fn(100, 1, |r, _| r as f64);
        let y: Vec<f64> = (0..100).map(|r| if r >= 50 { 1.0 } else { 0.0 }).collect();
        let spec = LearnerSpec::new(LearnerKind::GbtClassifier);
        let model = fit(&spec, &x, &y, &mut stream_rng(0, 0, "test")).unwrap();
        let probs = model.predict(&x).unwrap();
        for (r, p) in probs.iter().enumerate() {
            assert!((PROB_CLIP..=1.0 - PROB_CLIP).contains(p), "row {r}: {p}");
            assert_eq!(*p > 0.5, y[r] == 1.0, "row {r} misclassified at {p}");
        }
    }

    #[test]
    fn single_class_targets_yield_a_constant_clipped_probability() {
        let x = DMatrix::from_fn(30, 1, |r, _| r as f64);
        for kind in [LearnerKind::GbtClassifier, LearnerKind::Logistic] {
            let model = fit(&LearnerSpec::new(kind), &x, &vec![1.0; 30], &mut stream_rng(0, 0, "t")).unwrap();
            let probs = model.predict(&x).unwrap();
            assert!(probs.iter().all(|&p| p == 1.0 - PROB_CLIP), "{kind:?}");
            let model = fit(&LearnerSpec::new(kind), &x, &vec![0.0; 30], &mut stream_rng(0, 0, "t")).unwrap();
            let probs = model.predict(&x).unwrap();
            assert!(probs.iter().all(|&p| p == PROB_CLIP), "{kind:?}");
        }
    }

    #[test]
    fn training_loss_never_increases_with_more_trees() {
        let mut rng = stream_rng(4, 0, "test/mono");
        let n = 400;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let y_reg: Vec<f64> = (0..n)
            .map(|r| x[(r, 0)] * x[(r, 1)] + 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let model = fit(&LearnerSpec::default(), &x, &y_reg, &mut stream_rng(4, 1, "t")).unwrap();
        let curve = model.train_loss_curve();
        assert_eq!(curve.len(), 201);
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "squared loss rose: {} -> {}", w[0], w[1]);
        }

        let y_cls: Vec<f64> = (0..n).map(|r| if x[(r, 0)] + x[(r, 1)] > 0.0 { 1.0 } else { 0.0 }).collect();
        let model = fit(&LearnerSpec::new(LearnerKind::GbtClassifier), &x, &y_cls, &mut stream_rng(4, 2, "t")).unwrap();
        for w in model.train_loss_curve().windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "log loss rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn featureless_classifier_calibrates_to_the_event_rate() {
        let mut rng = stream_rng(6, 0, "test/calib");
        let n = 10_000;
        let x = DMatrix::zeros(n, 0);
        let y: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect();
        for kind in [LearnerKind::GbtClassifier, LearnerKind::Logistic] {
            let model = fit(&LearnerSpec::new(kind), &x, &y, &mut stream_rng(6, 1, "t")).unwrap();
            let p = model.predict(&x).unwrap()[0];
            assert!((p - 0.3).abs() < 0.02, "{kind:?} calibrated to {p}");
        }
    }

    #[test]
    fn boosted_regressor_approaches_ridge_on_noiseless_linear_data() {
        let mut rng = stream_rng(8, 0, "test/linear");
        let n = 2000;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..n).map(|r| 1.0 + 2.0 * x[(r, 0)] - x[(r, 1)]).collect();

        let ridge = fit(&LearnerSpec::new(LearnerKind::Ridge), &x, &y, &mut stream_rng(8, 1, "t")).unwrap();
        let gbt_spec = LearnerSpec { n_trees: 400, ..LearnerSpec::default() };
        let gbt = fit(&gbt_spec, &x, &y, &mut stream_rng(8, 2, "t")).unwrap();

        let pr = ridge.predict(&x).unwrap();
        let pg = gbt.predict(&x).unwrap();
        let rmse = (pr.iter().zip(&pg).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64).sqrt();
        let sd_y = {
            let m = y.iter().sum::<f64>() / n as f64;
            (y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt()
        };
        assert!(rmse < 0.05 * sd_y, "rmse {rmse} vs 5% of sd {sd_y}");
    }

    #[test]
    fn overfitting_points_in_the_right_direction() {
        let mut rng = stream_rng(9, 0, "test/overfit");
        let n = 600;
        let draw = |rng: &mut ChaCha12Rng| DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let x_train = draw(&mut rng);
        let x_test = draw(&mut rng);
        let y_train: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let y_test: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let model = fit(&LearnerSpec::default(), &x_train, &y_train, &mut stream_rng(9, 1, "t")).unwrap();
        let r2_train = rsq(&model.predict(&x_train).unwrap(), &y_train);
        let r2_test = rsq(&model.predict(&x_test).unwrap(), &y_test);
        assert!(r2_train >= r2_test, "train {r2_train} < test {r2_test}");
        assert!(r2_train > 0.0);
    }

    #[test]
    fn identical_stream_reproduces_identical_models_under_subsampling() {
        let mut rng = stream_rng(10, 0, "test/subsample");
        let n = 500;
        let x = DMatrix::from_fn(n, 4, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let y: Vec<f64> = (0..n).map(|r| x[(r, 0)] - x[(r, 2)] * x[(r, 3)]).collect();
        let spec = LearnerSpec { subsample: 0.5, n_trees: 50, ..LearnerSpec::default() };
        let m1 = fit(&spec, &x, &y, &mut stream_rng(10, 1, "est")).unwrap();
        let m2 = fit(&spec, &x, &y, &mut stream_rng(10, 1, "est")).unwrap();
        assert_eq!(m1.predict(&x).unwrap(), m2.predict(&x).unwrap());
        let m3 = fit(&spec, &x, &y, &mut stream_rng(10, 2, "est")).unwrap();
        assert_ne!(m1.predict(&x).unwrap(), m3.predict(&x).unwrap());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let x = DMatrix::from_fn(20, 1, |r, _| r as f64);
        let y: Vec<f64> = (0..20).map(|r| r as f64).collect();
        let spec = LearnerSpec::default();

        let mut bad_x = x.clone();
        bad_x[(3, 0)] = f64::NAN;
        assert!(fit(&spec, &bad_x, &y, &mut stream_rng(0, 0, "t")).is_err());

        let mut bad_y = y.clone();
        bad_y[0] = f64::INFINITY;
        assert!(fit(&spec, &x, &bad_y, &mut stream_rng(0, 0, "t")).is_err());

        // Too few rows for 2 * min_leaf.
        let tiny = DMatrix::from_fn(6, 1, |r, _| r as f64);
        assert!(fit(&spec, &tiny, &y[..6], &mut stream_rng(0, 0, "t")).is_err());

        // Non-binary classifier target.
        let spec_c = LearnerSpec::new(LearnerKind::GbtClassifier);
        assert!(fit(&spec_c, &x, &y, &mut stream_rng(0, 0, "t")).is_err());

        // Feature-count mismatch at prediction.
        let model = fit(&spec, &x, &y, &mut stream_rng(0, 0, "t")).unwrap();
        let wide = DMatrix::zeros(4, 2);
        assert!(model.predict(&wide).is_err());
    }
}
