//! Synthetic geo-week panel generator.
//!
//! The base data-generating process draws per-unit latents (level, trend,
//! seasonality), builds a log-scale baseline, applies multiplicative
//! lognormal noise, assigns treatment to a random subset of units, overlays
//! a lagged double-sigmoid lift curve on treated post-period weeks, and
//! derives static and dynamic covariates. Five stress scenarios perturb one
//! piece each:
//!
//! * `S1` adds a per-unit quadratic term to every log-baseline trend;
//! * `S2` replaces the common lift curve with per-treated-unit curves of
//!   random onset, duration, and steepness;
//! * `S3` multiplies treated post-period untreated outcomes by a common
//!   shock — a confound that leaves the true lift unchanged;
//! * `S4` replaces the linear trend with a per-unit sigmoid trend;
//! * `S5` adds a post-period drift to control units only, breaking parallel
//!   trends.
//!
//! All randomness flows through named per-replication streams, so any
//! scenario's untouched mechanisms reproduce the base process bit for bit.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{GroundTruth, Panel};
use crate::rng::stream_rng;

/// Generator configuration. Defaults define the canonical benchmark panel:
/// 200 units (40 treated) observed for 52 pre-launch and 12 campaign weeks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Number of geo units.
    pub n_units: usize,
    /// Number of ever-treated units.
    pub n_treated: usize,
    /// Pre-period length in weeks; treatment starts at this week index.
    pub t_pre: usize,
    /// Post-period (campaign) length in weeks.
    pub t_post: usize,
    /// Expected annual outcome growth ratio; unit log-trends center on its log.
    pub mu_growth: f64,
    /// Peak multiplicative lift of the impact curve.
    pub tau_max: f64,
    /// Seasonal amplitude (mean of the per-unit seasonality coefficient).
    pub a_season: f64,
    /// Standard deviation of the multiplicative (log-scale) outcome noise.
    pub sigma_eps: f64,
    /// Standard deviation of the per-unit sigmoid-trend coefficient (S4).
    pub sigma_eta: f64,
    /// Seasonality period in weeks.
    pub t_season: f64,
    /// Mean log outcome level.
    pub mu_alpha: f64,
    /// Standard deviation of log outcome levels across units.
    pub sigma_alpha: f64,
    /// Number of time-invariant covariates.
    pub n_static_cov: usize,
    /// Number of time-varying covariates.
    pub n_dynamic_cov: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_units: 200,
            n_treated: 40,
            t_pre: 52,
            t_post: 12,
            mu_growth: 1.20,
            tau_max: 0.23,
            a_season: 0.23,
            sigma_eps: 0.10,
            sigma_eta: 0.23,
            t_season: 52.0,
            mu_alpha: 30000f64.ln(),
            sigma_alpha: 0.5,
            n_static_cov: 4,
            n_dynamic_cov: 2,
        }
    }
}

impl SimConfig {
    /// Checks parameter ranges.
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::InvalidConfig("n_units must be at least 1".into()));
        }
        if self.n_treated >= self.n_units {
            return Err(Error::InvalidConfig(format!(
                "n_treated ({}) must be smaller than n_units ({})",
                self.n_treated, self.n_units
            )));
        }
        if self.t_pre < 2 {
            return Err(Error::InvalidConfig("t_pre must be at least 2".into()));
        }
        if self.t_post < 1 {
            return Err(Error::InvalidConfig("t_post must be at least 1".into()));
        }
        if !(self.tau_max >= 0.0) {
            return Err(Error::InvalidConfig("tau_max must be nonnegative".into()));
        }
        for (name, v) in [
            ("sigma_eps", self.sigma_eps),
            ("sigma_eta", self.sigma_eta),
            ("sigma_alpha", self.sigma_alpha),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be a finite nonnegative sd, got {v}")));
            }
        }
        if !(self.mu_growth > 0.0) {
            return Err(Error::InvalidConfig("mu_growth must be positive".into()));
        }
        if !(self.t_season > 0.0) {
            return Err(Error::InvalidConfig("t_season must be positive".into()));
        }
        for (name, v) in [("a_season", self.a_season), ("mu_alpha", self.mu_alpha)] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Weeks in the panel.
    pub fn n_weeks(&self) -> usize {
        self.t_pre + self.t_post
    }
}

/// Scenario selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    #[serde(rename = "BASE", alias = "base", alias = "Base")]
    Base,
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 6] = [
        ScenarioId::Base,
        ScenarioId::S1,
        ScenarioId::S2,
        ScenarioId::S3,
        ScenarioId::S4,
        ScenarioId::S5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::Base => "BASE",
            ScenarioId::S1 => "S1",
            ScenarioId::S2 => "S2",
            ScenarioId::S3 => "S3",
            ScenarioId::S4 => "S4",
            ScenarioId::S5 => "S5",
        }
    }
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.to_ascii_uppercase();
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.name() == upper)
            .ok_or_else(|| Error::Parse(format!("unknown scenario {s:?}; expected BASE or S1..S5")))
    }
}

/// Scenario selector plus every scenario-specific magnitude.
///
/// All magnitudes are always present (with defaults) so one flat config file
/// can describe any scenario; only the fields of the selected scenario are
/// consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    /// Mean of the per-unit quadratic trend coefficient (S1); negative, so
    /// trends bend downward on average.
    pub s1_beta2_mean: f64,
    /// Sd of the quadratic trend coefficient (S1).
    pub s1_beta2_sd: f64,
    /// Uniform range of per-unit lift onset delays, in weeks (S2).
    pub s2_onset_range: [f64; 2],
    /// Uniform range of per-unit lift durations, in weeks (S2).
    pub s2_duration_range: [f64; 2],
    /// Uniform range of per-unit lift ramp scales, in weeks (S2).
    pub s2_scale_range: [f64; 2],
    /// Mean of the common treated post-period shock (S3).
    pub s3_shock_mean: f64,
    /// Sd of the shock (S3).
    pub s3_shock_sd: f64,
    /// Mean of the per-unit sigmoid-trend coefficient (S4).
    pub s4_eta_mean: f64,
    /// Per-week log drift added to control units post-launch (S5); positive.
    pub s5_alpha_drift: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            id: ScenarioId::Base,
            s1_beta2_mean: -0.10,
            s1_beta2_sd: 0.30,
            s2_onset_range: [0.0, 0.3],
            s2_duration_range: [4.0, 5.0],
            s2_scale_range: [0.5, 0.8],
            s3_shock_mean: 0.10,
            s3_shock_sd: 0.02,
            s4_eta_mean: 1.0,
            s5_alpha_drift: 0.035,
        }
    }
}

impl ScenarioSpec {
    /// A spec with defaults for the given scenario.
    pub fn new(id: ScenarioId) -> Self {
        Self { id, ..Self::default() }
    }

    /// Checks parameter ranges (all fields, independent of the selected id).
    pub fn validate(&self) -> Result<()> {
        if !(self.s1_beta2_mean < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "s1_beta2_mean must be negative, got {}",
                self.s1_beta2_mean
            )));
        }
        for (name, v) in [("s1_beta2_sd", self.s1_beta2_sd), ("s3_shock_sd", self.s3_shock_sd)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be a finite nonnegative sd, got {v}")));
            }
        }
        for (name, [lo, hi]) in [
            ("s2_onset_range", self.s2_onset_range),
            ("s2_duration_range", self.s2_duration_range),
            ("s2_scale_range", self.s2_scale_range),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a nonempty interval, got [{lo}, {hi}]"
                )));
            }
        }
        if !(self.s2_scale_range[0] > 0.0) {
            return Err(Error::InvalidConfig("s2_scale_range must be strictly positive".into()));
        }
        if !(self.s2_onset_range[0] >= 0.0) || !(self.s2_duration_range[0] >= 0.0) {
            return Err(Error::InvalidConfig("s2 onset and duration ranges must be nonnegative".into()));
        }
        if !(self.s5_alpha_drift > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "s5_alpha_drift must be positive, got {}",
                self.s5_alpha_drift
            )));
        }
        for (name, v) in [("s3_shock_mean", self.s3_shock_mean), ("s4_eta_mean", self.s4_eta_mean)] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-unit latent draws. The base fields are always populated; the
/// scenario-specific fields are empty unless the scenario uses them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnitLatents {
    /// Log outcome level per unit.
    pub alpha: Vec<f64>,
    /// Linear log-trend coefficient per unit.
    pub beta: Vec<f64>,
    /// Seasonality coefficient per unit.
    pub gamma: Vec<f64>,
    /// Quadratic log-trend coefficient per unit (S1).
    pub beta2: Vec<f64>,
    /// Sigmoid-trend coefficient per unit (S4).
    pub eta: Vec<f64>,
    /// Lift onset delay in weeks per unit (S2).
    pub impact_onset: Vec<f64>,
    /// Lift duration in weeks per unit (S2).
    pub impact_duration: Vec<f64>,
    /// Lift ramp scale in weeks per unit (S2).
    pub impact_scale: Vec<f64>,
}

fn normal(mean: f64, sd: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sd)
        .map_err(|e| Error::InvalidConfig(format!("bad normal parameters ({mean}, {sd}): {e}")))
}

fn uniform(lo: f64, hi: f64) -> Result<Uniform<f64>> {
    Uniform::new_inclusive(lo, hi)
        .map_err(|e| Error::InvalidConfig(format!("bad uniform range [{lo}, {hi}]: {e}")))
}

fn draw_vec<D: Distribution<f64>>(dist: &D, n: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Draws every latent the configured scenario needs, one named stream per
/// mechanism, so scenario-off branches of the same replication share base
/// latents bit for bit.
pub fn draw_unit_latents(
    cfg: &SimConfig,
    spec: &ScenarioSpec,
    master_seed: u64,
    replication: u64,
) -> Result<UnitLatents> {
    let n = cfg.n_units;
    let log_growth = cfg.mu_growth.ln();
    let mut latents = UnitLatents {
        alpha: draw_vec(
            &normal(cfg.mu_alpha, cfg.sigma_alpha)?,
            n,
            &mut stream_rng(master_seed, replication, "latents/alpha"),
        ),
        beta: draw_vec(
            &normal(log_growth, 0.25 * log_growth.abs())?,
            n,
            &mut stream_rng(master_seed, replication, "latents/beta"),
        ),
        gamma: draw_vec(
            &normal(cfg.a_season, cfg.a_season.abs() / 4.0)?,
            n,
            &mut stream_rng(master_seed, replication, "latents/gamma"),
        ),
        ..UnitLatents::default()
    };
    match spec.id {
        ScenarioId::S1 => {
            latents.beta2 = draw_vec(
                &normal(spec.s1_beta2_mean, spec.s1_beta2_sd)?,
                n,
                &mut stream_rng(master_seed, replication, "s1/beta2"),
            );
        }
        ScenarioId::S2 => {
            let onset = uniform(spec.s2_onset_range[0], spec.s2_onset_range[1])?;
            let duration = uniform(spec.s2_duration_range[0], spec.s2_duration_range[1])?;
            let scale = uniform(spec.s2_scale_range[0], spec.s2_scale_range[1])?;
            let mut rng = stream_rng(master_seed, replication, "s2/curves");
            latents.impact_onset = Vec::with_capacity(n);
            latents.impact_duration = Vec::with_capacity(n);
            latents.impact_scale = Vec::with_capacity(n);
            for _ in 0..n {
                latents.impact_onset.push(onset.sample(&mut rng));
                latents.impact_duration.push(duration.sample(&mut rng));
                latents.impact_scale.push(scale.sample(&mut rng));
            }
        }
        ScenarioId::S4 => {
            latents.eta = draw_vec(
                &normal(spec.s4_eta_mean, cfg.sigma_eta)?,
                n,
                &mut stream_rng(master_seed, replication, "s4/eta"),
            );
        }
        ScenarioId::Base | ScenarioId::S3 | ScenarioId::S5 => {}
    }
    Ok(latents)
}

/// Builds the base log-baseline grid:
/// `alpha_i + beta_i * (t / t_pre) + gamma_i * sin(2 pi t / t_season)`.
pub fn gen_baseline(cfg: &SimConfig, latents: &UnitLatents) -> DMatrix<f64> {
    let t_pre = cfg.t_pre as f64;
    DMatrix::from_fn(cfg.n_units, cfg.n_weeks(), |i, t| {
        let tt = t as f64;
        latents.alpha[i]
            + latents.beta[i] * (tt / t_pre)
            + latents.gamma[i] * (2.0 * std::f64::consts::PI * tt / cfg.t_season).sin()
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The lagged-impact curve family: ramp up `onset` weeks after launch, stay
/// near the peak for `duration` weeks, ramp with steepness `scale`.
/// `s` is weeks since launch.
pub fn lagged_impact_value(s: f64, onset: f64, duration: f64, scale: f64, tau_max: f64) -> f64 {
    tau_max * (sigmoid((s - onset) / scale) - sigmoid((s - onset - duration) / scale))
}

/// The base multiplicative impact curve evaluated at week index `t`:
/// onset at launch, duration of the whole post-period, ramp scale 3 weeks.
/// The caller masks by treatment status and period.
pub fn impact_curve(t: usize, cfg: &SimConfig) -> f64 {
    let s = t as f64 - cfg.t_pre as f64;
    lagged_impact_value(s, 0.0, cfg.t_post as f64, 3.0, cfg.tau_max)
}

/// Exponentiates `log_base` plus lognormal noise of sd `sigma_eps`.
/// Draw order is unit-major, week-minor.
pub fn apply_noise(log_base: &DMatrix<f64>, sigma_eps: f64, rng: &mut ChaCha12Rng) -> Result<DMatrix<f64>> {
    let dist = normal(0.0, sigma_eps)?;
    let (n, t) = log_base.shape();
    let mut out = DMatrix::zeros(n, t);
    for i in 0..n {
        for w in 0..t {
            out[(i, w)] = (log_base[(i, w)] + dist.sample(rng)).exp();
        }
    }
    Ok(out)
}

/// Draws `n_treated` ever-treated units uniformly without replacement and
/// expands the active-treatment grid (on from week `t_pre`).
pub fn assign_treatment(cfg: &SimConfig, rng: &mut ChaCha12Rng) -> (Vec<bool>, DMatrix<f64>) {
    let mut ever = vec![false; cfg.n_units];
    for idx in rand::seq::index::sample(rng, cfg.n_units, cfg.n_treated) {
        ever[idx] = true;
    }
    let active = DMatrix::from_fn(cfg.n_units, cfg.n_weeks(), |i, t| {
        if ever[i] && t >= cfg.t_pre {
            1.0
        } else {
            0.0
        }
    });
    (ever, active)
}

/// The orthogonal pieces a scenario may perturb. The observed untreated
/// outcome is `exp(log_baseline + noise) * confound_scale`, and the observed
/// outcome further multiplies by `(1 + tau)`; the ground-truth grids use the
/// unconfounded `exp(log_baseline + noise)`.
#[derive(Debug, Clone)]
pub struct DgpComponents {
    pub log_baseline: DMatrix<f64>,
    /// Multiplicative lift per cell, already masked to treated post cells.
    pub tau: DMatrix<f64>,
    /// Multiplicative confound on the untreated outcome (1 everywhere in the
    /// base process).
    pub confound_scale: DMatrix<f64>,
}

/// Applies one scenario's perturbation in place.
pub fn apply_scenario(
    components: &mut DgpComponents,
    cfg: &SimConfig,
    spec: &ScenarioSpec,
    latents: &UnitLatents,
    ever_treated: &[bool],
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    let n = cfg.n_units;
    let weeks = cfg.n_weeks();
    let t_pre = cfg.t_pre as f64;
    match spec.id {
        ScenarioId::Base => {
            return Err(Error::InvalidConfig(
                "apply_scenario requires a non-base scenario".into(),
            ))
        }
        ScenarioId::S1 => {
            for i in 0..n {
                for t in 0..weeks {
                    let frac = t as f64 / t_pre;
                    components.log_baseline[(i, t)] += latents.beta2[i] * frac * frac;
                }
            }
        }
        ScenarioId::S2 => {
            for i in 0..n {
                if !ever_treated[i] {
                    continue;
                }
                for t in cfg.t_pre..weeks {
                    let s = t as f64 - t_pre;
                    components.tau[(i, t)] = lagged_impact_value(
                        s,
                        latents.impact_onset[i],
                        latents.impact_duration[i],
                        latents.impact_scale[i],
                        cfg.tau_max,
                    );
                }
            }
        }
        ScenarioId::S3 => {
            let shock = normal(spec.s3_shock_mean, spec.s3_shock_sd)?.sample(rng);
            for i in 0..n {
                if !ever_treated[i] {
                    continue;
                }
                for t in cfg.t_pre..weeks {
                    components.confound_scale[(i, t)] = 1.0 + shock;
                }
            }
        }
        ScenarioId::S4 => {
            for i in 0..n {
                for t in 0..weeks {
                    let frac = t as f64 / t_pre;
                    components.log_baseline[(i, t)] +=
                        latents.eta[i] * sigmoid(frac - 0.5) - latents.beta[i] * frac;
                }
            }
        }
        ScenarioId::S5 => {
            for i in 0..n {
                if ever_treated[i] {
                    continue;
                }
                for t in cfg.t_pre..weeks {
                    components.log_baseline[(i, t)] += spec.s5_alpha_drift * (t as f64 - t_pre);
                }
            }
        }
    }
    Ok(())
}

/// Derives static and dynamic covariates.
///
/// Static covariate 0 is a noisy proxy of the unit's log level, covariate 1
/// a noisy proxy of its trend, and the rest independent standard normals.
/// Dynamic covariate 0 is a "search volume" index predictive of next week's
/// untreated outcome; the rest are independent standard normals.
/// `log_y0` is the log of the untreated outcome grid (noise and any
/// confound included).
pub fn gen_covariates(
    cfg: &SimConfig,
    latents: &UnitLatents,
    log_y0: &DMatrix<f64>,
    rng: &mut ChaCha12Rng,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let n = cfg.n_units;
    let weeks = cfg.n_weeks();
    let mut statics = DMatrix::zeros(n, cfg.n_static_cov);
    for p in 0..cfg.n_static_cov {
        for i in 0..n {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            statics[(i, p)] = match p {
                0 => latents.alpha[i] + 0.32 * z,
                1 => latents.beta[i] + 0.015 * z,
                _ => z,
            };
        }
    }

    let grand_mean = log_y0.iter().sum::<f64>() / (n * weeks) as f64;
    let mut dynamics = Vec::with_capacity(cfg.n_dynamic_cov);
    for q in 0..cfg.n_dynamic_cov {
        let mut grid = DMatrix::zeros(n, weeks);
        for i in 0..n {
            for t in 0..weeks {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                grid[(i, t)] = if q == 0 {
                    let next = (t + 1).min(weeks - 1);
                    (0.8 * (log_y0[(i, next)] - grand_mean) + 0.15 * z).exp()
                } else {
                    z
                };
            }
        }
        dynamics.push(grid);
    }
    (statics, dynamics)
}

/// Generates one full panel plus ground truth for `(master_seed,
/// replication)` under the given scenario.
pub fn generate(
    cfg: &SimConfig,
    spec: &ScenarioSpec,
    master_seed: u64,
    replication: u64,
) -> Result<(Panel, GroundTruth)> {
    cfg.validate()?;
    spec.validate()?;

    let latents = draw_unit_latents(cfg, spec, master_seed, replication)?;
    let (ever_treated, treat_active) =
        assign_treatment(cfg, &mut stream_rng(master_seed, replication, "assign"));

    let n = cfg.n_units;
    let weeks = cfg.n_weeks();
    let mut components = DgpComponents {
        log_baseline: gen_baseline(cfg, &latents),
        tau: DMatrix::from_fn(n, weeks, |i, t| {
            if ever_treated[i] && t >= cfg.t_pre {
                impact_curve(t, cfg)
            } else {
                0.0
            }
        }),
        confound_scale: DMatrix::from_element(n, weeks, 1.0),
    };
    if spec.id != ScenarioId::Base {
        apply_scenario(
            &mut components,
            cfg,
            spec,
            &latents,
            &ever_treated,
            &mut stream_rng(master_seed, replication, "s3/shock"),
        )?;
    }

    let y0_clean = apply_noise(
        &components.log_baseline,
        cfg.sigma_eps,
        &mut stream_rng(master_seed, replication, "noise"),
    )?;
    let y0_observed = DMatrix::from_fn(n, weeks, |i, t| y0_clean[(i, t)] * components.confound_scale[(i, t)]);
    let outcome = DMatrix::from_fn(n, weeks, |i, t| y0_observed[(i, t)] * (1.0 + components.tau[(i, t)]));

    let log_y0_observed = y0_observed.map(f64::ln);
    let (statics, dynamics) = gen_covariates(
        cfg,
        &latents,
        &log_y0_observed,
        &mut stream_rng(master_seed, replication, "covariates"),
    );

    let panel = Panel::new(
        cfg.t_pre,
        cfg.t_post,
        outcome,
        treat_active,
        ever_treated,
        statics,
        dynamics,
    )?;
    let y1 = DMatrix::from_fn(n, weeks, |i, t| y0_clean[(i, t)] * (1.0 + components.tau[(i, t)]));
    let truth = GroundTruth::new(&panel, y0_clean, y1, components.tau)?;
    Ok((panel, truth))
}
