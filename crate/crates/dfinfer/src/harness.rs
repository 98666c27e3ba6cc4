//! Seeded scenario generators and the Monte Carlo engine behind the acceptance suites.
//!
//! Trial `i` of a run with master seed `m` draws only from `split_seed(m, i)`, and
//! trial results are reduced in index order. Reports are therefore bit-reproducible
//! and identical under parallel and sequential execution.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::calibration::{binned_ece_estimate, dce_estimate, isotonic_fit, venn_abers, Partition};
use crate::conformal::{
    full_set_least_squares, smoothed_pvalue, split_set, split_threshold, Level, YDomain,
};
use crate::crossval::{
    cross_conformal_set, cv_plus_interval, jackknife_interval, jackknife_worst_case_matrix, tournament_rowsum_check,
    FoldPlan, JackknifeVariant,
};
use crate::error::{invalid, Error, Result};
use crate::independence_regression::{
    binned_local_permutation_test, local_permutation_test, regression_ci, PermutationBudget, RegressionMethod,
    TestStatistic,
};
use crate::online::{BettingFunction, Martingale, OnlineConformal, StepSchedule, TrackerState};
use crate::quantile_core::{rank, FiniteSample, Rank};
use crate::risk_multiplicity::{bh_procedure, outlier_pvalues, risk_calibrate, CoordinatewiseLoss, MiscoverageLoss};
use crate::rng::{rng_from_seed, split_seed, Rng};
use crate::scores::{Bins, Dataset, PredictorKind, ScoreFunction, ScoreKind, ScoreRecipe};
use crate::special::{beta_cdf, chi_square_sf, ks_pvalue, normal_cdf};
use crate::weighted::{shift_weights, weighted_split_threshold, LikelihoodRatio};

/// Master seed used by the acceptance suite and the CLI default.
pub const DEFAULT_SEED: u64 = 20261016;

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Data-generating processes. Confounder scenarios emit rows `[x, w]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum Scenario {
    /// `X ~ N(0, I_d)`, `Y = X.beta + noise Z`.
    GaussianLinear { beta: Vec<f64>, noise: f64 },
    /// `X ~ U[-2, 2]`, `Y = slope X + (1/4 + |X|) Z`.
    Heteroscedastic { slope: f64 },
    /// `X ~ N(0, I_d)`, `Y ~ Bernoulli(sigmoid(X.beta))`.
    BinaryLogistic { beta: Vec<f64> },
    /// `X ~ N(0, 1)`, `P(Y = j | X) ~ exp((j - (K-1)/2) X)`.
    FiniteLabel { k: usize },
    /// Source `X ~ N(0, 1)`, target `X ~ N(shift, 1)`; `Y = X + (1/4 + |X|) Z`.
    CovariateShiftPair { shift: f64 },
    /// `Y ~ source` or `target` label probabilities, `X | Y ~ N(Y, 1)`.
    LabelShiftPair { source: Vec<f64>, target: Vec<f64> },
    /// Row `t` (0-based): `X ~ N(0, 1)`, `Y = Z + jump 1{t >= changepoint}`.
    DriftStream { changepoint: usize, jump: f64 },
    /// `W ~ U{0..levels-1}`, `X = W + Z1`, `Y = W + dependence X + Z2`.
    DiscreteConfounder { levels: usize, dependence: f64 },
    /// `W ~ U[0, 1]`, `X = L W + Z1`, `Y = L W + dependence X + Z2`.
    SmoothConfounder { lipschitz: f64, dependence: f64 },
    /// `X ~ U{0..k-1}`, `Y ~ Bernoulli((X + 1/2) / k)`.
    DiscreteRegression { k: usize },
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::GaussianLinear { beta, noise } => !beta.is_empty() && *noise >= 0.0,
            Self::Heteroscedastic { slope } => slope.is_finite(),
            Self::BinaryLogistic { beta } => !beta.is_empty(),
            Self::FiniteLabel { k } => *k >= 2,
            Self::CovariateShiftPair { shift } => shift.is_finite(),
            Self::LabelShiftPair { source, target } => {
                let valid = |p: &Vec<f64>| p.iter().all(|v| *v > 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9;
                source.len() == target.len() && source.len() >= 2 && valid(source) && valid(target)
            }
            Self::DriftStream { jump, .. } => jump.is_finite(),
            Self::DiscreteConfounder { levels, dependence } => *levels >= 1 && dependence.is_finite(),
            Self::SmoothConfounder { lipschitz, dependence } => *lipschitz >= 0.0 && dependence.is_finite(),
            Self::DiscreteRegression { k } => *k >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid scenario parameters: {self:?}")))
        }
    }

    fn row(&self, rng: &mut Rng, target: bool, t: usize) -> (Vec<f64>, f64) {
        match self {
            Self::GaussianLinear { beta, noise } => {
                let x: Vec<f64> = beta.iter().map(|_| normal(rng)).collect();
                let y = dot(&x, beta) + noise * normal(rng);
                (x, y)
            }
            Self::Heteroscedastic { slope } => {
                let x = rng.random_range(-2.0..2.0);
                (vec![x], slope * x + (0.25 + f64::abs(x)) * normal(rng))
            }
            Self::BinaryLogistic { beta } => {
                let x: Vec<f64> = beta.iter().map(|_| normal(rng)).collect();
                let y = f64::from(u8::from(rng.random::<f64>() < sigmoid(dot(&x, beta))));
                (x, y)
            }
            Self::FiniteLabel { k } => {
                let x = normal(rng);
                let mid = (*k as f64 - 1.0) / 2.0;
                let w: Vec<f64> = (0..*k).map(|j| ((j as f64 - mid) * x).exp()).collect();
                let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
                let mut y = k - 1;
                for (j, wj) in w.iter().enumerate() {
                    if u < *wj {
                        y = j;
                        break;
                    }
                    u -= wj;
                }
                (vec![x], y as f64)
            }
            Self::CovariateShiftPair { shift } => {
                let x = normal(rng) + if target { *shift } else { 0.0 };
                (vec![x], x + (0.25 + x.abs()) * normal(rng))
            }
            Self::LabelShiftPair { source, target: tgt } => {
                let p = if target { tgt } else { source };
                let mut u = rng.random::<f64>();
                let mut y = p.len() - 1;
                for (j, pj) in p.iter().enumerate() {
                    if u < *pj {
                        y = j;
                        break;
                    }
                    u -= pj;
                }
                (vec![y as f64 + normal(rng)], y as f64)
            }
            Self::DriftStream { changepoint, jump } => {
                let x = normal(rng);
                let shift = if t >= *changepoint { *jump } else { 0.0 };
                (vec![x], normal(rng) + shift)
            }
            Self::DiscreteConfounder { levels, dependence } => {
                let w = rng.random_range(0..*levels) as f64;
                let x = w + normal(rng);
                (vec![x, w], w + dependence * x + normal(rng))
            }
            Self::SmoothConfounder { lipschitz, dependence } => {
                let w = rng.random::<f64>();
                let x = lipschitz * w + normal(rng);
                (vec![x, w], lipschitz * w + dependence * x + normal(rng))
            }
            Self::DiscreteRegression { k } => {
                let x = rng.random_range(0..*k) as f64;
                let y = f64::from(u8::from(rng.random::<f64>() < (x + 0.5) / *k as f64));
                (vec![x], y)
            }
        }
    }

    fn draw_from(&self, rng: &mut Rng, n: usize, target: bool) -> Result<Dataset> {
        self.validate()?;
        let (rows, ys): (Vec<_>, Vec<_>) = (0..n).map(|t| self.row(rng, target, t)).unzip();
        Dataset::new(rows, ys)
    }

    /// `n` rows from the source (training) distribution.
    pub fn draw(&self, rng: &mut Rng, n: usize) -> Result<Dataset> {
        self.draw_from(rng, n, false)
    }

    /// `n` rows from the target distribution; equals [`Scenario::draw`] for unshifted scenarios.
    pub fn draw_target(&self, rng: &mut Rng, n: usize) -> Result<Dataset> {
        self.draw_from(rng, n, true)
    }

    /// Target-to-source likelihood ratio for the shift pairs.
    pub fn likelihood_ratio(&self) -> Option<LikelihoodRatio> {
        match self {
            Self::CovariateShiftPair { shift } => {
                let s = *shift;
                Some(LikelihoodRatio::covariate(move |x| (s * x[0] - s * s / 2.0).exp()))
            }
            Self::LabelShiftPair { source, target } => {
                let r: Vec<f64> = source.iter().zip(target).map(|(s, t)| t / s).collect();
                Some(LikelihoodRatio::label(move |y| r.get(y as usize).copied().unwrap_or(0.0)))
            }
            _ => None,
        }
    }

    /// Population regression function `E[Y | X = x]` where it has closed form.
    pub fn true_mean(&self, x: &[f64]) -> Option<f64> {
        match self {
            Self::GaussianLinear { beta, .. } => Some(dot(x, beta)),
            Self::Heteroscedastic { slope } => Some(slope * x[0]),
            Self::BinaryLogistic { beta } => Some(sigmoid(dot(x, beta))),
            Self::CovariateShiftPair { .. } => Some(x[0]),
            Self::DiscreteRegression { k } => Some((x[0] + 0.5) / *k as f64),
            _ => None,
        }
    }

    /// CDF of the oracle residual score `|Y - E[Y|X]|` where it has closed form.
    pub fn oracle_residual_cdf(&self, v: f64) -> Option<f64> {
        match self {
            Self::GaussianLinear { noise, .. } if *noise > 0.0 => Some(if v <= 0.0 { 0.0 } else { 2.0 * normal_cdf(v / noise) - 1.0 }),
            _ => None,
        }
    }
}

/// Per-trial outcomes; which slots a suite fills is documented with the suite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub index: u64,
    pub seed: u64,
    pub coverage: Vec<bool>,
    pub loss: Vec<f64>,
    pub pvalues: Vec<f64>,
    pub measure: Vec<f64>,
}

/// One estimate compared with a closed band `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub estimate: f64,
    pub band: [f64; 2],
    pub pass: bool,
    /// Informational checks are reported but do not affect the suite verdict.
    pub informational: bool,
}

impl Check {
    fn new(name: impl Into<String>, estimate: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), estimate, band: [lo, hi], pass: lo <= estimate && estimate <= hi, informational: false }
    }

    fn info(name: impl Into<String>, estimate: f64, lo: f64, hi: f64) -> Self {
        Self { informational: true, ..Self::new(name, estimate, lo, hi) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub params: Value,
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
    /// All non-informational checks pass and at least one check ran.
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SuiteInfo {
    pub id: &'static str,
    pub default_trials: usize,
    pub summary: &'static str,
}

/// Registered suites in acceptance order.
pub const SUITES: &[SuiteInfo] = &[
    SuiteInfo { id: "split-coverage", default_trials: 10_000, summary: "split conformal marginal coverage sandwich" },
    SuiteInfo { id: "beta-law", default_trials: 10_000, summary: "training-conditional coverage follows the Beta law" },
    SuiteInfo { id: "smoothed-pvalue", default_trials: 10_000, summary: "smoothed p-values are exactly uniform under ties" },
    SuiteInfo { id: "least-squares-full", default_trials: 100, summary: "closed-form least-squares full conformal matches a grid oracle" },
    SuiteInfo { id: "cross-conformal", default_trials: 10_000, summary: "CC within CV+, jackknife+ coverage, worst-case tournament" },
    SuiteInfo { id: "covariate-shift", default_trials: 10_000, summary: "weighted conformal under known covariate shift" },
    SuiteInfo { id: "quantile-tracker", default_trials: 10, summary: "deterministic long-run envelope of quantile tracking" },
    SuiteInfo { id: "martingale", default_trials: 10_000, summary: "exchangeability martingale false alarms and power" },
    SuiteInfo { id: "risk-control", default_trials: 10_000, summary: "conformal risk control and the miscoverage reduction" },
    SuiteInfo { id: "outlier-fdr", default_trials: 2_000, summary: "BH on conformal outlier p-values controls FDR" },
    SuiteInfo { id: "online-independence", default_trials: 10_000, summary: "online conformal p-values are pairwise independent" },
    SuiteInfo { id: "calibration", default_trials: 10_000, summary: "PAVA exactness, dCE bound, Venn-Abers, binned ECE example" },
    SuiteInfo { id: "conditional-independence", default_trials: 10_000, summary: "local permutation test size and power" },
    SuiteInfo { id: "regression-ci", default_trials: 10_000, summary: "distribution-free regression CI for discrete X" },
];

pub fn suite_info(id: &str) -> Result<&'static SuiteInfo> {
    SUITES.iter().find(|s| s.id == id).ok_or_else(|| Error::UnknownSuite(id.to_string()))
}

/// Whether trials run on the rayon pool or in order on the caller thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

pub fn run_suite(id: &str, trials: usize, seed: u64) -> Result<SuiteReport> {
    run_suite_with(id, trials, seed, Execution::Parallel)
}

pub fn run_suite_with(id: &str, trials: usize, seed: u64, exec: Execution) -> Result<SuiteReport> {
    let info = suite_info(id)?;
    let ctx = Ctx { seed, exec };
    if trials == 0 {
        return Ok(SuiteReport { suite: info.id.into(), params: json!({}), trials, seed, checks: Vec::new(), pass: false });
    }
    let (params, checks) = match info.id {
        "split-coverage" => split_coverage(&ctx, trials)?,
        "beta-law" => beta_law(&ctx, trials)?,
        "smoothed-pvalue" => smoothed_exactness(&ctx, trials)?,
        "least-squares-full" => least_squares_full(&ctx, trials)?,
        "cross-conformal" => cross_conformal(&ctx, trials)?,
        "covariate-shift" => covariate_shift(&ctx, trials)?,
        "quantile-tracker" => quantile_tracker(&ctx, trials)?,
        "martingale" => martingale(&ctx, trials)?,
        "risk-control" => risk_control(&ctx, trials)?,
        "outlier-fdr" => outlier_fdr(&ctx, trials)?,
        "online-independence" => online_independence(&ctx, trials)?,
        "calibration" => calibration(&ctx, trials)?,
        "conditional-independence" => conditional_independence(&ctx, trials)?,
        "regression-ci" => regression_ci_suite(&ctx, trials)?,
        other => return Err(Error::UnknownSuite(other.to_string())),
    };
    let pass = !checks.is_empty() && checks.iter().all(|c| c.informational || c.pass);
    Ok(SuiteReport { suite: info.id.into(), params, trials, seed, checks, pass })
}

struct Ctx {
    seed: u64,
    exec: Execution,
}

impl Ctx {
    /// Runs `trials` independent trials; results come back in index order.
    fn run<F>(&self, trials: usize, f: F) -> Result<Vec<TrialReport>>
    where
        F: Fn(&mut Rng, &mut TrialReport) -> Result<()> + Sync,
    {
        run_trials(self.seed, trials, self.exec, f)
    }

    /// Seed of item `i` in auxiliary stream `label`, disjoint from the trial streams.
    fn aux(&self, label: u64, i: u64) -> u64 {
        split_seed(split_seed(self.seed, u64::MAX - label), i)
    }
}

/// Runs trial `i` with a generator seeded by `split_seed(master, i)`.
pub fn run_trials<F>(master: u64, trials: usize, exec: Execution, f: F) -> Result<Vec<TrialReport>>
where
    F: Fn(&mut Rng, &mut TrialReport) -> Result<()> + Sync,
{
    let one = |i: u64| {
        let seed = split_seed(master, i);
        let mut rng = rng_from_seed(seed);
        let mut r = TrialReport { index: i, seed, ..TrialReport::default() };
        f(&mut rng, &mut r)?;
        Ok(r)
    };
    match exec {
        Execution::Parallel => (0..trials as u64).into_par_iter().map(one).collect(),
        Execution::Sequential => (0..trials as u64).map(one).collect(),
    }
}

/// Three binomial standard deviations at success probability `p` over `r` trials.
pub fn binomial_3sigma(p: f64, r: usize) -> f64 {
    3.0 * (p * (1.0 - p) / r as f64).sqrt()
}

/// Two-sided one-sample Kolmogorov-Smirnov statistic against `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

fn rate(reports: &[TrialReport], slot: usize) -> f64 {
    reports.iter().filter(|r| r.coverage[slot]).count() as f64 / reports.len() as f64
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, c) = v.into_iter().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c as f64
}

fn loss_mean(reports: &[TrialReport], slot: usize) -> f64 {
    mean(reports.iter().map(|r| r.loss[slot]))
}

type SuiteOutput = Result<(Value, Vec<Check>)>;

/// Coverage slot 0: test response covered. Measure slot 0: set length.
fn split_coverage(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (n, alpha) = (99, 0.1);
    let level = Level::new(alpha)?;
    let sc = Scenario::GaussianLinear { beta: vec![1.0, -1.0], noise: 1.0 };
    let recipe = ScoreRecipe::new(ScoreKind::Residual, PredictorKind::LeastSquares);
    let reports = ctx.run(r, |rng, t| {
        let train = sc.draw(rng, 100)?;
        let cal = sc.draw(rng, n)?;
        let test = sc.draw(rng, 1)?;
        let s = ScoreFunction::pretrained(recipe.fit(&train)?);
        let set = split_set(&s, &cal, test.x(0), level, &YDomain::Real)?;
        t.coverage.push(set.contains(test.y(0)));
        t.measure.push(set.measure());
        Ok(())
    })?;
    let band = binomial_3sigma(1.0 - alpha, r);
    let checks = vec![Check::new("coverage", rate(&reports, 0), 1.0 - alpha - band, 1.0 - alpha + 1.0 / (n + 1) as f64 + band)];
    Ok((json!({ "n": n, "alpha": alpha, "scenario": sc, "train": 100 }), checks))
}

/// `(a, b)` of the Beta law of training-conditional coverage.
fn beta_law_params(n: usize, level: Level) -> Result<(f64, f64)> {
    match rank(n, level.conformal_tau(n)) {
        Rank::At(k) => Ok((k as f64, (n + 1 - k) as f64)),
        _ => Err(invalid("the Beta law needs a finite threshold")),
    }
}

/// Loss slot 0: coverage conditional on the calibration set.
fn beta_law(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (n, alpha) = (99, 0.1);
    let level = Level::new(alpha)?;
    let sc = Scenario::GaussianLinear { beta: vec![1.0], noise: 1.0 };
    let reports = ctx.run(r, |rng, t| {
        let cal = sc.draw(rng, n)?;
        let scores = cal.rows().map(|(x, y)| (y - x[0]).abs()).collect();
        let q = split_threshold(&FiniteSample::new(scores)?, level);
        t.loss.push(sc.oracle_residual_cdf(q).ok_or_else(|| invalid("no oracle CDF"))?);
        Ok(())
    })?;
    let (a, b) = beta_law_params(n, level)?;
    let target_mean = a / (a + b);
    let target_var = a * b / ((a + b) * (a + b) * (a + b + 1.0));
    let cond: Vec<f64> = reports.iter().map(|t| t.loss[0]).collect();
    let m = mean(cond.iter().copied());
    let var = cond.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / (cond.len().max(2) - 1) as f64;
    let d = ks_statistic(&cond, |v| beta_cdf(a, b, v));
    let checks = vec![
        Check::new("mean", m, target_mean - 0.003, target_mean + 0.003),
        Check::new("variance", var, 0.8 * target_var, 1.2 * target_var),
        Check::new("ks_pvalue", ks_pvalue(d, cond.len()), 0.001, 1.0),
    ];
    Ok((json!({ "n": n, "alpha": alpha, "beta_a": a, "beta_b": b, "scenario": sc }), checks))
}

/// P-value slot 0: smoothed p-value of the test score among tied integer scores.
fn smoothed_exactness(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (n, levels) = (19, 5);
    let reports = ctx.run(r, |rng, t| {
        let scores: Vec<f64> = (0..=n).map(|_| rng.random_range(0..levels) as f64).collect();
        let xi = rng.random::<f64>();
        t.pvalues.push(smoothed_pvalue(&FiniteSample::new(scores)?, xi)?.value);
        Ok(())
    })?;
    let mut p: Vec<f64> = reports.iter().map(|t| t.pvalues[0]).collect();
    p.sort_by(f64::total_cmp);
    let worst = (1..100)
        .map(|j| {
            let tau = j as f64 / 100.0;
            let hit = p.partition_point(|&v| v <= tau) as f64 / r as f64;
            (hit - tau).abs() / (tau * (1.0 - tau) / r as f64).sqrt()
        })
        .fold(0.0, f64::max);
    Ok((json!({ "n": n, "score_levels": levels, "tau_grid": 99 }), vec![Check::new("max_abs_z", worst, 0.0, 3.0)]))
}

/// Independent oracle: refit least squares on the augmented data in closed form
/// (two features) and compare conformal p-values with alpha.
fn ls_oracle_member(train: &Dataset, x: &[f64], y: f64, alpha: f64) -> bool {
    let n = train.len();
    let rows = (0..n).map(|i| (train.x(i), train.y(i))).chain([(x, y)]);
    let (mut s00, mut s01, mut s11, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (r, v) in rows.clone() {
        s00 += r[0] * r[0];
        s01 += r[0] * r[1];
        s11 += r[1] * r[1];
        t0 += r[0] * v;
        t1 += r[1] * v;
    }
    let det = s00 * s11 - s01 * s01;
    let b0 = (s11 * t0 - s01 * t1) / det;
    let b1 = (s00 * t1 - s01 * t0) / det;
    let resid: Vec<f64> = rows.map(|(r, v)| (v - b0 * r[0] - b1 * r[1]).abs()).collect();
    let test = resid[n];
    let count = resid[..n].iter().filter(|&&s| s >= test).count();
    (1 + count) as f64 > alpha * (n + 1) as f64
}

const ORACLE_GRID: usize = 10_000;

/// Loss slot 0: grid points where the closed form and the oracle disagree away from an endpoint.
fn least_squares_full(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (n, alpha) = (20, 0.1);
    let level = Level::new(alpha)?;
    let sc = Scenario::GaussianLinear { beta: vec![1.0, -0.5], noise: 1.0 };
    let reports = ctx.run(r, |rng, t| {
        let train = sc.draw(rng, n)?;
        let x = sc.draw(rng, 1)?.x(0).to_vec();
        let set = full_set_least_squares(&train, &x, level)?;
        let (lo, hi) = match set.hull() {
            Some(h) if h.lo.is_finite() && h.hi.is_finite() => {
                let w = h.hi - h.lo;
                (h.lo - 0.5 * w - 1.0, h.hi + 0.5 * w + 1.0)
            }
            _ => (-50.0, 50.0),
        };
        let step = (hi - lo) / (ORACLE_GRID - 1) as f64;
        let ends: Vec<f64> = set.endpoints().into_iter().filter(|e| e.is_finite()).collect();
        let bad = (0..ORACLE_GRID)
            .map(|j| lo + j as f64 * step)
            .filter(|&y| ls_oracle_member(&train, &x, y, alpha) != set.contains(y))
            .filter(|&y| ends.iter().all(|e| (y - e).abs() > step))
            .count();
        t.loss.push(bad as f64);
        t.measure.push(set.measure());
        Ok(())
    })?;
    let bad_instances = reports.iter().filter(|t| t.loss[0] > 0.0).count();
    Ok((
        json!({ "n": n, "alpha": alpha, "grid": ORACLE_GRID, "scenario": sc }),
        vec![Check::new("instances_off_by_more_than_one_step", bad_instances as f64, 0.0, 0.0)],
    ))
}

const NESTING_INSTANCES: u64 = 100;

/// Coverage slot 0: jackknife+ covers the test response.
fn cross_conformal(ctx: &Ctx, r: usize) -> SuiteOutput {
    let alpha = 0.1;
    let level = Level::new(alpha)?;
    let sc = Scenario::Heteroscedastic { slope: 1.0 };
    let jk_n = 50;
    let reports = ctx.run(r, |rng, t| {
        let train = sc.draw(rng, jk_n)?;
        let test = sc.draw(rng, 1)?;
        let set = jackknife_interval(&PredictorKind::LeastSquares, &train, test.x(0), level, JackknifeVariant::Plus)?;
        t.coverage.push(set.contains(test.y(0)));
        Ok(())
    })?;
    let (cc_n, k) = (40, 5);
    let recipe = ScoreRecipe::new(ScoreKind::Residual, PredictorKind::LeastSquares);
    let nesting_failures = (0..NESTING_INSTANCES)
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let seed = ctx.aux(1, i);
            let mut rng = rng_from_seed(seed);
            let train = sc.draw(&mut rng, cc_n)?;
            let x = sc.draw(&mut rng, 1)?.x(0).to_vec();
            let folds = FoldPlan::new(cc_n, k, seed)?;
            let cc = cross_conformal_set(&ScoreFunction::refit(recipe.clone()), &train, &x, level, &folds, &YDomain::Real)?;
            let cvp = cv_plus_interval(&PredictorKind::LeastSquares, &train, &x, level, &folds)?;
            Ok(!cc.is_subset_of(&cvp))
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|b| *b)
        .count();
    // Worst case: N = n + 1 = 10 teams, alpha = 0.4, m = alpha (n + 1) - 1 = 3.
    let (teams, t_alpha) = (10usize, 0.4);
    let m = (t_alpha * teams as f64).round() as usize - 1;
    let tour = tournament_rowsum_check(&jackknife_worst_case_matrix(teams, m)?, t_alpha)?;
    let expected = (2.0 * t_alpha * teams as f64).round() - 1.0;
    let checks = vec![
        Check::new("cc_subset_of_cv_plus_failures", nesting_failures as f64, 0.0, 0.0),
        Check::new("jackknife_plus_coverage", rate(&reports, 0), 1.0 - 2.0 * alpha - 0.012, 1.0),
        Check::new("worst_case_tournament_count", tour.count as f64, expected, expected),
    ];
    Ok((
        json!({ "alpha": alpha, "jackknife_n": jk_n, "cc_n": cc_n, "folds": k, "nesting_instances": NESTING_INSTANCES, "tournament_teams": teams, "tournament_alpha": t_alpha, "scenario": sc }),
        checks,
    ))
}

/// Coverage slots: 0 weighted, 1 unweighted.
fn covariate_shift(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (n, alpha) = (100, 0.1);
    let level = Level::new(alpha)?;
    let sc = Scenario::CovariateShiftPair { shift: 1.0 };
    let lr = sc.likelihood_ratio().expect("shift pair");
    let reports = ctx.run(r, |rng, t| {
        let cal = sc.draw(rng, n)?;
        let test = sc.draw_target(rng, 1)?;
        let (x, y) = (test.x(0), test.y(0));
        let scores: Vec<f64> = cal.rows().map(|(cx, cy)| (cy - cx[0]).abs()).collect();
        let w = shift_weights(&lr, &cal, x, f64::NAN)?;
        let s = (y - x[0]).abs();
        t.coverage.push(s <= weighted_split_threshold(&scores, &w, level)?);
        t.coverage.push(s <= split_threshold(&FiniteSample::new(scores)?, level));
        Ok(())
    })?;
    let band = binomial_3sigma(1.0 - alpha, r);
    let checks = vec![
        Check::new("weighted_coverage", rate(&reports, 0), 1.0 - alpha - 0.012, 1.0),
        Check::new("unweighted_coverage_below_nominal", rate(&reports, 1), 0.0, 1.0 - alpha - band),
    ];
    Ok((json!({ "n": n, "alpha": alpha, "scenario": sc }), checks))
}

const TRACKER_T: usize = 100_000;

fn adversarial_score(kind: u64, t: usize, q: f64, b: f64, rng: &mut Rng) -> f64 {
    let clamp = |v: f64| v.clamp(0.0, b);
    match kind % 10 {
        0 => b,
        1 => 0.0,
        2 => b * (t % 2) as f64,
        3 => rng.random::<f64>() * b,
        4 => {
            if q < b {
                b
            } else {
                0.0
            }
        }
        5 => clamp(q + 1e-3),
        6 => clamp(q),
        7 => b * ((t / 1000) % 2) as f64,
        8 => b * f64::from(u8::from(rng.random::<bool>())),
        _ => {
            if (t / 7).is_multiple_of(3) {
                b
            } else {
                clamp(q - 1e-3)
            }
        }
    }
}

/// Loss slots: worst prefix ratio `|mean err - alpha| / envelope` for the constant and power schedules.
fn quantile_tracker(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (alpha, b) = (0.1, 1.0);
    let level = Level::new(alpha)?;
    let schedules = [StepSchedule::Constant { eta: 0.05 }, StepSchedule::Power { scale: 1.0, eps: 0.1 }];
    let reports = ctx.run(r, |rng, t| {
        for sched in &schedules {
            let mut tr = TrackerState::new(0.5, level, b, sched.clone())?;
            let eta1 = sched.eta(1)?;
            let mut worst = 0.0f64;
            for step in 1..=TRACKER_T {
                let s = adversarial_score(t.index, step, tr.q, b, rng);
                tr.step(s)?;
                let dev = (tr.errors as f64 / step as f64 - alpha).abs();
                let envelope = (b + eta1) / (sched.eta(step)? * step as f64);
                worst = worst.max(dev / envelope);
            }
            t.loss.push(worst);
        }
        Ok(())
    })?;
    let worst = |slot: usize| reports.iter().map(|t| t.loss[slot]).fold(0.0, f64::max);
    let checks = vec![
        Check::new("constant_step_worst_ratio", worst(0), 0.0, 1.0),
        Check::new("power_step_worst_ratio", worst(1), 0.0, 1.0),
    ];
    Ok((json!({ "alpha": alpha, "bound": b, "horizon": TRACKER_T, "schedules": schedules }), checks))
}

/// Coverage slots: 0 alarm on an exchangeable stream, 1 alarm with a changepoint.
fn martingale(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (horizon, alpha) = (1000, 0.05);
    let level = Level::new(alpha)?;
    let lambdas = vec![0.2, 0.4, 0.6, 0.8, 1.0];
    let bet = BettingFunction::mixture(lambdas.clone())?;
    let null = Scenario::DriftStream { changepoint: horizon, jump: 0.0 };
    let alt = Scenario::DriftStream { changepoint: horizon / 2, jump: 2.0 };
    let reports = ctx.run(r, |rng, t| {
        for sc in [&null, &alt] {
            let data = sc.draw(rng, horizon)?;
            let mut oc = OnlineConformal::new(ScoreFunction::custom("y", |_, y| y), level);
            let mut mart = Martingale::new(bet.clone(), level);
            for (x, y) in data.rows() {
                let p = oc.step_smoothed(x.to_vec(), y, rng.random::<f64>())?;
                mart.update(p)?;
            }
            t.coverage.push(mart.alarmed());
        }
        Ok(())
    })?;
    let checks = vec![
        Check::new("false_alarm_rate", rate(&reports, 0), 0.0, alpha + binomial_3sigma(alpha, r)),
        Check::info("changepoint_detection_rate", rate(&reports, 1), 0.9, 1.0),
    ];
    Ok((json!({ "horizon": horizon, "alpha": alpha, "lambdas": lambdas, "null": null, "alternative": alt }), checks))
}

const RISK_EXACT_INSTANCES: u64 = 1000;

/// Loss slot 0: coordinatewise miscoverage of a fresh test point.
fn risk_control(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (n, alpha) = (200, 0.1);
    let level = Level::new(alpha)?;
    let sigmas = [0.5, 1.0, 1.5, 2.0, 2.5];
    let row = |rng: &mut Rng| sigmas.iter().map(|s| s * normal(rng).abs()).collect::<Vec<f64>>();
    let reports = ctx.run(r, |rng, t| {
        let cal: Vec<Vec<f64>> = (0..n).map(|_| row(rng)).collect();
        let lambda = risk_calibrate(&CoordinatewiseLoss::new(cal)?, level)?.lambda;
        let test = row(rng);
        t.loss.push(test.iter().filter(|&&s| s > lambda).count() as f64 / test.len() as f64);
        Ok(())
    })?;
    let alphas = [0.05, 0.1, 0.2, 0.5];
    let mismatches = (0..RISK_EXACT_INSTANCES)
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let mut rng = rng_from_seed(ctx.aux(2, i));
            let m = rng.random_range(1..=300);
            let lv = Level::new(alphas[rng.random_range(0..alphas.len())])?;
            let tied = rng.random::<bool>();
            let scores: Vec<f64> = (0..m)
                .map(|_| {
                    let z = normal(&mut rng);
                    if tied {
                        (z * 4.0).round() / 4.0
                    } else {
                        z
                    }
                })
                .collect();
            let risk = risk_calibrate(&MiscoverageLoss::new(scores.clone())?, lv)?.lambda;
            Ok(risk.to_bits() != split_threshold(&FiniteSample::new(scores)?, lv).to_bits())
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|b| *b)
        .count();
    let checks = vec![
        Check::new("mean_test_loss", loss_mean(&reports, 0), 0.0, alpha + 0.01),
        Check::new("miscoverage_lambda_bit_mismatches", mismatches as f64, 0.0, 0.0),
    ];
    Ok((json!({ "n": n, "alpha": alpha, "coordinate_scales": sigmas, "exact_instances": RISK_EXACT_INSTANCES }), checks))
}

/// Loss slots: 0 false discovery proportion, 1 fraction of outliers found.
fn outlier_fdr(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (n, m, outliers, q, shift) = (500, 100, 20, 0.1, 3.0);
    let reports = ctx.run(r, |rng, t| {
        let cal: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        let test: Vec<f64> = (0..m).map(|i| normal(rng) + if i < outliers { shift } else { 0.0 }).collect();
        let p: Vec<f64> = outlier_pvalues(&FiniteSample::new(cal)?, &FiniteSample::new(test)?)
            .into_iter()
            .map(|p| p.value)
            .collect();
        let rej = bh_procedure(&p, q)?;
        let false_rej = rej.indices.iter().filter(|&&i| i >= outliers).count();
        t.loss.push(false_rej as f64 / rej.indices.len().max(1) as f64);
        t.loss.push((rej.indices.len() - false_rej) as f64 / outliers as f64);
        Ok(())
    })?;
    let checks = vec![
        Check::new("fdr", loss_mean(&reports, 0), 0.0, q + 0.01),
        Check::info("power", loss_mean(&reports, 1), 0.5, 1.0),
    ];
    Ok((json!({ "calibration": n, "tests": m, "outliers": outliers, "q": q, "outlier_shift": shift }), checks))
}

const INDEPENDENCE_PAIRS: u64 = 20;
const INDEPENDENCE_BINS: usize = 4;

fn pvalue_bin(p: f64) -> usize {
    ((p * INDEPENDENCE_BINS as f64).ceil() as usize).clamp(1, INDEPENDENCE_BINS) - 1
}

/// Chi-square test of independence on a contingency table; empty rows and columns are dropped.
fn chi_square_independence(table: &[Vec<f64>]) -> f64 {
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let total: f64 = rows.iter().sum();
    let mut stat = 0.0;
    for (i, r) in rows.iter().enumerate().filter(|(_, r)| **r > 0.0) {
        for (j, c) in cols.iter().enumerate().filter(|(_, c)| **c > 0.0) {
            let e = r * c / total;
            stat += (table[i][j] - e).powi(2) / e;
        }
    }
    let nr = rows.iter().filter(|r| **r > 0.0).count();
    let nc = cols.iter().filter(|c| **c > 0.0).count();
    let df = ((nr.max(2) - 1) * (nc.max(2) - 1)) as f64;
    chi_square_sf(stat, df)
}

/// P-value slots: `p_1, ..., p_T` of one stream.
fn online_independence(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (horizon, alpha) = (200usize, 0.1);
    let level = Level::new(alpha)?;
    let sc = Scenario::GaussianLinear { beta: vec![1.0], noise: 1.0 };
    let reports = ctx.run(r, |rng, t| {
        let data = sc.draw(rng, horizon)?;
        let mut oc = OnlineConformal::new(ScoreFunction::custom("abs_residual", |x, y| (y - x[0]).abs()), level);
        for (x, y) in data.rows() {
            t.pvalues.push(oc.step(x.to_vec(), y)?.value);
        }
        Ok(())
    })?;
    let mut pair_rng = rng_from_seed(ctx.aux(3, 0));
    let mut pairs = Vec::new();
    let mut min_p = 1.0f64;
    for _ in 0..INDEPENDENCE_PAIRS {
        let a = pair_rng.random_range(10..horizon);
        let b = pair_rng.random_range(a + 1..=horizon);
        let mut table = vec![vec![0.0; INDEPENDENCE_BINS]; INDEPENDENCE_BINS];
        for t in &reports {
            table[pvalue_bin(t.pvalues[a - 1])][pvalue_bin(t.pvalues[b - 1])] += 1.0;
        }
        min_p = min_p.min(chi_square_independence(&table));
        pairs.push([a, b]);
    }
    let adjusted = (min_p * INDEPENDENCE_PAIRS as f64).min(1.0);
    Ok((
        json!({ "horizon": horizon, "pairs": pairs, "bins": INDEPENDENCE_BINS, "scenario": sc }),
        vec![Check::new("bonferroni_min_pvalue", adjusted, 0.001, 1.0)],
    ))
}

/// Exact isotonic values on tie groups by the max-min formula in rational arithmetic.
/// Returns `(numerator, denominator)` per group.
fn isotonic_rational(sums: &[u64], counts: &[u64]) -> Vec<(u64, u64)> {
    let g = sums.len();
    (0..g)
        .map(|i| {
            let mut best: Option<(u64, u64)> = None;
            for a in 0..=i {
                let mut inner: Option<(u64, u64)> = None;
                for b in i..g {
                    let s: u64 = sums[a..=b].iter().sum();
                    let c: u64 = counts[a..=b].iter().sum();
                    if inner.is_none_or(|(p, q)| s * q < p * c) {
                        inner = Some((s, c));
                    }
                }
                let (s, c) = inner.expect("nonempty");
                if best.is_none_or(|(p, q)| s * q > p * c) {
                    best = Some((s, c));
                }
            }
            best.expect("nonempty")
        })
        .collect()
}

/// Number of fixtures where the isotonic fit differs in any bit from the exact projection.
/// Fixtures: every binary response vector of length at most 12, with distinct and with paired covariates.
fn pava_fixture_mismatches() -> Result<usize> {
    let mut bad = 0;
    for n in 1..=12usize {
        for tie in [false, true] {
            let x: Vec<f64> = (0..n).map(|i| if tie { (i / 2) as f64 } else { i as f64 }).collect();
            for mask in 0u32..(1 << n) {
                let y: Vec<f64> = (0..n).map(|i| f64::from((mask >> i) & 1)).collect();
                let fit = isotonic_fit(&x, &y)?;
                let (mut sums, mut counts, mut group) = (Vec::new(), Vec::new(), Vec::with_capacity(n));
                for i in 0..n {
                    if i == 0 || x[i] != x[i - 1] {
                        sums.push(0u64);
                        counts.push(0u64);
                    }
                    *sums.last_mut().expect("group") += (mask >> i) as u64 & 1;
                    *counts.last_mut().expect("group") += 1;
                    group.push(sums.len() - 1);
                }
                let exact = isotonic_rational(&sums, &counts);
                if (0..n).any(|i| {
                    let (p, q) = exact[group[i]];
                    fit[i].to_bits() != (p as f64 / q as f64).to_bits()
                }) {
                    bad += 1;
                }
            }
        }
    }
    Ok(bad)
}

/// Draws `(f(X), Y)` from a fixture with closed-form distance to calibration.
/// Fixture 0: `f` in `{0.3, 0.8}` with true rates `{0.2, 0.6}`, dCE = 0.15.
/// Fixture 1: `f(X) = X ~ U[0,1]` with `P(Y = 1 | X) = X^2`, dCE = 1/6.
fn dce_fixture(kind: u64, rng: &mut Rng, n: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let mut f = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let (fi, pi) = if kind.is_multiple_of(2) {
            if rng.random::<bool>() {
                (0.3, 0.2)
            } else {
                (0.8, 0.6)
            }
        } else {
            let x = rng.random::<f64>();
            (x, x * x)
        };
        f.push(fi);
        y.push(f64::from(u8::from(rng.random::<f64>() < pi)));
    }
    (f, y, if kind.is_multiple_of(2) { 0.15 } else { 1.0 / 6.0 })
}

/// Coverage slot 0: dCE upper bound covers the true dCE.
/// Loss slots: 0 Venn-Abers probability for the realized label, 1 the label.
fn calibration(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (dce_n, dce_k, delta) = (1000, 10, 0.05);
    let (va_n, va_bins) = (100, 5);
    let logistic = Scenario::BinaryLogistic { beta: vec![1.5] };
    let reports = ctx.run(r, |rng, t| {
        let (f, y, truth) = dce_fixture(t.index, rng, dce_n);
        t.coverage.push(dce_estimate(&f, &y, dce_k, delta)?.upper >= truth);
        // Overconfident forecaster: logit doubled.
        let forecast = |x: &[f64]| sigmoid(3.0 * x[0]);
        let cal = logistic.draw(rng, va_n)?;
        let cal_f: Vec<f64> = (0..va_n).map(|i| forecast(cal.x(i))).collect();
        let test = logistic.draw(rng, 1)?;
        let (p0, p1) = venn_abers(&cal_f, cal.ys(), forecast(test.x(0)))?;
        let y_test = test.y(0);
        t.loss.push(if y_test == 1.0 { p1 } else { p0 });
        t.loss.push(y_test);
        Ok(())
    })?;
    let mut bins = vec![(0.0f64, 0.0f64, 0usize); va_bins];
    let mut resid_sq = vec![0.0f64; va_bins];
    for t in &reports {
        let b = ((t.loss[0] * va_bins as f64) as usize).min(va_bins - 1);
        bins[b].0 += t.loss[1] - t.loss[0];
        bins[b].2 += 1;
        resid_sq[b] += (t.loss[1] - t.loss[0]).powi(2);
    }
    let va_z = bins
        .iter()
        .zip(&resid_sq)
        .filter(|(b, _)| b.2 >= 30)
        .map(|(b, ss)| {
            let c = b.2 as f64;
            let m = b.0 / c;
            let var = (ss / c - m * m).max(1e-300);
            m.abs() / (var / c).sqrt()
        })
        .fold(0.0, f64::max);
    let pava_bad = pava_fixture_mismatches()?;
    let mut checks = vec![
        Check::new("pava_fixture_mismatches", pava_bad as f64, 0.0, 0.0),
        Check::new("dce_upper_bound_coverage", rate(&reports, 0), 1.0 - delta, 1.0),
        Check::new("venn_abers_bin_max_abs_z", va_z, 0.0, 3.0),
    ];
    let ece_n = 20_000;
    for (j, eps) in [0.1, 0.01].into_iter().enumerate() {
        let mut rng = rng_from_seed(ctx.aux(4, j as u64));
        let mut f = Vec::with_capacity(ece_n);
        let mut y = Vec::with_capacity(ece_n);
        for _ in 0..ece_n {
            let x = rng.random::<f64>();
            f.push((1.0 - eps) / 2.0 + eps * x);
            y.push(f64::from(u8::from(x > 0.25 && x < 0.75)));
        }
        let est = binned_ece_estimate(&f, &y, &Partition::equal(2)?, delta)?;
        checks.push(Check::new(format!("binned_ece_eps_{eps}"), est.estimate, eps / 4.0 - est.radius, eps / 4.0 + est.radius));
    }
    Ok((
        json!({ "dce_n": dce_n, "dce_bins": dce_k, "delta": delta, "venn_abers_n": va_n, "venn_abers_bins": va_bins, "ece_n": ece_n, "scenario": logistic }),
        checks,
    ))
}

/// Coverage slots: rejections for 0 discrete null, 1 smooth null (binned), 2 dependent alternative.
/// Loss slot 0: binned size inflation `L h sqrt(2n)`.
fn conditional_independence(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (n, perms, alpha, n_bins, lipschitz) = (50, 199, 0.1, 20, 1.0);
    let level = Level::new(alpha)?;
    let discrete_null = Scenario::DiscreteConfounder { levels: 5, dependence: 0.0 };
    let smooth_null = Scenario::SmoothConfounder { lipschitz, dependence: 0.0 };
    let alternative = Scenario::DiscreteConfounder { levels: 5, dependence: 1.0 };
    let bins = Bins::new(0.0, 1.0, n_bins)?;
    let stat = TestStatistic::AbsCorrelation;
    let split = |d: &Dataset| {
        let x: Vec<f64> = (0..d.len()).map(|i| d.x(i)[0]).collect();
        let w: Vec<f64> = (0..d.len()).map(|i| d.x(i)[1]).collect();
        (x, w)
    };
    let reports = ctx.run(r, |rng, t| {
        let budget = |rng: &mut Rng| PermutationBudget::Sampled { m: perms, seed: rng.random() };
        let d = discrete_null.draw(rng, n)?;
        let (x, w) = split(&d);
        t.coverage.push(local_permutation_test(&x, d.ys(), &w, &stat, budget(rng), level)?.reject);
        let d = smooth_null.draw(rng, n)?;
        let (x, w) = split(&d);
        let res = binned_local_permutation_test(&x, d.ys(), &w, &stat, &bins, Some(lipschitz), budget(rng), level)?;
        t.coverage.push(res.reject);
        t.loss.push(res.inflation.unwrap_or(f64::NAN));
        let d = alternative.draw(rng, n)?;
        let (x, w) = split(&d);
        t.coverage.push(local_permutation_test(&x, d.ys(), &w, &stat, budget(rng), level)?.reject);
        Ok(())
    })?;
    let band = binomial_3sigma(alpha, r);
    let inflation = reports[0].loss[0];
    let checks = vec![
        Check::new("discrete_null_type_i", rate(&reports, 0), 0.0, alpha + band),
        Check::new("binned_smooth_null_type_i", rate(&reports, 1), 0.0, alpha + inflation + band),
        Check::info("binned_smooth_null_type_i_without_inflation", rate(&reports, 1), 0.0, alpha + band),
        Check::info("power_dependent_alternative", rate(&reports, 2), 0.5, 1.0),
    ];
    Ok((
        json!({ "n": n, "permutations": perms, "alpha": alpha, "bins": n_bins, "lipschitz": lipschitz, "inflation": inflation, "discrete_null": discrete_null, "smooth_null": smooth_null, "alternative": alternative }),
        checks,
    ))
}

/// Coverage slot 0: interval contains `mu(X_{n+1})`. Measure slot 0: interval length.
fn regression_ci_suite(ctx: &Ctx, r: usize) -> SuiteOutput {
    let (k, n, alpha) = (10usize, 2000usize, 0.1);
    let level = Level::new(alpha)?;
    let sc = Scenario::DiscreteRegression { k };
    let reports = ctx.run(r, |rng, t| {
        let train = sc.draw(rng, n)?;
        let x = sc.draw(rng, 1)?.x(0).to_vec();
        let ci = regression_ci(&train, &x, level, &RegressionMethod::Discrete, (0.0, 1.0))?;
        let mu = sc.true_mean(&x).expect("closed form");
        t.coverage.push(ci.lo <= mu && mu <= ci.hi);
        t.measure.push(ci.hi - ci.lo);
        Ok(())
    })?;
    let length_bound = 2.0 * (2.0 / alpha).ln().sqrt() * (k as f64 / n as f64).sqrt();
    let checks = vec![
        Check::new("non_coverage", 1.0 - rate(&reports, 0), 0.0, alpha + 0.01),
        Check::new("mean_length", mean(reports.iter().map(|t| t.measure[0])), 0.0, length_bound),
    ];
    Ok((json!({ "k": k, "n": n, "alpha": alpha, "range": [0.0, 1.0], "scenario": sc }), checks))
}
