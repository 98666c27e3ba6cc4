//! Split and full conformal prediction, conformal p-values, the least-squares
//! closed form, discretized full conformal, and PAC levels.
//!
//! Full-conformal membership is decided by counting: `y` is kept iff at least
//! `n + 1 - k` training scores are `>= S_{n+1}^y`, where `k` is the rank used by
//! [`split_threshold`]. This is the same event as `S_{n+1}^y <= q^y` and as
//! `p^y > alpha`, and it makes every full-conformal routine agree bit for bit
//! with split conformal when the score is pretrained.

mod set;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, gram, Cholesky};
use crate::quantile_core::{rank, FiniteSample, Rank};
use crate::scores::{Dataset, ScoreFunction, TrainedScore};
use crate::special::beta_cdf;

pub use set::{Interval, JsonReal, PredictionSet};

/// Target miscoverage `alpha` in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Level(f64);

impl Level {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(invalid(format!("alpha must lie in (0,1), got {alpha}")))
        }
    }

    pub fn alpha(self) -> f64 {
        self.0
    }

    /// The conformal quantile level `(1 - alpha)(1 + 1/n)`.
    pub fn conformal_tau(self, n: usize) -> f64 {
        (1.0 - self.0) * (1.0 + 1.0 / n as f64)
    }
}

impl TryFrom<f64> for Level {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Level> for f64 {
    fn from(l: Level) -> f64 {
        l.0
    }
}

/// A conformal p-value, with the tie-breaking draw when smoothed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
}

/// Candidate response space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "values", rename_all = "snake_case")]
pub enum YDomain {
    /// The real line. Only closed-form sublevel sets are supported.
    Real,
    /// A sorted grid of real candidates, used when no closed form exists.
    /// Runs of consecutive accepted points become closed intervals.
    Grid(Vec<f64>),
    /// Labels `0..K`.
    Labels(usize),
}

impl YDomain {
    pub fn grid(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("candidate grid"));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        values.sort_by(|a, b| a.total_cmp(b));
        values.dedup();
        Ok(Self::Grid(values))
    }

    /// Finite candidate list, `None` for the real line.
    pub fn candidates(&self) -> Option<Vec<f64>> {
        match self {
            Self::Real => None,
            Self::Grid(g) => Some(g.clone()),
            Self::Labels(k) => Some((0..*k).map(|l| l as f64).collect()),
        }
    }
}

/// `{y in domain : member(y)}` over a finite domain.
pub fn set_over_candidates(domain: &YDomain, mut member: impl FnMut(f64) -> Result<bool>) -> Result<PredictionSet> {
    match domain {
        YDomain::Real => Err(Error::Unsupported("real response space without a closed form; supply a grid".into())),
        YDomain::Labels(k) => {
            let mut mask = Vec::with_capacity(*k);
            for l in 0..*k {
                mask.push(member(l as f64)?);
            }
            Ok(PredictionSet::from_label_mask(&mask))
        }
        YDomain::Grid(g) => {
            let mut parts = Vec::new();
            let mut start: Option<f64> = None;
            let mut last = f64::NAN;
            for &y in g {
                if member(y)? {
                    start.get_or_insert(y);
                    last = y;
                } else if let Some(lo) = start.take() {
                    parts.push((lo, last));
                }
            }
            if let Some(lo) = start {
                parts.push((lo, last));
            }
            Ok(PredictionSet::from_intervals(parts))
        }
    }
}

/// `{y : s(x, y) <= q}` over `domain`, using the closed form when the score has one.
pub fn sublevel_set(score: &TrainedScore, x: &[f64], q: f64, domain: &YDomain) -> Result<PredictionSet> {
    if !matches!(domain, YDomain::Labels(_)) {
        if let Some(r) = score.sublevel(x, q) {
            return r;
        }
    }
    if matches!(domain, YDomain::Labels(_)) && q == f64::INFINITY {
        return Ok(PredictionSet::All);
    }
    set_over_candidates(domain, |y| Ok(score.eval(x, y)? <= q))
}

/// Full-conformal style set for a pretrained score whose membership depends on the
/// candidate only through `v = s(x, y)`, and is constant in `v` between training scores.
/// The allowed `v` values are found exactly and mapped back through closed-form bands
/// when available, otherwise over the domain's candidates.
pub(crate) fn pretrained_set(
    score: &TrainedScore,
    x: &[f64],
    domain: &YDomain,
    train_scores: &[f64],
    mut member_v: impl FnMut(f64) -> Result<bool>,
) -> Result<PredictionSet> {
    if !matches!(domain, YDomain::Labels(_)) && score.sublevel(x, 0.0).is_some() {
        let allowed = PredictionSet::from_breakpoints(train_scores.to_vec(), &mut member_v)?;
        return match allowed {
            PredictionSet::All => Ok(PredictionSet::All),
            PredictionSet::Empty => Ok(PredictionSet::Empty),
            PredictionSet::Intervals(v) => {
                let mut parts = Vec::with_capacity(v.len());
                for iv in v {
                    parts.push(score.band(x, iv.lo, iv.hi).expect("closed form checked above")?);
                }
                Ok(union(parts))
            }
            PredictionSet::Labels(_) => unreachable!("breakpoint sets are interval sets"),
        };
    }
    set_over_candidates(domain, |y| member_v(score.eval(x, y)?))
}

/// Evaluates `member(train_scores, test_score, augmented_data)` for every candidate,
/// refitting the score on the augmented dataset each time.
pub(crate) fn refit_candidates(
    s: &ScoreFunction,
    train: &Dataset,
    x: &[f64],
    domain: &YDomain,
    mut member: impl FnMut(&[f64], f64, &Dataset) -> Result<bool>,
) -> Result<PredictionSet> {
    let n = train.len();
    set_over_candidates(domain, |y| {
        let aug = train.augmented(x, y)?;
        let fitted = s.fit(&aug).map_err(|e| Error::FitAt { y, source: Box::new(e) })?;
        let scores = score_all(&fitted, &aug)?;
        member(&scores[..n], scores[n], &aug)
    })
}

/// `Quantile(cal_scores; (1 - alpha)(1 + 1/n))`; `+inf` when that level exceeds one.
pub fn split_threshold(cal_scores: &FiniteSample, level: Level) -> f64 {
    cal_scores.quantile(level.conformal_tau(cal_scores.len()))
}

/// Minimum number of training scores `>= S_{n+1}` for a candidate to be kept;
/// `None` when every candidate is kept.
pub(crate) fn required_count(n: usize, level: Level) -> Option<usize> {
    match rank(n, level.conformal_tau(n)) {
        Rank::PosInf => None,
        Rank::NegInf => Some(0),
        Rank::At(k) => Some(n + 1 - k),
    }
}

/// Full-conformal membership from the training scores and the test score.
pub(crate) fn conformal_member(train_scores: &[f64], test: f64, need: Option<usize>) -> bool {
    match need {
        None => true,
        Some(c) => train_scores.iter().filter(|&&s| s >= test).count() >= c,
    }
}

pub(crate) fn score_all(score: &TrainedScore, data: &Dataset) -> Result<Vec<f64>> {
    data.rows().map(|(x, y)| score.eval(x, y)).collect()
}

/// Split conformal set for a pretrained score calibrated on `cal`.
pub fn split_set(s: &ScoreFunction, cal: &Dataset, x: &[f64], level: Level, domain: &YDomain) -> Result<PredictionSet> {
    let ScoreFunction::Pretrained(score) = s else {
        return Err(invalid("split conformal needs a pretrained score"));
    };
    if cal.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let scores = FiniteSample::new(score_all(score, cal)?)?;
    sublevel_set(score, x, split_threshold(&scores, level), domain)
}

/// `(1 + #{i <= n : S_i >= S_{n+1}}) / (n + 1)`; the last element is the test score.
pub fn conformal_pvalue(scores_with_test: &FiniteSample) -> PValue {
    let v = scores_with_test.values();
    let (test, train) = v.split_last().expect("FiniteSample is nonempty");
    let count = train.iter().filter(|&&s| s >= *test).count();
    PValue { value: (1 + count) as f64 / v.len() as f64, xi: None }
}

/// `(#{S_i > S_{n+1}} + xi #{S_i = S_{n+1}}) / (n + 1)` with ties counted over all `n + 1` scores.
pub fn smoothed_pvalue(scores_with_test: &FiniteSample, xi: f64) -> Result<PValue> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(invalid(format!("xi must lie in [0,1], got {xi}")));
    }
    let v = scores_with_test.values();
    let test = v[v.len() - 1];
    let greater = v.iter().filter(|&&s| s > test).count();
    let ties = v.iter().filter(|&&s| s == test).count();
    Ok(PValue { value: (greater as f64 + xi * ties as f64) / v.len() as f64, xi: Some(xi) })
}

/// Full conformal over a finite domain (labels or a real grid), refitting at every candidate.
pub fn full_set_finite(s: &ScoreFunction, train: &Dataset, x: &[f64], level: Level, domain: &YDomain) -> Result<PredictionSet> {
    if matches!(domain, YDomain::Real) {
        return Err(Error::Unsupported("full conformal needs a finite candidate set".into()));
    }
    let n = train.len();
    let need = required_count(n, level);
    if need.is_none() {
        return Ok(PredictionSet::All);
    }
    refit_candidates(s, train, x, domain, |tr, test, _| Ok(conformal_member(tr, test, need)))
}

/// Coefficients `(a, b)` in `R^{n+1}` such that the least-squares fit on the
/// augmented data, evaluated at row `i`, equals `a_i + b_i y`.
/// `b` is the last column of the augmented hat matrix.
pub fn least_squares_coefficients(train: &Dataset, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    train.check_dim(x)?;
    let d = x.len();
    let n = train.len();
    let rows: Vec<&[f64]> = (0..n).map(|i| train.x(i)).chain([x]).collect();
    let chol = Cholesky::new(&gram(rows.iter().copied(), d, 0.0), d)?;
    let mut xty = vec![0.0; d];
    for (r, y) in train.rows() {
        for (acc, &v) in xty.iter_mut().zip(r) {
            *acc += v * y;
        }
    }
    let beta0 = chol.solve(&xty);
    let gx = chol.solve(x);
    Ok((rows.iter().map(|r| dot(r, &beta0)).collect(), rows.iter().map(|r| dot(r, &gx)).collect()))
}

/// Exact full conformal set for the absolute-residual score of least squares
/// (no implicit intercept). Membership is constant between the at most `2n`
/// solutions of `|Y_i - a_i - b_i y| = |(1 - b_{n+1}) y - a_{n+1}|`.
pub fn full_set_least_squares(train: &Dataset, x: &[f64], level: Level) -> Result<PredictionSet> {
    let n = train.len();
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    let (a, b) = least_squares_coefficients(train, x)?;
    let need = required_count(n, level);
    if need.is_none() {
        return Ok(PredictionSet::All);
    }
    let delta = 1.0 - b[n];
    let an = a[n];
    let resid: Vec<f64> = (0..n).map(|i| train.y(i) - a[i]).collect();
    let mut breaks = Vec::with_capacity(2 * n);
    for i in 0..n {
        // resid_i - b_i y = +((delta) y - an)  and  = -((delta) y - an)
        let plus = b[i] + delta;
        if plus != 0.0 {
            breaks.push((resid[i] + an) / plus);
        }
        let minus = b[i] - delta;
        if minus != 0.0 {
            breaks.push((resid[i] - an) / minus);
        }
    }
    let mut scores = vec![0.0; n];
    PredictionSet::from_breakpoints(breaks, |y| {
        for i in 0..n {
            scores[i] = (resid[i] - b[i] * y).abs();
        }
        let test = (delta * y - an).abs();
        Ok(conformal_member(&scores, test, need))
    })
}

/// Maps responses to grid indices by nearest grid point (ties go to the lower point).
/// Cells are the Voronoi intervals of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rounder {
    grid: Vec<f64>,
}

impl Rounder {
    pub fn nearest(grid: Vec<f64>) -> Result<Self> {
        let YDomain::Grid(grid) = YDomain::grid(grid)? else { unreachable!() };
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn round(&self, y: f64) -> usize {
        let j = self.grid.partition_point(|&g| g < y);
        if j == 0 {
            0
        } else if j == self.grid.len() || y - self.grid[j - 1] <= self.grid[j] - y {
            j - 1
        } else {
            j
        }
    }

    /// Closed hull of cell `m`.
    pub fn cell(&self, m: usize) -> (f64, f64) {
        let g = &self.grid;
        let lo = if m == 0 { f64::NEG_INFINITY } else { g[m - 1] + (g[m] - g[m - 1]) / 2.0 };
        let hi = if m + 1 == g.len() { f64::INFINITY } else { g[m] + (g[m + 1] - g[m]) / 2.0 };
        (lo, hi)
    }
}

/// Discretized full conformal: for each grid value `y_m`, a model is fitted on the
/// rounded training responses plus `(x, y_m)`, calibrated on the original responses,
/// and applied on the cell of `y_m`.
///
/// `domain` decides how the per-cell sublevel set is extracted: closed form for
/// `Real`, pointwise for `Grid` (restricted to the cell) and `Labels`.
pub fn full_set_discretized(
    s: &ScoreFunction,
    train: &Dataset,
    x: &[f64],
    level: Level,
    rounder: &Rounder,
    domain: &YDomain,
) -> Result<PredictionSet> {
    let n = train.len();
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    let rounded: Vec<f64> = train.ys().iter().map(|&y| rounder.grid[rounder.round(y)]).collect();
    let base = train.with_responses(rounded)?;
    let need = required_count(n, level);
    let mut parts: Vec<PredictionSet> = Vec::with_capacity(rounder.grid.len());
    for (m, &ym) in rounder.grid.iter().enumerate() {
        let aug = base.augmented(x, ym)?;
        let fitted = s.fit(&aug).map_err(|e| Error::FitAt { y: ym, source: Box::new(e) })?;
        let cal = FiniteSample::new(score_all(&fitted, train)?)?;
        let q = match need {
            None => f64::INFINITY,
            Some(_) => split_threshold(&cal, level),
        };
        let in_cell = |y: f64| rounder.round(y) == m;
        let piece = match domain {
            YDomain::Real => match fitted.sublevel(x, q) {
                Some(r) => {
                    let (lo, hi) = rounder.cell(m);
                    r?.clip(lo, hi)
                }
                None => return Err(Error::Unsupported("score has no closed-form sublevel set; supply a grid".into())),
            },
            _ => set_over_candidates(domain, |y| Ok(in_cell(y) && fitted.eval(x, y)? <= q))?,
        };
        parts.push(piece);
    }
    Ok(union(parts))
}

/// Union of sets over a common domain.
pub(crate) fn union(sets: Vec<PredictionSet>) -> PredictionSet {
    if sets.iter().any(|s| matches!(s, PredictionSet::All)) {
        return PredictionSet::All;
    }
    let mut labels = Vec::new();
    let mut intervals = Vec::new();
    let mut any_labels = false;
    for s in sets {
        match s {
            PredictionSet::Labels(l) => {
                any_labels = true;
                labels.extend(l);
            }
            PredictionSet::Intervals(v) => intervals.extend(v.into_iter().map(|iv| (iv.lo, iv.hi))),
            _ => {}
        }
    }
    if any_labels {
        PredictionSet::from_labels(labels)
    } else {
        PredictionSet::from_intervals(intervals)
    }
}

/// Result of [`pac_level`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacLevel {
    pub alpha_prime: f64,
    /// Set when no root exists in `(0, alpha]` and `alpha` itself is returned.
    pub at_boundary: bool,
}

/// Smallest adjustment `alpha'` with `F_{Beta((1-alpha')(n+1), alpha'(n+1))}(1 - alpha) = delta`.
pub fn pac_level(n: usize, level: Level, delta: f64) -> Result<PacLevel> {
    if n == 0 {
        return Err(Error::Empty("calibration set"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0,1), got {delta}")));
    }
    let alpha = level.alpha();
    let m = (n + 1) as f64;
    let g = |ap: f64| beta_cdf((1.0 - ap) * m, ap * m, 1.0 - alpha) - delta;
    // g increases in alpha'.
    if g(alpha) <= 0.0 {
        return Ok(PacLevel { alpha_prime: alpha, at_boundary: g(alpha).abs() > 1e-10 });
    }
    let (mut lo, mut hi) = (0.0f64, alpha);
    for _ in 0..200 {
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        let v = g(mid);
        if v.abs() <= 1e-12 {
            return Ok(PacLevel { alpha_prime: mid, at_boundary: false });
        }
        if v > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // The feasible side guarantees F <= delta.
    Ok(PacLevel { alpha_prime: lo, at_boundary: lo == 0.0 })
}
