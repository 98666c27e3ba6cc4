//! Conformal risk control for monotone losses, conformal outlier p-values,
//! and multiple-testing corrections.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conformal::{Level, PValue};
use crate::error::{invalid, Error, Result};
use crate::quantile_core::{above_one, FiniteSample, REL_TOL};

/// Calibration losses `L_i(lambda) = L(Y_i, C_lambda(X_i))`, each in `[0,1]`,
/// nonincreasing and right-continuous in `lambda`, with `L_i(lambda_max) = 0`.
pub trait MonotoneLossFamily: Sync {
    fn n(&self) -> usize;
    fn loss(&self, i: usize, lambda: f64) -> f64;
    /// `(lambda_min, lambda_max)`.
    fn range(&self) -> (f64, f64);
    /// Finite set of `lambda` values where the empirical risk can change.
    /// When present the search is an exact scan; otherwise bisection.
    fn grid(&self) -> Option<Vec<f64>> {
        None
    }
}

/// `L_i(lambda) = 1{S_i > lambda}`. Calibrating it reproduces split conformal.
#[derive(Debug, Clone, PartialEq)]
pub struct MiscoverageLoss {
    scores: Vec<f64>,
}

impl MiscoverageLoss {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        Ok(Self { scores: FiniteSample::new(scores)?.values().to_vec() })
    }
}

impl MonotoneLossFamily for MiscoverageLoss {
    fn n(&self) -> usize {
        self.scores.len()
    }
    fn loss(&self, i: usize, lambda: f64) -> f64 {
        f64::from(u8::from(self.scores[i] > lambda))
    }
    fn range(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
    fn grid(&self) -> Option<Vec<f64>> {
        Some(self.scores.clone())
    }
}

/// Coordinatewise miscoverage `(1/d) sum_j 1{s_ij > lambda}` for a product set whose
/// `j`-th factor is `{y_j : s_j(x, y_j) <= lambda}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatewiseLoss {
    scores: Vec<Vec<f64>>,
}

impl CoordinatewiseLoss {
    /// `scores[i][j]` is the score of coordinate `j` of calibration point `i`.
    pub fn new(scores: Vec<Vec<f64>>) -> Result<Self> {
        let d = scores.first().map(Vec::len).ok_or(Error::Empty("calibration scores"))?;
        if d == 0 {
            return Err(invalid("need at least one coordinate"));
        }
        for row in &scores {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            if let Some((index, &value)) = row.iter().enumerate().find(|(_, v)| v.is_nan()) {
                return Err(Error::NonFinite { index, value });
            }
        }
        Ok(Self { scores })
    }
}

impl MonotoneLossFamily for CoordinatewiseLoss {
    fn n(&self) -> usize {
        self.scores.len()
    }
    fn loss(&self, i: usize, lambda: f64) -> f64 {
        let row = &self.scores[i];
        row.iter().filter(|&&s| s > lambda).count() as f64 / row.len() as f64
    }
    fn range(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
    fn grid(&self) -> Option<Vec<f64>> {
        Some(self.scores.concat())
    }
}

pub type LossFn = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// A loss family given by a closure over a finite `lambda` range.
#[derive(Clone)]
pub struct CustomLoss {
    n: usize,
    range: (f64, f64),
    grid: Option<Vec<f64>>,
    f: LossFn,
}

impl fmt::Debug for CustomLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLoss").field("n", &self.n).field("range", &self.range).finish()
    }
}

impl CustomLoss {
    pub fn new(n: usize, range: (f64, f64), f: impl Fn(usize, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { n, range, grid: None, f: Arc::new(f) }
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.grid = Some(grid);
        self
    }
}

impl MonotoneLossFamily for CustomLoss {
    fn n(&self) -> usize {
        self.n
    }
    fn loss(&self, i: usize, lambda: f64) -> f64 {
        (self.f)(i, lambda)
    }
    fn range(&self) -> (f64, f64) {
        self.range
    }
    fn grid(&self) -> Option<Vec<f64>> {
        self.grid.clone()
    }
}

/// Points used to spot-check monotonicity when a family has no grid.
const SPOT_CHECKS: usize = 33;
const BISECT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCalibration {
    pub lambda: f64,
    /// False when `alpha - (1 - alpha)/n < 0`; `lambda` is then `lambda_max`.
    pub feasible: bool,
    /// Empirical risk at `lambda`.
    pub empirical_risk: f64,
}

fn total_loss(family: &dyn MonotoneLossFamily, lambda: f64) -> f64 {
    (0..family.n()).map(|i| family.loss(i, lambda)).sum()
}

/// Sorted, deduplicated search points: `lambda_min`, the grid inside the range, `lambda_max`.
fn search_points(family: &dyn MonotoneLossFamily) -> Option<Vec<f64>> {
    let (lo, hi) = family.range();
    let mut g: Vec<f64> = family.grid()?.into_iter().filter(|v| *v >= lo && *v <= hi).collect();
    g.push(lo);
    g.push(hi);
    g.sort_by(f64::total_cmp);
    g.dedup();
    Some(g)
}

fn validate(family: &dyn MonotoneLossFamily) -> Result<()> {
    let n = family.n();
    if n == 0 {
        return Err(Error::Empty("calibration losses"));
    }
    let (lo, hi) = family.range();
    if !(lo < hi) {
        return Err(invalid(format!("lambda range must satisfy min < max, got ({lo}, {hi})")));
    }
    let pts = match search_points(family) {
        Some(g) => g,
        None => {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::Unsupported("bisection needs a finite lambda range or a grid".into()));
            }
            (0..SPOT_CHECKS).map(|j| lo + (hi - lo) * j as f64 / (SPOT_CHECKS - 1) as f64).collect()
        }
    };
    for i in 0..n {
        let mut prev = f64::INFINITY;
        for &l in &pts {
            let v = family.loss(i, l);
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("loss {v} of point {i} at lambda={l} lies outside [0,1]")));
            }
            if v > prev {
                return Err(invalid(format!("loss of point {i} increases at lambda={l}")));
            }
            prev = v;
        }
        if family.loss(i, hi) != 0.0 {
            return Err(invalid(format!("loss of point {i} at lambda_max is not zero")));
        }
    }
    Ok(())
}

/// `lambda_hat = inf{lambda : R_hat(lambda) <= alpha - (1 - alpha)/n}`.
///
/// The target is checked as `n - sum_i L_i(lambda) >= n (1 - alpha)(1 + 1/n)` with the
/// same rank slack as [`crate::conformal::split_threshold`], so the miscoverage loss
/// reproduces the split threshold bit for bit.
pub fn risk_calibrate(family: &dyn MonotoneLossFamily, level: Level) -> Result<RiskCalibration> {
    validate(family)?;
    let n = family.n();
    let (lo, hi) = family.range();
    let tau = level.conformal_tau(n);
    let finish = |lambda: f64, feasible: bool| RiskCalibration {
        lambda,
        feasible,
        empirical_risk: total_loss(family, lambda) / n as f64,
    };
    if above_one(tau) {
        return Ok(finish(hi, false));
    }
    let need = tau * (1.0 - REL_TOL) * n as f64;
    let ok = |lambda: f64| n as f64 - total_loss(family, lambda) >= need;
    if let Some(pts) = search_points(family) {
        let first = pts.partition_point(|&l| !ok(l));
        return Ok(finish(pts.get(first).copied().unwrap_or(hi), true));
    }
    if ok(lo) {
        return Ok(finish(lo, true));
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > BISECT_TOL * (1.0f64).max(a.abs()).max(b.abs()) {
        let mid = 0.5 * (a + b);
        if ok(mid) {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(finish(b, true))
}

/// Conformal outlier p-values `p_i = (1 + #{j : S'_i <= S_j}) / (n + 1)`.
pub fn outlier_pvalues(cal: &FiniteSample, test: &FiniteSample) -> Vec<PValue> {
    let sorted = cal.sorted();
    let n = sorted.len();
    test.values()
        .iter()
        .map(|&t| {
            let at_least = n - sorted.partition_point(|&s| s < t);
            PValue { value: (1 + at_least) as f64 / (n + 1) as f64, xi: None }
        })
        .collect()
}

/// Rejected hypotheses (0-based, ascending) and the p-value cutoff used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSet {
    pub indices: Vec<usize>,
    pub threshold: f64,
}

fn check_pvalues(p: &[f64]) -> Result<()> {
    match p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        Some((index, &value)) => Err(invalid(format!("p-value {value} at index {index} lies outside [0,1]"))),
        None => Ok(()),
    }
}

/// Benjamini-Hochberg at FDR level `q`: rejects `p_i <= q k_hat / m` where
/// `k_hat = max{k : #{p_i <= q k / m} >= k}`; ties at the cutoff are rejected.
pub fn bh_procedure(p: &[f64], q: f64) -> Result<RejectionSet> {
    check_pvalues(p)?;
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("FDR level must lie in [0,1], got {q}")));
    }
    let m = p.len();
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k_hat = (1..=m).rev().find(|&k| sorted[k - 1] <= q * k as f64 / m as f64).unwrap_or(0);
    let threshold = if k_hat == 0 { 0.0 } else { q * k_hat as f64 / m as f64 };
    let indices = if k_hat == 0 { Vec::new() } else { (0..m).filter(|&i| p[i] <= threshold).collect() };
    Ok(RejectionSet { indices, threshold })
}

/// Per-test level `1 - (1 - alpha_fwer)^(1/m)`.
pub fn fwer_level(m: usize, fwer: f64) -> Result<f64> {
    if m == 0 {
        return Err(invalid("need at least one test"));
    }
    if !(0.0..1.0).contains(&fwer) {
        return Err(invalid(format!("FWER target must lie in [0,1), got {fwer}")));
    }
    Ok(-((1.0 - fwer).ln() / m as f64).exp_m1())
}

/// Rejects `p_i <= fwer_level(m, fwer)`.
pub fn fwer_reject(p: &[f64], fwer: f64) -> Result<RejectionSet> {
    check_pvalues(p)?;
    let threshold = fwer_level(p.len(), fwer)?;
    Ok(RejectionSet { indices: (0..p.len()).filter(|&i| p[i] <= threshold).collect(), threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::split_threshold;
    use proptest::prelude::*;

    fn lvl(a: f64) -> Level {
        Level::new(a).unwrap()
    }

    #[test]
    fn zero_loss_gives_lambda_min() {
        let f = CustomLoss::new(20, (0.0, 1.0), |_, _| 0.0);
        let r = risk_calibrate(&f, lvl(0.1)).unwrap();
        assert_eq!(r.lambda, 0.0);
        assert!(r.feasible);
    }

    #[test]
    fn infeasible_returns_max_with_flag() {
        let f = MiscoverageLoss::new(vec![1.0, 2.0, 3.0]).unwrap();
        let r = risk_calibrate(&f, lvl(0.2)).unwrap();
        assert_eq!(r.lambda, f64::INFINITY);
        assert!(!r.feasible);
    }

    #[test]
    fn bisection_on_smooth_loss() {
        // L_i(lambda) = max(0, 1 - lambda * c_i) on [0, 10], c_i in {1, 2}.
        let f = CustomLoss::new(10, (0.0, 10.0), |i, l| (1.0 - l * (1 + i % 2) as f64).max(0.0));
        let r = risk_calibrate(&f, lvl(0.3)).unwrap();
        // Target 0.3 - 0.07 = 0.23. Risk is 1 - 1.5 lambda up to 0.5 (value 0.25), then (1 - lambda)/2.
        assert!((r.lambda - 0.54).abs() < 1e-8, "{r:?}");
    }

    #[test]
    fn validation_rejects_bad_families() {
        assert!(risk_calibrate(&CustomLoss::new(2, (0.0, 1.0), |_, l| l), lvl(0.1)).is_err());
        assert!(risk_calibrate(&CustomLoss::new(2, (0.0, 1.0), |_, _| 2.0), lvl(0.1)).is_err());
        assert!(risk_calibrate(&CustomLoss::new(2, (0.0, 1.0), |_, l| 0.5 * (1.0 - l) + 0.1), lvl(0.1)).is_err());
        assert!(risk_calibrate(&CustomLoss::new(2, (0.0, f64::INFINITY), |_, _| 0.0), lvl(0.1)).is_err());
    }

    #[test]
    fn coordinatewise_loss() {
        let f = CoordinatewiseLoss::new(vec![vec![0.1, 0.5], vec![0.2, 0.9], vec![0.3, 0.4]]).unwrap();
        assert_eq!(f.loss(0, 0.2), 0.5);
        let r = risk_calibrate(&f, lvl(0.5)).unwrap();
        // Target 0.5 - 0.5/3 = 1/3: the risk first drops to 1/3 at lambda = 0.4.
        assert_eq!(r.lambda, 0.4);
    }

    #[test]
    fn outlier_pvalue_extremes() {
        let cal = FiniteSample::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = outlier_pvalues(&cal, &FiniteSample::new(vec![10.0, 0.0, 3.0]).unwrap());
        assert_eq!(p[0].value, 0.2);
        assert_eq!(p[1].value, 1.0);
        assert_eq!(p[2].value, 3.0 / 5.0);
        let same = FiniteSample::new(vec![2.0; 4]).unwrap();
        assert_eq!(outlier_pvalues(&same, &FiniteSample::new(vec![2.0]).unwrap())[0].value, 1.0);
    }

    #[test]
    fn bh_examples() {
        let r = bh_procedure(&[0.01, 0.02, 0.9], 0.1).unwrap();
        assert_eq!(r.indices, vec![0, 1]);
        assert!((r.threshold - 0.2 / 3.0).abs() < 1e-15);
        assert!(bh_procedure(&[1.0; 5], 0.1).unwrap().indices.is_empty());
        assert!(bh_procedure(&[0.5, 1.2], 0.1).is_err());
        // Step-up: p_(2) passes even though p_(1) alone would not pass at k=1.
        assert_eq!(bh_procedure(&[0.04, 0.05], 0.1).unwrap().indices, vec![0, 1]);
    }

    #[test]
    fn fwer_examples() {
        assert!((fwer_level(1, 0.1).unwrap() - 0.1).abs() < 1e-15);
        let v = fwer_level(20, 0.1).unwrap();
        assert!((v - (1.0 - 0.9f64.powf(0.05))).abs() < 1e-15);
        assert!((v - 0.005_254).abs() < 1e-6);
        assert!(fwer_level(0, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn miscoverage_matches_split(scores in prop::collection::vec(-5.0f64..5.0, 1..60), a in 0.001f64..0.999, ties in any::<bool>()) {
            let scores: Vec<f64> = if ties { scores.iter().map(|s| s.round()).collect() } else { scores };
            let r = risk_calibrate(&MiscoverageLoss::new(scores.clone()).unwrap(), lvl(a)).unwrap();
            let q = split_threshold(&FiniteSample::new(scores).unwrap(), lvl(a));
            prop_assert_eq!(r.lambda.to_bits(), q.to_bits());
        }

        #[test]
        fn lambda_nonincreasing_in_alpha(scores in prop::collection::vec(0.0f64..1.0, 1..40), a in 0.01f64..0.9, d in 0.0f64..0.09) {
            let f = MiscoverageLoss::new(scores).unwrap();
            prop_assert!(risk_calibrate(&f, lvl(a + d)).unwrap().lambda <= risk_calibrate(&f, lvl(a)).unwrap().lambda);
        }

        #[test]
        fn bh_monotone(p in prop::collection::vec(0.0f64..=1.0, 1..30), i in any::<prop::sample::Index>(), shrink in 0.0f64..1.0, q in 0.01f64..0.5) {
            let base = bh_procedure(&p, q).unwrap();
            let mut lower = p.clone();
            let j = i.index(p.len());
            lower[j] *= shrink;
            let after = bh_procedure(&lower, q).unwrap();
            prop_assert!(base.indices.iter().all(|k| after.indices.contains(k)));
        }

        #[test]
        fn bh_matches_count_definition(p in prop::collection::vec(0.0f64..=1.0, 1..30), q in 0.01f64..0.5) {
            let m = p.len();
            let k_hat = (0..=m).rev().find(|&k| k == 0 || p.iter().filter(|&&v| v <= q * k as f64 / m as f64).count() >= k).unwrap();
            prop_assert_eq!(bh_procedure(&p, q).unwrap().indices.len(), if k_hat == 0 { 0 } else { p.iter().filter(|&&v| v <= q * k_hat as f64 / m as f64).count() });
        }
    }
}
