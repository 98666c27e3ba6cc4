//! Weighted conformal prediction under known distribution shift, fixed-weight
//! conformal, and kernel-localized variants.
//!
//! Likelihood ratios are supplied by the caller and only need to be known up to a
//! constant. A zero total ratio is an error: silently falling back to uniform
//! weights would misstate the guarantee.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::conformal::{pretrained_set, refit_candidates, score_all, Level, PredictionSet, YDomain};
use crate::error::{Error, Result};
use crate::quantile_core::{WeightedEmpirical, WEIGHT_TOL};
use crate::rng::{rng_from_seed, Rng};
use crate::scores::{Dataset, ScoreFunction};

type CovFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type LabelFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type JointFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// `dQ/dP` up to a constant.
#[derive(Clone)]
pub enum LikelihoodRatio {
    Covariate(CovFn),
    Label(LabelFn),
    Joint(JointFn),
}

impl fmt::Debug for LikelihoodRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Covariate(_) => "LikelihoodRatio::Covariate",
            Self::Label(_) => "LikelihoodRatio::Label",
            Self::Joint(_) => "LikelihoodRatio::Joint",
        })
    }
}

impl LikelihoodRatio {
    pub fn covariate(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::Covariate(Arc::new(f))
    }

    pub fn label(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Label(Arc::new(f))
    }

    pub fn joint(f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Joint(Arc::new(f))
    }

    pub fn uniform() -> Self {
        Self::covariate(|_| 1.0)
    }

    pub fn eval(&self, x: &[f64], y: f64) -> f64 {
        match self {
            Self::Covariate(f) => f(x),
            Self::Label(f) => f(y),
            Self::Joint(f) => f(x, y),
        }
    }

    fn is_covariate(&self) -> bool {
        matches!(self, Self::Covariate(_))
    }
}

fn normalize(raw: Vec<f64>) -> Result<Vec<f64>> {
    if let Some((i, &v)) = raw.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidWeights(format!("ratio {v} at index {i} is not finite and nonnegative")));
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidWeights("likelihood ratios sum to zero".into()));
    }
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Self-normalized weights `w_1, ..., w_{n+1}`; the last is the test point `(test_x, hyp_y)`.
pub fn shift_weights(lr: &LikelihoodRatio, train: &Dataset, test_x: &[f64], hyp_y: f64) -> Result<Vec<f64>> {
    let raw = train.rows().map(|(x, y)| lr.eval(x, y)).chain([lr.eval(test_x, hyp_y)]).collect();
    normalize(raw)
}

/// Whether `v <= Quantile(sum_i w_i delta_{S_i} + w_{n+1} delta_v; 1 - alpha)`.
fn weighted_member(scores: &[f64], w: &[f64], v: f64, level: Level) -> Result<bool> {
    let atoms: Vec<(f64, f64)> = scores.iter().copied().chain([v]).zip(w.iter().copied()).collect();
    Ok(v <= WeightedEmpirical::new(atoms)?.quantile(1.0 - level.alpha()))
}

/// `Quantile(sum_{i<=n} w_i delta_{S_i} + w_{n+1} delta_{+inf}; 1 - alpha)`.
pub fn weighted_split_threshold(scores: &[f64], w: &[f64], level: Level) -> Result<f64> {
    if w.len() != scores.len() + 1 {
        return Err(Error::DimensionMismatch { expected: scores.len() + 1, got: w.len() });
    }
    weighted_threshold_with_last(scores, w, f64::INFINITY, level)
}

fn weighted_threshold_with_last(scores: &[f64], w: &[f64], last: f64, level: Level) -> Result<f64> {
    let atoms: Vec<(f64, f64)> = scores.iter().copied().chain([last]).zip(w.iter().copied()).collect();
    Ok(WeightedEmpirical::new(atoms)?.quantile(1.0 - level.alpha()))
}

/// Weighted full conformal set. For covariate shift with a pretrained score the
/// weights do not depend on the candidate and the set is computed without refits.
pub fn weighted_full_set(
    s: &ScoreFunction,
    train: &Dataset,
    x: &[f64],
    level: Level,
    lr: &LikelihoodRatio,
    domain: &YDomain,
) -> Result<PredictionSet> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if let (ScoreFunction::Pretrained(score), true) = (s, lr.is_covariate()) {
        let w = shift_weights(lr, train, x, f64::NAN)?;
        let scores = score_all(score, train)?;
        return pretrained_set(score, x, domain, &scores, |v| weighted_member(&scores, &w, v, level));
    }
    refit_candidates(s, train, x, domain, |tr, test, aug| {
        let w = shift_weights(lr, train, x, aug.y(tr.len()))?;
        weighted_member(tr, &w, test, level)
    })
}

/// Weighted split conformal set: the test weight sits on a `+inf` atom.
pub fn weighted_split_set(
    s: &ScoreFunction,
    cal: &Dataset,
    x: &[f64],
    level: Level,
    lr: &LikelihoodRatio,
    domain: &YDomain,
) -> Result<PredictionSet> {
    let ScoreFunction::Pretrained(score) = s else {
        return Err(crate::error::invalid("weighted split conformal needs a pretrained score"));
    };
    if cal.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let scores = score_all(score, cal)?;
    if lr.is_covariate() {
        let w = shift_weights(lr, cal, x, f64::NAN)?;
        let q = weighted_split_threshold(&scores, &w, level)?;
        return crate::conformal::sublevel_set(score, x, q, domain);
    }
    crate::conformal::set_over_candidates(domain, |y| {
        let w = shift_weights(lr, cal, x, y)?;
        Ok(score.eval(x, y)? <= weighted_split_threshold(&scores, &w, level)?)
    })
}

/// Data-independent weights with `w_{n+1} >= max_i w_i` and unit sum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedWeights(Vec<f64>);

impl FixedWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::InvalidWeights("need at least one training weight and a test weight".into()));
        }
        if let Some((i, &v)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidWeights(format!("weight {v} at index {i} is not finite and nonnegative")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {total}, not 1")));
        }
        let last = w[w.len() - 1];
        if w[..w.len() - 1].iter().any(|&v| v > last) {
            return Err(Error::InvalidWeights("test weight must be at least every training weight".into()));
        }
        Ok(Self(w))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / (n + 1) as f64; n + 1])
    }

    /// `w_i proportional to rho^{n+1-i}` for `i <= n` and `w_{n+1}` proportional to 1.
    pub fn geometric(n: usize, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidWeights(format!("decay must lie in (0,1], got {rho}")));
        }
        let raw: Vec<f64> = (1..=n + 1).map(|i| rho.powi((n + 1 - i) as i32)).collect();
        let total: f64 = raw.iter().sum();
        Self::new(raw.into_iter().map(|v| v / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Fixed-weight conformal set.
pub fn fixed_weight_set(
    s: &ScoreFunction,
    train: &Dataset,
    x: &[f64],
    level: Level,
    w: &FixedWeights,
    domain: &YDomain,
) -> Result<PredictionSet> {
    if w.0.len() != train.len() + 1 {
        return Err(Error::DimensionMismatch { expected: train.len() + 1, got: w.0.len() });
    }
    if let ScoreFunction::Pretrained(score) = s {
        let scores = score_all(score, train)?;
        return pretrained_set(score, x, domain, &scores, |v| weighted_member(&scores, &w.0, v, level));
    }
    refit_candidates(s, train, x, domain, |tr, test, _| weighted_member(tr, &w.0, test, level))
}

type KernelFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Localization kernel `H(x, x') >= 0`.
#[derive(Clone)]
pub struct LocalizationKernel {
    h: KernelFn,
    /// Declared upper bound on `H`, if any.
    pub bound: Option<f64>,
}

impl fmt::Debug for LocalizationKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalizationKernel").field("bound", &self.bound).finish()
    }
}

impl LocalizationKernel {
    pub fn new(h: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { h: Arc::new(h), bound: None }
    }

    /// `exp(-|x - x'|^2 / (2 h^2))`, bounded by one.
    pub fn gaussian(bandwidth: f64) -> Self {
        let two_h2 = 2.0 * bandwidth * bandwidth;
        Self {
            h: Arc::new(move |a, b| (-a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / two_h2).exp()),
            bound: Some(1.0),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let v = (self.h)(a, b);
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidWeights(format!("kernel value {v} is not finite and nonnegative")));
        }
        if let Some(bd) = self.bound {
            if v > bd {
                return Err(Error::InvalidWeights(format!("kernel value {v} exceeds declared bound {bd}")));
            }
        }
        Ok(v)
    }
}

/// Row-normalized kernel matrix `w_{ij} = H(X_j, X_i) / sum_j' H(X_j', X_i)` over `n + 1` points.
fn kernel_matrix(k: &LocalizationKernel, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    xs.iter()
        .map(|xi| {
            let raw = xs.iter().map(|xj| k.eval(xj, xi)).collect::<Result<Vec<_>>>()?;
            normalize(raw).map_err(|_| Error::InvalidWeights("kernel row sums to zero".into()))
        })
        .collect()
}

/// Localized membership of the last point given all `n + 1` scores.
fn localized_member(w: &[Vec<f64>], scores: &[f64], level: Level) -> bool {
    let m = scores.len();
    let tilde: Vec<f64> = (0..m)
        .map(|i| (0..m).filter(|&j| scores[j] < scores[i]).map(|j| w[i][j]).sum())
        .collect();
    let q = crate::quantile_core::quantile_of(&tilde, 1.0 - level.alpha());
    tilde[m - 1] <= q
}

/// Localized conformal set with rank recalibration of the kernel-weighted scores.
pub fn localized_set(
    s: &ScoreFunction,
    train: &Dataset,
    x: &[f64],
    level: Level,
    kernel: &LocalizationKernel,
    domain: &YDomain,
) -> Result<PredictionSet> {
    train.check_dim(x)?;
    let n = train.len();
    let xs: Vec<&[f64]> = (0..n).map(|i| train.x(i)).chain([x]).collect();
    let w = kernel_matrix(kernel, &xs)?;
    let mut all = vec![0.0; n + 1];
    if let ScoreFunction::Pretrained(score) = s {
        let scores = score_all(score, train)?;
        all[..n].copy_from_slice(&scores);
        return pretrained_set(score, x, domain, &scores, |v| {
            all[n] = v;
            Ok(localized_member(&w, &all, level))
        });
    }
    refit_candidates(s, train, x, domain, |tr, test, _| {
        all[..n].copy_from_slice(tr);
        all[n] = test;
        Ok(localized_member(&w, &all, level))
    })
}

/// Draws `x~` from the density `H(x, .)`.
pub type KernelSampler = dyn Fn(&[f64], &mut Rng) -> Result<Vec<f64>> + Send + Sync;

/// Sampler for the Gaussian kernel: `x + bandwidth * N(0, I)`.
pub fn gaussian_sampler(bandwidth: f64) -> impl Fn(&[f64], &mut Rng) -> Result<Vec<f64>> + Send + Sync {
    move |x, rng| {
        use rand::Rng as _;
        Ok(x.iter().map(|&v| v + bandwidth * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
    }
}

/// Randomly-localized conformal set. Returns the drawn center `x~` for audit.
#[allow(clippy::too_many_arguments)]
pub fn randomly_localized_set(
    s: &ScoreFunction,
    train: &Dataset,
    x: &[f64],
    level: Level,
    kernel: &LocalizationKernel,
    sampler: &KernelSampler,
    seed: u64,
    domain: &YDomain,
) -> Result<(PredictionSet, Vec<f64>)> {
    let mut rng = rng_from_seed(seed);
    let center = sampler(x, &mut rng).map_err(|e| Error::Sampler(e.to_string()))?;
    if center.len() != x.len() {
        return Err(Error::Sampler(format!("sampler returned dimension {}, expected {}", center.len(), x.len())));
    }
    let k = kernel.clone();
    let c = center.clone();
    let lr = LikelihoodRatio::covariate(move |xi| (k.h)(xi, &c));
    // Validate kernel values once up front so failures surface as weight errors.
    for (xi, _) in train.rows() {
        kernel.eval(xi, &center)?;
    }
    kernel.eval(x, &center)?;
    let set = weighted_full_set(s, train, x, level, &lr, domain)?;
    Ok((set, center))
}

/// `weighted_full_set` threshold at a single candidate, exposed for diagnostics.
pub fn weighted_threshold(scores_with_test: &[f64], w: &[f64], level: Level) -> Result<f64> {
    let n = scores_with_test.len();
    if n == 0 || w.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: w.len() });
    }
    weighted_threshold_with_last(&scores_with_test[..n - 1], w, scores_with_test[n - 1], level)
}
