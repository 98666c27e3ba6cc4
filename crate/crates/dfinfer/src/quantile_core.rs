//! Order statistics, empirical CDFs and quantiles of finite lists.
//!
//! Quantiles follow the left-continuous inverse convention
//! `Quantile(z; tau) = inf{v : F(v) >= tau}` with no interpolation,
//! `-inf` for `tau <= 0` and `+inf` for `tau > 1`.
//!
//! Levels such as `(1 - alpha)(1 + 1/n)` are computed in floating point, so a
//! level that is mathematically `k/n` may land one ulp above it. Every
//! cumulative-mass comparison therefore accepts `mass >= tau * (1 - REL_TOL)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative slack applied to quantile levels before rank comparisons.
pub const REL_TOL: f64 = 1e-9;

/// Tolerance on `|sum(w) - 1|` for weighted empirical distributions.
pub const WEIGHT_TOL: f64 = 1e-9;

/// True when cumulative mass `mass` reaches level `tau`.
#[inline]
pub(crate) fn meets_level(mass: f64, tau: f64) -> bool {
    mass >= tau * (1.0 - REL_TOL)
}

/// True when `tau` exceeds one after the rank slack is applied.
#[inline]
pub(crate) fn above_one(tau: f64) -> bool {
    tau * (1.0 - REL_TOL) > 1.0
}

/// Position of a quantile in a sorted list of length `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Rank {
    NegInf,
    /// 1-based order statistic index.
    At(usize),
    PosInf,
}

pub(crate) fn rank(n: usize, tau: f64) -> Rank {
    debug_assert!(n >= 1);
    if tau.is_nan() || above_one(tau) {
        return Rank::PosInf;
    }
    if tau <= 0.0 {
        return Rank::NegInf;
    }
    let k = (tau * (1.0 - REL_TOL) * n as f64).ceil();
    Rank::At((k.max(1.0) as usize).min(n))
}

/// Quantile of an already sorted slice.
pub(crate) fn quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    if sorted.is_empty() {
        return f64::INFINITY;
    }
    match rank(sorted.len(), tau) {
        Rank::NegInf => f64::NEG_INFINITY,
        Rank::PosInf => f64::INFINITY,
        Rank::At(k) => sorted[k - 1],
    }
}

/// Sorts by IEEE total order; ties keep their input order.
pub(crate) fn sort_values(values: &mut [f64]) {
    values.sort_by(|a, b| a.total_cmp(b));
}

/// Quantile of an unsorted slice. The empty list has quantile `+inf`.
pub fn quantile_of(values: &[f64], tau: f64) -> f64 {
    let mut v = values.to_vec();
    sort_values(&mut v);
    quantile_sorted(&v, tau)
}

/// A nonempty list of finite reals with a cached sorted copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSample {
    values: Vec<f64>,
    #[serde(skip)]
    sorted: Vec<f64>,
}

impl FiniteSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("sample"));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        // -0.0 + 0.0 == +0.0: one zero bit pattern keeps thresholds bitwise reproducible.
        let values: Vec<f64> = values.into_iter().map(|v| v + 0.0).collect();
        let mut sorted = values.clone();
        sort_values(&mut sorted);
        Ok(Self { values, sorted })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values in input order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values in nondecreasing order.
    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// The `k`-th smallest value, `1 <= k <= n`.
    pub fn order_statistic(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.len() {
            return Err(invalid(format!("order statistic {k} out of range 1..={}", self.len())));
        }
        Ok(self.sorted[k - 1])
    }

    /// Fraction of entries `<= v`.
    pub fn cdf(&self, v: f64) -> f64 {
        if v == f64::NEG_INFINITY {
            return 0.0;
        }
        let count = self.sorted.partition_point(|&z| z <= v);
        count as f64 / self.len() as f64
    }

    pub fn quantile(&self, tau: f64) -> f64 {
        quantile_sorted(&self.sorted, tau)
    }
}

pub fn order_statistic(s: &FiniteSample, k: usize) -> Result<f64> {
    s.order_statistic(k)
}

pub fn empirical_cdf(s: &FiniteSample, v: f64) -> f64 {
    s.cdf(v)
}

pub fn quantile(s: &FiniteSample, tau: f64) -> f64 {
    s.quantile(tau)
}

/// A discrete distribution `sum_i w_i delta_{v_i}` with at most one atom at `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEmpirical {
    /// Atoms sorted by value, ties in input order.
    atoms: Vec<(f64, f64)>,
}

impl WeightedEmpirical {
    /// Weights must be nonnegative and sum to one within [`WEIGHT_TOL`];
    /// they are renormalized exactly.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let total = Self::validate(&atoms)?;
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {total}, not 1")));
        }
        Ok(Self::build(atoms, total))
    }

    /// Normalizes arbitrary nonnegative weights; a zero total is an error.
    pub fn from_unnormalized(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let total = Self::validate(&atoms)?;
        if total <= 0.0 {
            return Err(Error::InvalidWeights("all weights are zero".into()));
        }
        Ok(Self::build(atoms, total))
    }

    fn validate(atoms: &[(f64, f64)]) -> Result<f64> {
        if atoms.is_empty() {
            return Err(Error::Empty("weighted atoms"));
        }
        let mut infinite = 0;
        let mut total = 0.0;
        for (index, &(v, w)) in atoms.iter().enumerate() {
            if v.is_nan() || v == f64::NEG_INFINITY {
                return Err(Error::NonFinite { index, value: v });
            }
            if v == f64::INFINITY {
                infinite += 1;
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidWeights(format!("weight {w} at index {index}")));
            }
            total += w;
        }
        if infinite > 1 {
            return Err(Error::InvalidWeights("more than one +inf atom".into()));
        }
        Ok(total)
    }

    fn build(mut atoms: Vec<(f64, f64)>, total: f64) -> Self {
        if total != 1.0 {
            for a in &mut atoms {
                a.1 /= total;
            }
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { atoms }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// Total weight on atoms `<= v`.
    pub fn cdf(&self, v: f64) -> f64 {
        self.atoms.iter().take_while(|a| a.0 <= v).map(|a| a.1).sum()
    }

    /// `inf{v : sum_{v_i <= v} w_i >= tau}`.
    pub fn quantile(&self, tau: f64) -> f64 {
        if tau.is_nan() || above_one(tau) {
            return f64::INFINITY;
        }
        if tau <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut cum = 0.0;
        for &(v, w) in &self.atoms {
            cum += w;
            if meets_level(cum, tau) {
                return v;
            }
        }
        f64::INFINITY
    }
}

pub fn weighted_quantile(w: &WeightedEmpirical, tau: f64) -> f64 {
    w.quantile(tau)
}

/// Both sides of the replacement identity
/// `v_new <= Quantile(v + {v_new}; t)  <=>  v_new <= Quantile(v; t(1 + 1/n))`.
pub fn augmented_threshold_equiv(v: &FiniteSample, v_new: f64, t: f64) -> (bool, bool) {
    let n = v.len();
    let mut augmented = v.sorted().to_vec();
    augmented.push(v_new);
    sort_values(&mut augmented);
    let lhs = v_new <= quantile_sorted(&augmented, t);
    let rhs = v_new <= v.quantile(t * (1.0 + 1.0 / n as f64));
    (lhs, rhs)
}
