//! Permutation tests of marginal and conditional independence, and
//! distribution-free confidence intervals for a regression function.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::Level;
use crate::error::{invalid, Error, Result};
use crate::rng::rng_from_seed;
use crate::scores::{Bins, Dataset};
use crate::weighted::LocalizationKernel;

/// Largest `n` for exhaustive enumeration (`8! = 40320`).
pub const EXHAUSTIVE_MAX_N: usize = 8;
/// Relative slack when comparing permuted statistics with the observed one, so
/// permutations that are equal up to summation order still count as ties.
const TIE_TOL: f64 = 1e-12;

pub type StatisticFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

/// Test statistic `T(x, y, w)`; large values are evidence against the null.
#[derive(Clone)]
pub enum TestStatistic {
    /// `|corr(x, y)|`, zero when either vector is constant.
    AbsCorrelation,
    /// Kolmogorov-Smirnov distance between the `y` samples with `x == 0` and `x != 0`.
    KsTwoSample,
    Custom { name: String, f: StatisticFn },
}

impl fmt::Debug for TestStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AbsCorrelation => f.write_str("AbsCorrelation"),
            Self::KsTwoSample => f.write_str("KsTwoSample"),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl TestStatistic {
    pub fn custom(name: impl Into<String>, f: impl Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom { name: name.into(), f: Arc::new(f) }
    }

    pub fn eval(&self, x: &[f64], y: &[f64], w: &[f64]) -> f64 {
        match self {
            Self::AbsCorrelation => abs_correlation(x, y),
            Self::KsTwoSample => ks_split(x, y),
            Self::Custom { f, .. } => f(x, y, w),
        }
    }
}

fn abs_correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).abs()
}

/// `sup_v |F_0(v) - F_1(v)|` for the `y` values split by `x == 0`.
fn ks_split(x: &[f64], y: &[f64]) -> f64 {
    let mut pts: Vec<(f64, bool)> = y.iter().zip(x).map(|(&v, &g)| (v, g == 0.0)).collect();
    let n0 = pts.iter().filter(|p| p.1).count();
    let n1 = pts.len() - n0;
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut c0, mut c1, mut d) = (0usize, 0usize, 0.0f64);
    let mut i = 0;
    while i < pts.len() {
        let v = pts[i].0;
        while i < pts.len() && pts[i].0 == v {
            if pts[i].1 {
                c0 += 1;
            } else {
                c1 += 1;
            }
            i += 1;
        }
        d = d.max((c0 as f64 / n0 as f64 - c1 as f64 / n1 as f64).abs());
    }
    d
}

/// How permutations are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PermutationBudget {
    /// Every allowed permutation; requires `n <= 8`.
    Exhaustive,
    /// `M` uniform draws with replacement; p-value `(1 + #) / (1 + M)`.
    Sampled { m: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub pvalue: f64,
    pub reject: bool,
    pub statistic: f64,
    /// Number of permutations evaluated.
    pub permutations: usize,
    /// `L h sqrt(2n)` for the binned test when `L` is supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflation: Option<f64>,
}

fn check_lengths(x: &[f64], y: &[f64], w: Option<&[f64]>) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if let Some(w) = w {
        if w.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: w.len() });
        }
    }
    if x.is_empty() {
        return Err(Error::Empty("sample"));
    }
    Ok(())
}

/// Lexicographic successor; false after the last permutation.
fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Permutation test where `x` is permuted only within `groups`.
fn grouped_test(x: &[f64], y: &[f64], w: &[f64], groups: &[usize], t: &TestStatistic, budget: PermutationBudget, level: Level) -> Result<PermutationResult> {
    let n = x.len();
    let observed = t.eval(x, y, w);
    let cutoff = observed - TIE_TOL * observed.abs().max(1.0);
    let permuted_stat = |sigma: &[usize]| {
        let xs: Vec<f64> = sigma.iter().map(|&i| x[i]).collect();
        t.eval(&xs, y, w)
    };
    let (pvalue, permutations) = match budget {
        PermutationBudget::Exhaustive => {
            if n > EXHAUSTIVE_MAX_N {
                return Err(invalid(format!("exhaustive permutations need n <= {EXHAUSTIVE_MAX_N}, got {n}; use sampled mode")));
            }
            let mut sigma: Vec<usize> = (0..n).collect();
            let mut allowed = Vec::new();
            loop {
                if sigma.iter().enumerate().all(|(i, &s)| groups[s] == groups[i]) {
                    allowed.push(sigma.clone());
                }
                if !next_permutation(&mut sigma) {
                    break;
                }
            }
            let hits = allowed.par_iter().filter(|s| permuted_stat(s) >= cutoff).count();
            (hits as f64 / allowed.len() as f64, allowed.len())
        }
        PermutationBudget::Sampled { m, seed } => {
            if m == 0 {
                return Err(invalid("sampled mode needs M >= 1"));
            }
            let mut members: Vec<Vec<usize>> = Vec::new();
            let mut by_group = std::collections::BTreeMap::<usize, Vec<usize>>::new();
            for (i, &g) in groups.iter().enumerate() {
                by_group.entry(g).or_default().push(i);
            }
            members.extend(by_group.into_values());
            let mut rng = rng_from_seed(seed);
            let draws: Vec<Vec<usize>> = (0..m)
                .map(|_| {
                    let mut sigma: Vec<usize> = (0..n).collect();
                    for idx in &members {
                        let mut shuffled = idx.clone();
                        shuffled.shuffle(&mut rng);
                        for (&pos, &src) in idx.iter().zip(&shuffled) {
                            sigma[pos] = src;
                        }
                    }
                    sigma
                })
                .collect();
            let hits = draws.par_iter().filter(|s| permuted_stat(s) >= cutoff).count();
            ((1 + hits) as f64 / (1 + m) as f64, m)
        }
    };
    Ok(PermutationResult { pvalue, reject: pvalue <= level.alpha(), statistic: observed, permutations, inflation: None })
}

/// Tests `X independent of Y` by permuting `x`.
pub fn marginal_independence_test(x: &[f64], y: &[f64], t: &TestStatistic, budget: PermutationBudget, level: Level) -> Result<PermutationResult> {
    check_lengths(x, y, None)?;
    let w = vec![0.0; x.len()];
    grouped_test(x, y, &w, &vec![0; x.len()], t, budget, level)
}

/// Group ids for bitwise-equal values.
fn exact_groups(w: &[f64]) -> Vec<usize> {
    let mut ids = std::collections::HashMap::<u64, usize>::new();
    w.iter()
        .map(|v| {
            let next = ids.len();
            *ids.entry(v.to_bits()).or_insert(next)
        })
        .collect()
}

/// Tests `X independent of Y given W` for discrete `W`, permuting `x` within
/// groups of bitwise-equal `w`. Continuous confounders must be binned first.
pub fn local_permutation_test(x: &[f64], y: &[f64], w: &[f64], t: &TestStatistic, budget: PermutationBudget, level: Level) -> Result<PermutationResult> {
    check_lengths(x, y, Some(w))?;
    grouped_test(x, y, w, &exact_groups(w), t, budget, level)
}

/// Local permutation test with `x` permuted within bins of `w`. Bin diameter
/// is `h = bins.width()`; with a Lipschitz constant the size inflation
/// `L h sqrt(2n)` is reported.
#[allow(clippy::too_many_arguments)]
pub fn binned_local_permutation_test(
    x: &[f64],
    y: &[f64],
    w: &[f64],
    t: &TestStatistic,
    bins: &Bins,
    lipschitz: Option<f64>,
    budget: PermutationBudget,
    level: Level,
) -> Result<PermutationResult> {
    check_lengths(x, y, Some(w))?;
    let groups = w.iter().map(|&v| bin_of(bins, v)).collect::<Result<Vec<_>>>()?;
    let mut r = grouped_test(x, y, w, &groups, t, budget, level)?;
    r.inflation = lipschitz.map(|l| l * bins.width() * (2.0 * x.len() as f64).sqrt());
    Ok(r)
}

fn bin_of(bins: &Bins, v: f64) -> Result<usize> {
    if !(bins.lo..=bins.hi).contains(&v) {
        return Err(invalid(format!("value {v} lies outside the declared bins [{}, {}]", bins.lo, bins.hi)));
    }
    Ok(bins.index(v))
}

/// How the local sample around a query point is chosen.
#[derive(Clone)]
pub enum RegressionMethod {
    /// Rows with `x` bitwise equal to the query.
    Discrete,
    /// Rows in the same cell of the per-coordinate bins.
    Binned(Vec<Bins>),
    /// Row `i` accepted when `U_i <= H(x, X_i) / B`, `U_i` uniform from `seed`.
    Blurred { kernel: LocalizationKernel, seed: u64 },
}

impl fmt::Debug for RegressionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Discrete => f.write_str("Discrete"),
            Self::Binned(b) => f.debug_tuple("Binned").field(b).finish(),
            Self::Blurred { seed, .. } => write!(f, "Blurred(seed={seed})"),
        }
    }
}

/// Confidence interval for the (discrete, binned or blurred) regression function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionCI {
    pub lo: f64,
    pub hi: f64,
    /// Local mean; absent when the local sample is empty.
    pub center: Option<f64>,
    pub n_local: usize,
}

/// Hoeffding radius `(b - a) sqrt(log(2/alpha) / (2 m))`.
pub fn hoeffding_radius(a: f64, b: f64, m: usize, level: Level) -> f64 {
    (b - a) * ((2.0 / level.alpha()).ln() / (2.0 * m as f64)).sqrt()
}

/// Indices accepted by the blurred method's rejection step.
pub fn blurred_accept(kernel: &LocalizationKernel, x: &[f64], train: &Dataset, seed: u64) -> Result<Vec<usize>> {
    let b = kernel
        .bound
        .ok_or_else(|| invalid("the blurred method needs a kernel with a declared bound B"))?;
    if !(b > 0.0) {
        return Err(invalid(format!("kernel bound must be positive, got {b}")));
    }
    let mut rng = rng_from_seed(seed);
    let u: Vec<f64> = (0..train.len()).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::new();
    for (i, ui) in u.into_iter().enumerate() {
        if ui <= kernel.eval(x, train.x(i))? / b {
            out.push(i);
        }
    }
    Ok(out)
}

/// `mean(local Y) +- (b - a) sqrt(log(2/alpha) / (2 n_local))`, clipped to `[a, b]`;
/// `[a, b]` when the local sample is empty.
pub fn regression_ci(train: &Dataset, query: &[f64], level: Level, method: &RegressionMethod, range: (f64, f64)) -> Result<RegressionCI> {
    let (a, b) = range;
    if !(a <= b) || !a.is_finite() || !b.is_finite() {
        return Err(invalid(format!("response range must be finite with a <= b, got [{a}, {b}]")));
    }
    if query.len() != train.dim() {
        return Err(Error::DimensionMismatch { expected: train.dim(), got: query.len() });
    }
    if let Some((index, &value)) = train.ys().iter().enumerate().find(|(_, v)| !(a..=b).contains(*v)) {
        return Err(invalid(format!("response {value} at row {index} lies outside [{a}, {b}]")));
    }
    let local: Vec<usize> = match method {
        RegressionMethod::Discrete => (0..train.len())
            .filter(|&i| train.x(i).iter().zip(query).all(|(u, v)| u.to_bits() == v.to_bits()))
            .collect(),
        RegressionMethod::Binned(bins) => {
            if bins.len() != query.len() {
                return Err(Error::DimensionMismatch { expected: query.len(), got: bins.len() });
            }
            let cell = |x: &[f64]| x.iter().zip(bins).map(|(&v, bn)| bin_of(bn, v)).collect::<Result<Vec<_>>>();
            let q = cell(query)?;
            let mut out = Vec::new();
            for i in 0..train.len() {
                if cell(train.x(i))? == q {
                    out.push(i);
                }
            }
            out
        }
        RegressionMethod::Blurred { kernel, seed } => blurred_accept(kernel, query, train, *seed)?,
    };
    if local.is_empty() {
        return Ok(RegressionCI { lo: a, hi: b, center: None, n_local: 0 });
    }
    let m = local.len();
    let center = local.iter().map(|&i| train.y(i)).sum::<f64>() / m as f64;
    let r = hoeffding_radius(a, b, m, level);
    Ok(RegressionCI { lo: (center - r).max(a), hi: (center + r).min(b), center: Some(center), n_local: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lvl(a: f64) -> Level {
        Level::new(a).unwrap()
    }

    #[test]
    fn exhaustive_identity_maximizes() {
        let x = [1.0, 2.0, 3.0];
        let r = marginal_independence_test(&x, &x, &TestStatistic::AbsCorrelation, PermutationBudget::Exhaustive, lvl(0.2)).unwrap();
        // |corr| = 1 for the identity and the reversal.
        assert_eq!(r.permutations, 6);
        assert!((r.pvalue - 2.0 / 6.0).abs() < 1e-15);
        let signed = TestStatistic::custom("corr", |x, y, _| {
            let n = x.len() as f64;
            let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
            x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum()
        });
        let r = marginal_independence_test(&x, &x, &signed, PermutationBudget::Exhaustive, lvl(0.2)).unwrap();
        assert!((r.pvalue - 1.0 / 6.0).abs() < 1e-15);
        assert!(r.reject);
    }

    #[test]
    fn constant_statistic_gives_one() {
        let t = TestStatistic::custom("zero", |_, _, _| 0.0);
        let x = [0.3, 0.1, 0.9, 0.5];
        let r = marginal_independence_test(&x, &x, &t, PermutationBudget::Exhaustive, lvl(0.1)).unwrap();
        assert_eq!(r.pvalue, 1.0);
        let r = marginal_independence_test(&x, &x, &t, PermutationBudget::Sampled { m: 50, seed: 1 }, lvl(0.1)).unwrap();
        assert_eq!(r.pvalue, 1.0);
    }

    #[test]
    fn exhaustive_limit() {
        let x = vec![0.0; 9];
        assert!(marginal_independence_test(&x, &x, &TestStatistic::AbsCorrelation, PermutationBudget::Exhaustive, lvl(0.1)).is_err());
    }

    #[test]
    fn local_test_reductions() {
        let x = [0.1, 0.5, 0.2, 0.9, 0.4];
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        let same = [7.0; 5];
        let m = marginal_independence_test(&x, &y, &TestStatistic::AbsCorrelation, PermutationBudget::Exhaustive, lvl(0.1)).unwrap();
        let l = local_permutation_test(&x, &y, &same, &TestStatistic::AbsCorrelation, PermutationBudget::Exhaustive, lvl(0.1)).unwrap();
        assert_eq!(m.pvalue, l.pvalue);
        let distinct = [1.0, 2.0, 3.0, 4.0, 5.0];
        let d = local_permutation_test(&x, &y, &distinct, &TestStatistic::AbsCorrelation, PermutationBudget::Exhaustive, lvl(0.1)).unwrap();
        assert_eq!((d.pvalue, d.permutations, d.reject), (1.0, 1, false));
        let grouped = [1.0, 1.0, 2.0, 2.0, 2.0];
        assert_eq!(local_permutation_test(&x, &y, &grouped, &TestStatistic::AbsCorrelation, PermutationBudget::Exhaustive, lvl(0.1)).unwrap().permutations, 12);
    }

    #[test]
    fn binned_reductions() {
        let x = [0.1, 0.5, 0.2, 0.9, 0.4, 0.3];
        let y = [1.0, 3.0, 2.0, 5.0, 4.0, 0.0];
        let w = [0.05, 0.15, 0.35, 0.45, 0.62, 0.99];
        let t = TestStatistic::AbsCorrelation;
        let one = binned_local_permutation_test(&x, &y, &w, &t, &Bins::new(0.0, 1.0, 1).unwrap(), Some(2.0), PermutationBudget::Exhaustive, lvl(0.1)).unwrap();
        let m = marginal_independence_test(&x, &y, &t, PermutationBudget::Exhaustive, lvl(0.1)).unwrap();
        assert_eq!(one.pvalue, m.pvalue);
        assert!((one.inflation.unwrap() - 2.0 * 12f64.sqrt()).abs() < 1e-12);
        // Bins at the discrete values reproduce the exact local test.
        let wd = [0.05, 0.05, 0.55, 0.55, 0.55, 0.95];
        let b = binned_local_permutation_test(&x, &y, &wd, &t, &Bins::new(0.0, 1.0, 10).unwrap(), None, PermutationBudget::Exhaustive, lvl(0.1)).unwrap();
        let e = local_permutation_test(&x, &y, &wd, &t, PermutationBudget::Exhaustive, lvl(0.1)).unwrap();
        assert_eq!(b.pvalue, e.pvalue);
        assert!(binned_local_permutation_test(&x, &y, &[1.5; 6], &t, &Bins::new(0.0, 1.0, 2).unwrap(), None, PermutationBudget::Exhaustive, lvl(0.1)).is_err());
    }

    #[test]
    fn sampled_tracks_exhaustive() {
        let x = [0.1, 0.5, 0.2, 0.9, 0.4, 0.3, 0.8];
        let y = [1.0, 3.0, 2.0, 5.0, 0.5, 0.0, 4.0];
        let t = TestStatistic::AbsCorrelation;
        let e = marginal_independence_test(&x, &y, &t, PermutationBudget::Exhaustive, lvl(0.1)).unwrap();
        let s = marginal_independence_test(&x, &y, &t, PermutationBudget::Sampled { m: 20000, seed: 9 }, lvl(0.1)).unwrap();
        // Binomial sd at M = 20000 is below 0.004.
        assert!((e.pvalue - s.pvalue).abs() < 0.02, "{} vs {}", e.pvalue, s.pvalue);
    }

    #[test]
    fn ks_statistic() {
        let x = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(ks_split(&x, &[1.0, 2.0, 3.0, 4.0]), 1.0);
        assert_eq!(ks_split(&x, &[1.0, 3.0, 2.0, 4.0]), 0.5);
        assert_eq!(ks_split(&[0.0; 3], &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn regression_ci_cases() {
        let d = Dataset::new(vec![vec![0.0], vec![1.0], vec![1.0], vec![1.0]], vec![0.2, 0.5, 0.5, 0.5]).unwrap();
        let empty = regression_ci(&d, &[2.0], lvl(0.1), &RegressionMethod::Discrete, (0.0, 1.0)).unwrap();
        assert_eq!((empty.lo, empty.hi, empty.n_local), (0.0, 1.0, 0));
        let c = regression_ci(&d, &[1.0], lvl(0.1), &RegressionMethod::Discrete, (0.0, 1.0)).unwrap();
        let r = (20f64.ln() / 6.0).sqrt();
        assert_eq!(c.n_local, 3);
        assert!((c.lo - (0.5 - r).max(0.0)).abs() < 1e-15 && (c.hi - (0.5 + r).min(1.0)).abs() < 1e-15);
        let bins = RegressionMethod::Binned(vec![Bins::new(0.0, 2.0, 2).unwrap()]);
        assert_eq!(regression_ci(&d, &[0.5], lvl(0.1), &bins, (0.0, 1.0)).unwrap().n_local, 1);
        assert!(regression_ci(&d, &[3.0], lvl(0.1), &bins, (0.0, 1.0)).is_err());
        assert!(regression_ci(&d, &[1.0], lvl(0.1), &RegressionMethod::Discrete, (0.3, 1.0)).is_err());
        let blur = RegressionMethod::Blurred { kernel: LocalizationKernel::gaussian(1e-6), seed: 3 };
        let c = regression_ci(&d, &[1.0], lvl(0.1), &blur, (0.0, 1.0)).unwrap();
        // Kernel is 1 at the three matching rows and ~0 elsewhere.
        assert_eq!(c.n_local, 3);
    }

    #[test]
    fn interval_shrinks_with_sample() {
        let rows = vec![vec![1.0]; 4000];
        let d = Dataset::new(rows, vec![0.7; 4000]).unwrap();
        let c = regression_ci(&d, &[1.0], lvl(0.05), &RegressionMethod::Discrete, (0.0, 1.0)).unwrap();
        assert!((c.hi - c.lo - 2.0 * hoeffding_radius(0.0, 1.0, 4000, lvl(0.05))).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn pvalue_at_least_one_over_group(x in prop::collection::vec(0.0f64..1.0, 2..7), y in prop::collection::vec(0.0f64..1.0, 7)) {
            let y = &y[..x.len()];
            let r = marginal_independence_test(&x, y, &TestStatistic::AbsCorrelation, PermutationBudget::Exhaustive, lvl(0.1)).unwrap();
            let fact: usize = (1..=x.len()).product();
            prop_assert!(r.pvalue >= 1.0 / fact as f64);
            prop_assert_eq!(r.permutations, fact);
        }
    }
}
