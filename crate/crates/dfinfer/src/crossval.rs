//! Cross-validation style conformal methods: K-fold cross-conformal, CV+,
//! jackknife variants, and the tournament bound behind their guarantees.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{set_over_candidates, Level, PredictionSet, YDomain};
use crate::error::{invalid, Error, Result};
use crate::quantile_core::{meets_level, quantile_of, rank, Rank};
use crate::rng::rng_from_seed;
use crate::scores::{fit_predictor, Dataset, PredictorKind, ScoreFunction, TrainedScore};

/// A partition of `0..n` into `K` folds: contiguous blocks of a seeded shuffle.
/// When `K` does not divide `n`, the first `n % K` folds get one extra row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    folds: Vec<Vec<usize>>,
    fold_of: Vec<usize>,
    seed: Option<u64>,
}

impl FoldPlan {
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 || k > n {
            return Err(invalid(format!("need 2 <= K <= n, got K={k}, n={n}")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_from_seed(seed));
        let mut plan = Self::from_order(&idx, k);
        plan.seed = Some(seed);
        Ok(plan)
    }

    /// Folds `{0}, {1}, ..., {n-1}`.
    pub fn leave_one_out(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("leave-one-out needs n >= 2, got {n}")));
        }
        Ok(Self::from_order(&(0..n).collect::<Vec<_>>(), n))
    }

    /// Explicit folds; must partition `0..n` with at least two nonempty folds.
    pub fn from_folds(n: usize, folds: Vec<Vec<usize>>) -> Result<Self> {
        if folds.len() < 2 || folds.iter().any(Vec::is_empty) {
            return Err(invalid("need at least two nonempty folds"));
        }
        let mut fold_of = vec![usize::MAX; n];
        for (k, f) in folds.iter().enumerate() {
            for &i in f {
                if i >= n || fold_of[i] != usize::MAX {
                    return Err(invalid(format!("index {i} is out of range or repeated")));
                }
                fold_of[i] = k;
            }
        }
        if fold_of.contains(&usize::MAX) {
            return Err(invalid("folds do not cover every row"));
        }
        Ok(Self { folds, fold_of, seed: None })
    }

    fn from_order(order: &[usize], k: usize) -> Self {
        let n = order.len();
        let (base, extra) = (n / k, n % k);
        let mut folds = Vec::with_capacity(k);
        let mut fold_of = vec![0; n];
        let mut start = 0;
        for f in 0..k {
            let size = base + usize::from(f < extra);
            let mut fold: Vec<usize> = order[start..start + size].to_vec();
            fold.sort_unstable();
            for &i in &fold {
                fold_of[i] = f;
            }
            folds.push(fold);
            start += size;
        }
        Self { folds, fold_of, seed: None }
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Whether all folds have the same size, as the coverage bounds assume.
    pub fn equal(&self) -> bool {
        self.folds.iter().all(|f| f.len() == self.folds[0].len())
    }

    /// Rows outside fold `k`.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != k).collect()
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.n() });
        }
        Ok(())
    }
}

/// A fitted regression function.
pub type Fitted = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A regression algorithm `A : dataset -> (x -> prediction)`.
pub trait Regressor: Sync {
    fn fit(&self, data: &Dataset) -> Result<Fitted>;
}

impl Regressor for PredictorKind {
    fn fit(&self, data: &Dataset) -> Result<Fitted> {
        let p = fit_predictor(self, data)?;
        // Validate once so the closure cannot fail on well-shaped inputs.
        p.predict(data.x(0))?;
        Ok(Box::new(move |x| p.predict(x).unwrap_or(f64::NAN)))
    }
}

/// Predicts 0 on datasets of even size and 1 on odd size. Symmetric but maximally
/// unstable; the classical jackknife can have zero coverage with it.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParityRegressor;

impl Regressor for ParityRegressor {
    fn fit(&self, data: &Dataset) -> Result<Fitted> {
        let v = (data.len() % 2) as f64;
        Ok(Box::new(move |_| v))
    }
}

fn fold_scores(s: &ScoreFunction, train: &Dataset, folds: &FoldPlan) -> Result<Vec<(std::sync::Arc<TrainedScore>, Vec<f64>)>> {
    (0..folds.k())
        .into_par_iter()
        .map(|k| {
            let fitted = s.fit(&train.subset(&folds.complement(k)))?;
            let scores = folds.folds[k]
                .iter()
                .map(|&i| fitted.eval(train.x(i), train.y(i)))
                .collect::<Result<Vec<_>>>()?;
            Ok((fitted, scores))
        })
        .collect()
}

/// K-fold cross-conformal set. Uses `K` fits on the training data only.
///
/// For scores with closed-form sublevel sets over the real line the set is
/// exact; otherwise it is evaluated over the candidates of `domain`.
pub fn cross_conformal_set(
    s: &ScoreFunction,
    train: &Dataset,
    x: &[f64],
    level: Level,
    folds: &FoldPlan,
    domain: &YDomain,
) -> Result<PredictionSet> {
    let n = train.len();
    folds.check(n)?;
    let per_fold = fold_scores(s, train, folds)?;
    let limit = match rank(n, level.conformal_tau(n)) {
        Rank::PosInf => return Ok(PredictionSet::All),
        Rank::NegInf => 0,
        Rank::At(k) => k,
    };
    // Candidate kept iff #{i : s_k(i)(x, y) > S_i} < limit.
    let count_above = |v_of_fold: &dyn Fn(usize) -> Result<f64>| -> Result<bool> {
        let mut c = 0;
        for (k, (_, scores)) in per_fold.iter().enumerate() {
            let v = v_of_fold(k)?;
            c += scores.iter().filter(|&&si| v > si).count();
        }
        Ok(c < limit)
    };
    let closed = !matches!(domain, YDomain::Labels(_)) && per_fold.iter().all(|(f, _)| f.sublevel(x, 0.0).is_some());
    if closed {
        let mut breaks = Vec::new();
        for (f, scores) in &per_fold {
            for &si in scores {
                breaks.extend(f.sublevel(x, si).expect("closed form")?.endpoints());
            }
        }
        return PredictionSet::from_breakpoints(breaks, |y| count_above(&|k| per_fold[k].0.eval(x, y)));
    }
    set_over_candidates(domain, |y| count_above(&|k| per_fold[k].0.eval(x, y)))
}

/// Leave-fold-out predictions at `x` and out-of-fold residuals.
fn loo_quantities(alg: &dyn Regressor, train: &Dataset, x: &[f64], folds: &FoldPlan) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = train.len();
    folds.check(n)?;
    let per: Vec<(f64, Vec<(usize, f64)>)> = (0..folds.k())
        .into_par_iter()
        .map(|k| {
            let f = alg.fit(&train.subset(&folds.complement(k)))?;
            let resid = folds.folds[k].iter().map(|&i| (i, (train.y(i) - f(train.x(i))).abs())).collect();
            Ok((f(x), resid))
        })
        .collect::<Result<_>>()?;
    let mut mu = vec![0.0; n];
    let mut s = vec![0.0; n];
    for (k, (m, resid)) in per.into_iter().enumerate() {
        for (i, r) in resid {
            mu[i] = m;
            s[i] = r;
        }
        debug_assert!(folds.folds[k].iter().all(|&i| mu[i] == m));
    }
    if let Some((index, &value)) = mu.iter().chain(&s).enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    Ok((mu, s))
}

/// `[-Q(-(mu_i - S_i); tau), Q(mu_i + S_i; tau)]` with `tau = (1 - alpha)(1 + 1/n)`.
fn plus_interval(mu: &[f64], s: &[f64], level: Level) -> PredictionSet {
    let tau = level.conformal_tau(mu.len());
    let neg_lo: Vec<f64> = mu.iter().zip(s).map(|(m, r)| -(m - r)).collect();
    let hi: Vec<f64> = mu.iter().zip(s).map(|(m, r)| m + r).collect();
    PredictionSet::interval(-quantile_of(&neg_lo, tau), quantile_of(&hi, tau))
}

/// K-fold CV+ interval.
pub fn cv_plus_interval(alg: &dyn Regressor, train: &Dataset, x: &[f64], level: Level, folds: &FoldPlan) -> Result<PredictionSet> {
    let (mu, s) = loo_quantities(alg, train, x, folds)?;
    Ok(plus_interval(&mu, &s, level))
}

/// Stability parameters `(epsilon, delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl StabilityParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !(0.0..=1.0).contains(&delta) {
            return Err(invalid(format!("need epsilon >= 0 and delta in [0,1], got ({epsilon}, {delta})")));
        }
        Ok(Self { epsilon, delta })
    }

    /// Coverage guaranteed for the inflated jackknife: `1 - alpha - 2 sqrt(delta) - 1/(n+1)`.
    pub fn coverage_bound(&self, n: usize, level: Level) -> f64 {
        1.0 - level.alpha() - 2.0 * self.delta.sqrt() - 1.0 / (n + 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum JackknifeVariant {
    /// `f(x) +- Quantile(S; 1 - alpha)` with leave-one-out residuals.
    Classical,
    /// CV+ with `K = n`.
    Plus,
    /// `f(x) +- (Quantile(S; 1 - alpha) + epsilon)`.
    Inflated(StabilityParams),
}

pub fn jackknife_interval(alg: &dyn Regressor, train: &Dataset, x: &[f64], level: Level, variant: JackknifeVariant) -> Result<PredictionSet> {
    let n = train.len();
    let loo = FoldPlan::leave_one_out(n)?;
    let (mu, s) = loo_quantities(alg, train, x, &loo)?;
    match variant {
        JackknifeVariant::Plus => Ok(plus_interval(&mu, &s, level)),
        JackknifeVariant::Classical | JackknifeVariant::Inflated(_) => {
            let eps = match variant {
                JackknifeVariant::Inflated(p) => p.epsilon,
                _ => 0.0,
            };
            let f = alg.fit(train)?(x);
            let q = quantile_of(&s, 1.0 - level.alpha()) + eps;
            Ok(PredictionSet::interval(f - q, f + q))
        }
    }
}

/// Coverage lower bound for K-fold cross-conformal with equal folds.
pub fn cc_coverage_bound(n: usize, k: usize, level: Level) -> Result<f64> {
    if k < 2 || k > n || !n.is_multiple_of(k) {
        return Err(invalid(format!("the bound needs K to divide n with 2 <= K <= n, got K={k}, n={n}")));
    }
    let (nf, kf, a) = (n as f64, k as f64, level.alpha());
    let t1 = (1.0 - 1.0 / kf) / (nf / kf + 1.0);
    let t2 = (1.0 - kf / nf) / (kf + 1.0);
    Ok(1.0 - 2.0 * a - 2.0 * (1.0 - a) * t1.min(t2))
}

/// Radius `sqrt(2 log(K/delta) / (n/K))` of the training-conditional miscoverage tail
/// for K-fold cross-conformal: miscoverage exceeds `2 alpha + radius` with probability at most `delta`.
pub fn cc_training_conditional_radius(n: usize, k: usize, delta: f64) -> Result<f64> {
    if k == 0 || n < k || !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("need 1 <= K <= n and delta in (0,1)"));
    }
    Ok((2.0 * (k as f64 / delta).ln() / (n as f64 / k as f64)).sqrt())
}

/// Result of a tournament row-sum check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TournamentCheck {
    /// `#{i : sum_j A_ij >= N (1 - t)}`.
    pub count: usize,
    /// `2 t N`.
    pub bound: f64,
    pub holds: bool,
}

/// Counts rows with at least `N(1 - t)` wins and compares with `2tN`.
pub fn tournament_rowsum_check(a: &[Vec<u8>], t: f64) -> Result<TournamentCheck> {
    let n = a.len();
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("t must lie in [0,1], got {t}")));
    }
    for (i, row) in a.iter().enumerate() {
        if row.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: row.len() });
        }
        for j in 0..n {
            if row[j] > 1 || row[j] + a[j][i] > 1 {
                return Err(invalid(format!("not a tournament matrix at ({i}, {j})")));
            }
        }
    }
    let need = n as f64 * (1.0 - t);
    let count = a
        .iter()
        .filter(|row| meets_level(row.iter().map(|&v| v as f64).sum(), need))
        .count();
    let bound = 2.0 * t * n as f64;
    Ok(TournamentCheck { count, bound, holds: count as f64 <= bound })
}

/// The worst-case tournament on `N = n + 1` teams with `m = alpha (n + 1) - 1`:
/// `A_ij = 1` if `i, j < 2m+1` and `1 <= (j - i) mod (2m+1) <= m`, or `i < 2m+1 <= j`.
pub fn jackknife_worst_case_matrix(n_teams: usize, m: usize) -> Result<Vec<Vec<u8>>> {
    let c = 2 * m + 1;
    if c > n_teams {
        return Err(invalid(format!("need 2m+1 <= N, got m={m}, N={n_teams}")));
    }
    Ok((0..n_teams)
        .map(|i| {
            (0..n_teams)
                .map(|j| {
                    let cyc = i < c && j < c && {
                        let d = (j + c - i) % c;
                        (1..=m).contains(&d)
                    };
                    u8::from(cyc || (i < c && j >= c))
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{conformal_pvalue, split_set};
    use crate::quantile_core::FiniteSample;
    use crate::scores::{ScoreKind, ScoreRecipe};
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};
    use rand_distr::StandardNormal;

    fn lvl(a: f64) -> Level {
        Level::new(a).unwrap()
    }

    fn data(seed: u64, n: usize) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, rng.sample(StandardNormal)]).collect();
        let ys = rows.iter().map(|r| 2.0 * r[1] + rng.sample::<f64, _>(StandardNormal)).collect();
        Dataset::new(rows, ys).unwrap()
    }

    #[test]
    fn fold_plan_shapes() {
        let p = FoldPlan::new(10, 3, 1).unwrap();
        let sizes: Vec<usize> = p.folds().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert!(!p.equal());
        assert!(FoldPlan::new(10, 5, 1).unwrap().equal());
        assert_eq!(FoldPlan::new(10, 3, 1).unwrap(), p);
        assert!(FoldPlan::new(10, 1, 0).is_err());
        assert!(FoldPlan::new(3, 4, 0).is_err());
        let mut all: Vec<usize> = p.folds().concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(FoldPlan::from_folds(3, vec![vec![0, 1], vec![1, 2]]).is_err());
    }

    #[test]
    fn pretrained_cross_conformal_is_pvalue_set() {
        let score = ScoreFunction::custom("abs", |x, y| (y - x[1]).abs());
        let d = data(1, 20);
        let folds = FoldPlan::new(20, 4, 3).unwrap();
        let grid: Vec<f64> = (0..400).map(|i| -5.0 + 0.025 * i as f64).collect();
        let cc = cross_conformal_set(&score, &d, &[1.0, 0.3], lvl(0.2), &folds, &YDomain::grid(grid.clone()).unwrap()).unwrap();
        let cal: Vec<f64> = d.rows().map(|(x, y)| (y - x[1]).abs()).collect();
        for &y in &grid {
            let mut v = cal.clone();
            v.push((y - 0.3f64).abs());
            let p = conformal_pvalue(&FiniteSample::new(v).unwrap()).value;
            assert_eq!(cc.contains(y), p > 0.2, "y={y}");
        }
        let split = split_set(&score, &d, &[1.0, 0.3], lvl(0.2), &YDomain::grid(grid).unwrap()).unwrap();
        assert_eq!(cc, split);
    }

    #[test]
    fn cc_exact_matches_grid_evaluation() {
        let s = ScoreFunction::refit(ScoreRecipe::new(ScoreKind::Residual, PredictorKind::LeastSquares));
        let d = data(2, 24);
        let folds = FoldPlan::new(24, 4, 9).unwrap();
        let x = [1.0, 0.5];
        let exact = cross_conformal_set(&s, &d, &x, lvl(0.1), &folds, &YDomain::Real).unwrap();
        let grid: Vec<f64> = (0..2000).map(|i| -6.0 + 0.006 * i as f64).collect();
        let ongrid = cross_conformal_set(&s, &d, &x, lvl(0.1), &folds, &YDomain::grid(grid.clone()).unwrap()).unwrap();
        for &y in &grid {
            if !exact.endpoints().iter().any(|e| (e - y).abs() < 1e-9) {
                assert_eq!(exact.contains(y), ongrid.contains(y), "y={y}");
            }
        }
    }

    #[test]
    fn cc_nested_in_cv_plus() {
        let s = ScoreFunction::refit(ScoreRecipe::new(ScoreKind::Residual, PredictorKind::LeastSquares));
        for seed in 0..30 {
            let d = data(seed, 30);
            let folds = FoldPlan::new(30, 5, seed).unwrap();
            let x = [1.0, 0.1 * seed as f64 - 1.0];
            let cc = cross_conformal_set(&s, &d, &x, lvl(0.1), &folds, &YDomain::Real).unwrap();
            let cv = cv_plus_interval(&PredictorKind::LeastSquares, &d, &x, lvl(0.1), &folds).unwrap();
            assert!(cc.is_subset_of(&cv), "seed={seed}: {cc:?} vs {cv:?}");
        }
    }

    #[test]
    fn cv_plus_with_n_folds_is_jackknife_plus() {
        let d = data(3, 15);
        let x = [1.0, 0.2];
        let loo = FoldPlan::leave_one_out(15).unwrap();
        let a = cv_plus_interval(&PredictorKind::LeastSquares, &d, &x, lvl(0.2), &loo).unwrap();
        let b = jackknife_interval(&PredictorKind::LeastSquares, &d, &x, lvl(0.2), JackknifeVariant::Plus).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cv_plus_contains_median_prediction() {
        for seed in 0..20 {
            let d = data(seed + 100, 21);
            let folds = FoldPlan::new(21, 7, seed).unwrap();
            let x = [1.0, 0.7];
            let (mut mu, _) = loo_quantities(&PredictorKind::LeastSquares, &d, &x, &folds).unwrap();
            mu.sort_by(f64::total_cmp);
            let set = cv_plus_interval(&PredictorKind::LeastSquares, &d, &x, lvl(0.3), &folds).unwrap();
            assert!(set.contains(mu[10]));
        }
    }

    #[test]
    fn classical_jackknife_zero_width_on_exact_line() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![1.0, i as f64]).collect();
        let ys = rows.iter().map(|r| 3.0 - 0.5 * r[1]).collect();
        let d = Dataset::new(rows, ys).unwrap();
        let set = jackknife_interval(&PredictorKind::LeastSquares, &d, &[1.0, 2.5], lvl(0.1), JackknifeVariant::Classical).unwrap();
        let h = set.hull().unwrap();
        assert!(h.length() < 1e-9 && (h.lo - 1.75).abs() < 1e-9);
    }

    #[test]
    fn parity_algorithm_breaks_classical_jackknife() {
        // n odd: leave-one-out fits predict 0, the full fit predicts 1, Y = 0.
        let d = Dataset::new(vec![vec![0.0]; 9], vec![0.0; 9]).unwrap();
        let c = jackknife_interval(&ParityRegressor, &d, &[0.0], lvl(0.1), JackknifeVariant::Classical).unwrap();
        assert!(!c.contains(0.0));
        let p = jackknife_interval(&ParityRegressor, &d, &[0.0], lvl(0.1), JackknifeVariant::Plus).unwrap();
        assert!(p.contains(0.0));
    }

    #[test]
    fn inflated_adds_epsilon() {
        let d = data(4, 12);
        let x = [1.0, 0.0];
        let base = jackknife_interval(&PredictorKind::LeastSquares, &d, &x, lvl(0.1), JackknifeVariant::Classical).unwrap();
        let inf = jackknife_interval(
            &PredictorKind::LeastSquares,
            &d,
            &x,
            lvl(0.1),
            JackknifeVariant::Inflated(StabilityParams::new(0.25, 0.1).unwrap()),
        )
        .unwrap();
        assert!((inf.measure() - base.measure() - 0.5).abs() < 1e-12);
        assert!(StabilityParams::new(-1.0, 0.1).is_err());
    }

    #[test]
    fn cc_bound_examples() {
        assert!((cc_coverage_bound(100, 100, lvl(0.1)).unwrap() - 0.8).abs() < 1e-15);
        assert!((cc_coverage_bound(100, 5, lvl(0.1)).unwrap() - 0.731_428_571_428_571_4).abs() < 1e-12);
        assert!(cc_coverage_bound(100, 3, lvl(0.1)).is_err());
    }

    #[test]
    fn worst_case_fixture() {
        let a = jackknife_worst_case_matrix(10, 3).unwrap();
        let expect_row0 = [0, 1, 1, 1, 0, 0, 0, 1, 1, 1];
        let expect_row4 = [1, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        assert_eq!(a[0], expect_row0);
        assert_eq!(a[4], expect_row4);
        assert!(a[7].iter().all(|&v| v == 0));
        let r = tournament_rowsum_check(&a, 0.4).unwrap();
        assert_eq!(r.count, 7);
        assert!(r.holds && r.bound == 8.0);
    }

    #[test]
    fn tournament_validation() {
        assert_eq!(tournament_rowsum_check(&vec![vec![0u8; 4]; 4], 0.3).unwrap().count, 0);
        assert!(tournament_rowsum_check(&[vec![0, 1], vec![1, 0]], 0.3).is_err());
        assert!(tournament_rowsum_check(&[vec![1]], 0.3).is_err());
    }

    proptest! {
        // Index loops mirror the (i, j) / (j, i) symmetry of the match matrix.
        #[allow(clippy::needless_range_loop)]
        #[test]
        fn random_tournaments_satisfy_lemma(n in 1usize..13, seed in any::<u64>(), t in 0.0f64..1.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut a = vec![vec![0u8; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    match rng.random_range(0..3) {
                        0 => a[i][j] = 1,
                        1 => a[j][i] = 1,
                        _ => {}
                    }
                }
            }
            prop_assert!(tournament_rowsum_check(&a, t).unwrap().holds);
        }

        #[test]
        fn cc_bound_dominates_sqrt_rate(m in 1usize..40, k in 2usize..12, a in 0.01f64..0.5) {
            let n = m * k;
            let b = cc_coverage_bound(n, k, lvl(a)).unwrap();
            prop_assert!(b >= 1.0 - 2.0 * a - 2.0 / (n as f64).sqrt() - 1e-12);
        }
    }
}
