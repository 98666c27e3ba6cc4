//! Group-conditional (Mondrian) and selection-conditional conformal prediction.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::conformal::{
    conformal_member, pretrained_set, refit_candidates, required_count, score_all, split_threshold, Level,
    PredictionSet, YDomain,
};
use crate::error::{invalid, Error, Result};
use crate::quantile_core::quantile_of;
use crate::rng::rng_from_seed;
use crate::scores::{Bins, Dataset, ScoreFunction};

/// Which inputs a group function reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupArity {
    Features,
    Label,
    Joint,
}

type GroupClosure = Arc<dyn Fn(&[f64], f64) -> usize + Send + Sync>;

/// A partition `g : (x, y) -> {0, ..., K-1}`.
#[derive(Clone)]
pub struct GroupFn {
    arity: GroupArity,
    n_groups: usize,
    f: GroupClosure,
}

impl fmt::Debug for GroupFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupFn").field("arity", &self.arity).field("n_groups", &self.n_groups).finish()
    }
}

impl GroupFn {
    pub fn constant() -> Self {
        Self { arity: GroupArity::Features, n_groups: 1, f: Arc::new(|_, _| 0) }
    }

    /// Groups by label; `y` must be an integer label below `n_labels`.
    pub fn by_label(n_labels: usize) -> Self {
        Self { arity: GroupArity::Label, n_groups: n_labels, f: Arc::new(|_, y| y as usize) }
    }

    /// Groups by equal-width bins of the first feature.
    pub fn feature_bins(bins: Bins) -> Self {
        Self { arity: GroupArity::Features, n_groups: bins.count, f: Arc::new(move |x, _| bins.index(x[0])) }
    }

    pub fn features(n_groups: usize, f: impl Fn(&[f64]) -> usize + Send + Sync + 'static) -> Self {
        Self { arity: GroupArity::Features, n_groups, f: Arc::new(move |x, _| f(x)) }
    }

    pub fn joint(n_groups: usize, f: impl Fn(&[f64], f64) -> usize + Send + Sync + 'static) -> Self {
        Self { arity: GroupArity::Joint, n_groups, f: Arc::new(f) }
    }

    pub fn arity(&self) -> GroupArity {
        self.arity
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn eval(&self, x: &[f64], y: f64) -> Result<usize> {
        let k = (self.f)(x, y);
        if k >= self.n_groups {
            return Err(invalid(format!("group id {k} outside 0..{}", self.n_groups)));
        }
        Ok(k)
    }

    fn groups_of(&self, data: &Dataset) -> Result<Vec<usize>> {
        data.rows().map(|(x, y)| self.eval(x, y)).collect()
    }
}

/// Mondrian conformal set: each candidate is calibrated only against training points
/// in its own group. An empty group has threshold `+inf`.
pub fn mondrian_set(
    s: &ScoreFunction,
    train: &Dataset,
    x: &[f64],
    level: Level,
    g: &GroupFn,
    domain: &YDomain,
) -> Result<PredictionSet> {
    let n = train.len();
    if let (ScoreFunction::Pretrained(score), GroupArity::Features) = (s, g.arity) {
        let k = g.eval(x, f64::NAN)?;
        let groups = g.groups_of(train)?;
        let scores = score_all(score, train)?;
        let mine: Vec<f64> = scores.iter().zip(&groups).filter(|(_, &gi)| gi == k).map(|(&v, _)| v).collect();
        let need = if mine.is_empty() { None } else { required_count(mine.len(), level) };
        return pretrained_set(score, x, domain, &mine, |v| Ok(conformal_member(&mine, v, need)));
    }
    // Group ids of training rows do not depend on the candidate.
    let groups = g.groups_of(train)?;
    let mut selected = Vec::with_capacity(n);
    refit_candidates(s, train, x, domain, |tr, test, aug| {
        let k = g.eval(aug.x(n), aug.y(n))?;
        selected.clear();
        selected.extend(tr.iter().zip(&groups).filter(|(_, &gi)| gi == k).map(|(&v, _)| v));
        if selected.is_empty() {
            return Ok(true);
        }
        Ok(conformal_member(&selected, test, required_count(selected.len(), level)))
    })
}

/// Per-group split thresholds for a features-only partition; `+inf` for empty groups.
pub fn binwise_split_thresholds(cal: &Dataset, s: &ScoreFunction, groups: &GroupFn, level: Level) -> Result<Vec<f64>> {
    let ScoreFunction::Pretrained(score) = s else {
        return Err(invalid("bin-wise thresholds need a pretrained score"));
    };
    if groups.arity != GroupArity::Features {
        return Err(invalid("bin-wise thresholds need a features-only partition"));
    }
    let mut per: Vec<Vec<f64>> = vec![Vec::new(); groups.n_groups];
    for (x, y) in cal.rows() {
        per[groups.eval(x, y)?].push(score.eval(x, y)?);
    }
    per.into_iter()
        .map(|v| {
            if v.is_empty() {
                Ok(f64::INFINITY)
            } else {
                Ok(split_threshold(&crate::quantile_core::FiniteSample::new(v)?, level))
            }
        })
        .collect()
}

type SelectClosure = Arc<dyn Fn(&Dataset) -> Result<Vec<usize>> + Send + Sync>;

/// A selection rule mapping a dataset of size `n + 1` to a subset of its row indices.
/// Rules must be symmetric: permuting rows permutes the selection.
#[derive(Clone)]
pub struct SelectionRule {
    f: SelectClosure,
    features_only: bool,
}

impl fmt::Debug for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SelectionRule").field("features_only", &self.features_only).finish()
    }
}

impl SelectionRule {
    /// `features_only` declares that the rule ignores responses, which enables the no-refit path.
    pub fn new(features_only: bool, f: impl Fn(&Dataset) -> Result<Vec<usize>> + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), features_only }
    }

    pub fn all() -> Self {
        Self::new(true, |d| Ok((0..d.len()).collect()))
    }

    /// Rows with `f(x) >= c`.
    pub fn threshold(c: f64, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(true, move |d| Ok((0..d.len()).filter(|&i| f(d.x(i)) >= c).collect()))
    }

    /// Rows whose feature `j` is at least the `k`-th largest value; ties at the cutoff are all kept.
    pub fn top_k(k: usize, j: usize) -> Self {
        Self::new(true, move |d| {
            if k == 0 || d.is_empty() {
                return Ok(Vec::new());
            }
            let mut v: Vec<f64> = (0..d.len()).map(|i| d.x(i)[j]).collect();
            v.sort_by(|a, b| b.total_cmp(a));
            let cut = v[k.min(v.len()) - 1];
            Ok((0..d.len()).filter(|&i| d.x(i)[j] >= cut).collect())
        })
    }

    pub fn features_only(&self) -> bool {
        self.features_only
    }

    pub fn select(&self, data: &Dataset) -> Result<Vec<usize>> {
        let mut v = (self.f)(data)?;
        v.sort_unstable();
        v.dedup();
        if let Some(&i) = v.iter().find(|&&i| i >= data.len()) {
            return Err(invalid(format!("selection index {i} out of range")));
        }
        Ok(v)
    }

    /// Spot-checks symmetry on `trials` random row permutations of `data`.
    pub fn check_symmetry(&self, data: &Dataset, trials: usize, seed: u64) -> Result<bool> {
        let base = self.select(data)?;
        let mut rng = rng_from_seed(seed);
        let mut perm: Vec<usize> = (0..data.len()).collect();
        for _ in 0..trials {
            perm.shuffle(&mut rng);
            let sel = self.select(&data.subset(&perm))?;
            let mut mapped: Vec<usize> = sel.iter().map(|&i| perm[i]).collect();
            mapped.sort_unstable();
            if mapped != base {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Selective conformal set: `y` is kept when the test row is selected in the augmented
/// data and its score is within the conformal quantile of the selected training scores.
pub fn selective_set(
    s: &ScoreFunction,
    train: &Dataset,
    x: &[f64],
    level: Level,
    rule: &SelectionRule,
    domain: &YDomain,
) -> Result<PredictionSet> {
    let n = train.len();
    if let (ScoreFunction::Pretrained(score), true) = (s, rule.features_only) {
        // Any placeholder response gives the same selection.
        let probe = train.augmented(x, 0.0)?;
        let sel = rule.select(&probe)?;
        if sel.last() != Some(&n) {
            return Ok(PredictionSet::Empty);
        }
        let scores = score_all(score, train)?;
        let mine: Vec<f64> = sel[..sel.len() - 1].iter().map(|&i| scores[i]).collect();
        let need = if mine.is_empty() { None } else { required_count(mine.len(), level) };
        return pretrained_set(score, x, domain, &mine, |v| Ok(conformal_member(&mine, v, need)));
    }
    let mut selected = Vec::with_capacity(n);
    refit_candidates(s, train, x, domain, |tr, test, aug| {
        let sel = rule.select(aug)?;
        if sel.last() != Some(&n) {
            return Ok(false);
        }
        selected.clear();
        selected.extend(sel[..sel.len() - 1].iter().map(|&i| tr[i]));
        if selected.is_empty() {
            return Ok(true);
        }
        Ok(conformal_member(&selected, test, required_count(selected.len(), level)))
    })
}

/// Selective conformal p-value for a hypothesized full dataset whose last row is the test point:
/// computed over the selected rows only. Errors when the test row is not selected.
pub fn selective_pvalue(scores: &[f64], selected: &[usize]) -> Result<f64> {
    let n1 = scores.len();
    if n1 == 0 {
        return Err(Error::Empty("scores"));
    }
    if !selected.contains(&(n1 - 1)) {
        return Err(invalid("test row is not selected"));
    }
    let test = scores[n1 - 1];
    let ge = selected.iter().filter(|&&i| scores[i] >= test).count();
    Ok(ge as f64 / selected.len() as f64)
}

/// Quantile helper used by callers that want the per-group threshold for a given group.
pub fn group_threshold(scores: &[f64], groups: &[usize], k: usize, level: Level) -> f64 {
    let mine: Vec<f64> = scores.iter().zip(groups).filter(|(_, &g)| g == k).map(|(&v, _)| v).collect();
    if mine.is_empty() {
        return f64::INFINITY;
    }
    quantile_of(&mine, level.conformal_tau(mine.len()))
}
