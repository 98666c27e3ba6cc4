//! Datasets, simple in-library predictors, and conformal score functions.
//!
//! Every fit first puts the rows in a canonical order (lexicographic on
//! `(x, y)` under IEEE total order), so fitted models, and therefore refit
//! scores, are bitwise invariant to row permutations.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conformal::PredictionSet;
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, gram, Cholesky};
use crate::quantile_core::{quantile_sorted, sort_values};

/// Lower bound applied to fitted scales in the scaled-residual score.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Rows `(x_i, y_i)` with a common feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_labels: Option<usize>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if rows.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), got: y.len() });
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut x = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            x.extend_from_slice(r);
        }
        Self::from_flat(dim, x, y)
    }

    /// Row-major features of width `dim`.
    pub fn from_flat(dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != dim * y.len() {
            return Err(Error::DimensionMismatch { expected: dim * y.len(), got: x.len() });
        }
        if let Some((index, &value)) = x.iter().chain(&y).enumerate().find(|(_, v)| v.is_nan()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { dim, x, y, group: None, n_labels: None })
    }

    /// Declares `y` categorical with labels `0..n_labels`.
    pub fn with_labels(mut self, n_labels: usize) -> Result<Self> {
        for &v in &self.y {
            check_label(v, n_labels)?;
        }
        self.n_labels = Some(n_labels);
        Ok(self)
    }

    pub fn with_groups(mut self, group: Vec<usize>) -> Result<Self> {
        if group.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: group.len() });
        }
        self.group = Some(group);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_labels(&self) -> Option<usize> {
        self.n_labels
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.group.as_deref()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.x(i), self.y[i]))
    }

    /// Appends the hypothesized point `(x, y)` as row `n + 1`.
    pub fn augmented(&self, x: &[f64], y: f64) -> Result<Self> {
        self.check_dim(x)?;
        let mut out = self.clone();
        out.x.extend_from_slice(x);
        out.y.push(y);
        if let Some(g) = &mut out.group {
            g.push(usize::MAX);
        }
        Ok(out)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            x.extend_from_slice(self.x(i));
        }
        Self {
            dim: self.dim,
            x,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            group: self.group.as_ref().map(|g| idx.iter().map(|&i| g[i]).collect()),
            n_labels: self.n_labels,
        }
    }

    /// Same features with responses replaced.
    pub fn with_responses(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: y.len() });
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    /// Prepends a constant feature equal to one.
    pub fn with_intercept(&self) -> Self {
        let mut x = Vec::with_capacity(self.len() * (self.dim + 1));
        for i in 0..self.len() {
            x.push(1.0);
            x.extend_from_slice(self.x(i));
        }
        Self { dim: self.dim + 1, x, y: self.y.clone(), group: self.group.clone(), n_labels: self.n_labels }
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim && !self.is_empty() {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    /// Row indices in canonical order.
    fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.x(a)
                .iter()
                .zip(self.x(b))
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(self.y[a].total_cmp(&self.y[b]))
        });
        idx
    }
}

fn check_label(v: f64, n_labels: usize) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && (v as usize) < n_labels {
        Ok(v as usize)
    } else {
        Err(Error::LabelOutOfRange { label: v, n_labels })
    }
}

/// Equal-width bins on the first feature over `[lo, hi]`; values outside are
/// clamped to the edge bins. Bin `k` is `[lo + k w, lo + (k+1) w)`, the last bin closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Bins {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo < hi) || count == 0 || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("bins need lo < hi and count >= 1, got [{lo}, {hi}] x {count}")));
        }
        Ok(Self { lo, hi, count })
    }

    pub fn index(&self, v: f64) -> usize {
        let w = (self.hi - self.lo) / self.count as f64;
        let k = ((v - self.lo) / w).floor();
        if k < 0.0 || k.is_nan() {
            0
        } else {
            (k as usize).min(self.count - 1)
        }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.count as f64
    }
}

/// Model families that can be fitted from a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorKind {
    /// Ordinary least squares without an implicit intercept.
    LeastSquares,
    Ridge { lambda: f64 },
    /// Mean response (or label frequencies) of the `k` nearest rows in Euclidean distance.
    Knn { k: usize },
    /// Per-bin empirical quantiles at `beta/2` and `1 - beta/2`.
    HistQuantile { bins: Bins, beta: f64 },
    /// Per-bin label frequencies; empty bins predict the uniform distribution.
    HistClassProb { bins: Bins },
    /// Per-bin histogram density of `y`; empty bins predict the uniform density on `bins_y`.
    HistDensity { bins_x: Bins, bins_y: Bins },
}

/// A fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    Linear { coef: Vec<f64> },
    Knn { k: usize, dim: usize, x: Vec<f64>, y: Vec<f64>, n_labels: Option<usize> },
    HistQuantile { bins: Bins, lower: Vec<f64>, upper: Vec<f64> },
    HistClassProb { bins: Bins, probs: Vec<Vec<f64>> },
    HistDensity { bins_x: Bins, bins_y: Bins, density: Vec<Vec<f64>> },
}

pub fn fit_predictor(kind: &PredictorKind, train: &Dataset) -> Result<Predictor> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let order = train.canonical_order();
    let n = train.len();
    match kind {
        PredictorKind::LeastSquares => fit_linear(train, &order, 0.0),
        PredictorKind::Ridge { lambda } => {
            if !(*lambda >= 0.0) {
                return Err(invalid(format!("ridge penalty must be >= 0, got {lambda}")));
            }
            fit_linear(train, &order, *lambda)
        }
        PredictorKind::Knn { k } => {
            if *k == 0 || *k > n {
                return Err(invalid(format!("knn needs 1 <= k <= n, got k={k}, n={n}")));
            }
            let mut x = Vec::with_capacity(n * train.dim());
            let mut y = Vec::with_capacity(n);
            for &i in &order {
                x.extend_from_slice(train.x(i));
                y.push(train.y(i));
            }
            Ok(Predictor::Knn { k: *k, dim: train.dim(), x, y, n_labels: train.n_labels() })
        }
        PredictorKind::HistQuantile { bins, beta } => {
            if !(*beta > 0.0 && *beta < 1.0) {
                return Err(invalid(format!("quantile level beta must lie in (0,1), got {beta}")));
            }
            let mut per_bin = vec![Vec::new(); bins.count];
            let mut all = Vec::with_capacity(n);
            for &i in &order {
                per_bin[bins.index(first(train.x(i))?)].push(train.y(i));
                all.push(train.y(i));
            }
            sort_values(&mut all);
            let (glo, ghi) = (quantile_sorted(&all, beta / 2.0), quantile_sorted(&all, 1.0 - beta / 2.0));
            let mut lower = Vec::with_capacity(bins.count);
            let mut upper = Vec::with_capacity(bins.count);
            for mut ys in per_bin {
                if ys.is_empty() {
                    lower.push(glo);
                    upper.push(ghi);
                } else {
                    sort_values(&mut ys);
                    lower.push(quantile_sorted(&ys, beta / 2.0));
                    upper.push(quantile_sorted(&ys, 1.0 - beta / 2.0));
                }
            }
            Ok(Predictor::HistQuantile { bins: *bins, lower, upper })
        }
        PredictorKind::HistClassProb { bins } => {
            let k = train.n_labels().ok_or_else(|| invalid("class probabilities need a labelled dataset"))?;
            let mut counts = vec![vec![0usize; k]; bins.count];
            for &i in &order {
                let b = bins.index(first(train.x(i))?);
                counts[b][check_label(train.y(i), k)?] += 1;
            }
            let probs = counts
                .into_iter()
                .map(|c| {
                    let total: usize = c.iter().sum();
                    if total == 0 {
                        vec![1.0 / k as f64; k]
                    } else {
                        c.iter().map(|&m| m as f64 / total as f64).collect()
                    }
                })
                .collect();
            Ok(Predictor::HistClassProb { bins: *bins, probs })
        }
        PredictorKind::HistDensity { bins_x, bins_y } => {
            let mut counts = vec![vec![0usize; bins_y.count]; bins_x.count];
            let mut totals = vec![0usize; bins_x.count];
            for &i in &order {
                let bx = bins_x.index(first(train.x(i))?);
                totals[bx] += 1;
                let y = train.y(i);
                if y >= bins_y.lo && y <= bins_y.hi {
                    counts[bx][bins_y.index(y)] += 1;
                }
            }
            let uniform = 1.0 / (bins_y.hi - bins_y.lo);
            let density = counts
                .into_iter()
                .zip(totals)
                .map(|(c, t)| {
                    if t == 0 {
                        vec![uniform; bins_y.count]
                    } else {
                        c.iter().map(|&m| m as f64 / (t as f64 * bins_y.width())).collect()
                    }
                })
                .collect();
            Ok(Predictor::HistDensity { bins_x: *bins_x, bins_y: *bins_y, density })
        }
    }
}

fn first(x: &[f64]) -> Result<f64> {
    x.first().copied().ok_or_else(|| invalid("histogram predictors need at least one feature"))
}

fn fit_linear(train: &Dataset, order: &[usize], ridge: f64) -> Result<Predictor> {
    let d = train.dim();
    if d == 0 {
        return Err(invalid("linear models need at least one feature"));
    }
    let g = gram(order.iter().map(|&i| train.x(i)), d, ridge);
    let chol = Cholesky::new(&g, d)?;
    let mut xty = vec![0.0; d];
    for &i in order {
        let y = train.y(i);
        for (acc, &xi) in xty.iter_mut().zip(train.x(i)) {
            *acc += xi * y;
        }
    }
    Ok(Predictor::Linear { coef: chol.solve(&xty) })
}

impl Predictor {
    /// Point prediction for regression models.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Linear { coef } => {
                if x.len() != coef.len() {
                    return Err(Error::DimensionMismatch { expected: coef.len(), got: x.len() });
                }
                Ok(dot(coef, x))
            }
            Self::Knn { y, .. } => {
                let nn = self.neighbours(x)?;
                Ok(nn.iter().map(|&j| y[j]).sum::<f64>() / nn.len() as f64)
            }
            _ => Err(Error::Unsupported("point prediction for this predictor".into())),
        }
    }

    /// Lower and upper conditional quantile estimates.
    pub fn interval(&self, x: &[f64]) -> Result<(f64, f64)> {
        match self {
            Self::HistQuantile { bins, lower, upper } => {
                let b = bins.index(first(x)?);
                Ok((lower[b], upper[b]))
            }
            _ => Err(Error::Unsupported("quantile interval for this predictor".into())),
        }
    }

    /// Estimated class probabilities.
    pub fn proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::HistClassProb { bins, probs } => Ok(probs[bins.index(first(x)?)].clone()),
            Self::Knn { y, n_labels: Some(k), .. } => {
                let nn = self.neighbours(x)?;
                let mut p = vec![0.0; *k];
                for &j in &nn {
                    p[y[j] as usize] += 1.0;
                }
                p.iter_mut().for_each(|v| *v /= nn.len() as f64);
                Ok(p)
            }
            _ => Err(Error::Unsupported("class probabilities for this predictor".into())),
        }
    }

    /// Estimated conditional density of `y` given `x`.
    pub fn density(&self, x: &[f64], y: f64) -> Result<f64> {
        match self {
            Self::HistDensity { bins_x, bins_y, density } => {
                if y < bins_y.lo || y > bins_y.hi || y.is_nan() {
                    return Ok(0.0);
                }
                Ok(density[bins_x.index(first(x)?)][bins_y.index(y)])
            }
            _ => Err(Error::Unsupported("conditional density for this predictor".into())),
        }
    }

    /// Indices of the `k` nearest stored rows; distance ties resolved by canonical row order.
    fn neighbours(&self, q: &[f64]) -> Result<Vec<usize>> {
        let Self::Knn { k, dim, x, .. } = self else { unreachable!() };
        if q.len() != *dim {
            return Err(Error::DimensionMismatch { expected: *dim, got: q.len() });
        }
        let n = x.len() / dim.max(&1);
        let n = if *dim == 0 { 0 } else { n };
        let mut d: Vec<(f64, usize)> = (0..n)
            .map(|j| {
                let row = &x[j * dim..(j + 1) * dim];
                (row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), j)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(d.into_iter().take(*k).map(|(_, j)| j).collect())
    }
}

/// The score constructions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreKind {
    /// `|y - f(x)|`.
    Residual,
    /// `|y - f(x)| / max(sigma(x), SIGMA_FLOOR)`.
    ScaledResidual,
    /// `max(lo(x) - y, y - hi(x))` with quantile estimates at `alpha/2` and `1 - alpha/2`.
    Cqr { alpha: f64 },
    /// `-p(y | x)`.
    HighProbability,
    /// Total estimated probability of labels strictly more likely than `y`.
    CumulativeProbability,
    /// `-density(y | x)`.
    HighDensity,
}

impl ScoreKind {
    pub fn is_classification(&self) -> bool {
        matches!(self, Self::HighProbability | Self::CumulativeProbability)
    }
}

/// How to fit a score from a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecipe {
    pub kind: ScoreKind,
    pub model: PredictorKind,
    /// Scale model for [`ScoreKind::ScaledResidual`], fitted to in-sample absolute residuals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<PredictorKind>,
}

impl ScoreRecipe {
    pub fn new(kind: ScoreKind, model: PredictorKind) -> Self {
        Self { kind, model, scale: None }
    }

    pub fn with_scale(mut self, scale: PredictorKind) -> Self {
        self.scale = Some(scale);
        self
    }

    pub fn fit(&self, data: &Dataset) -> Result<TrainedScore> {
        if let (ScoreKind::Cqr { alpha }, PredictorKind::HistQuantile { beta, .. }) = (&self.kind, &self.model) {
            if alpha != beta {
                return Err(invalid(format!("CQR level {alpha} differs from quantile model level {beta}")));
            }
        }
        let model = fit_predictor(&self.model, data)?;
        let scale = match (&self.kind, &self.scale) {
            (ScoreKind::ScaledResidual, Some(kind)) => {
                let resid = data
                    .rows()
                    .map(|(x, y)| model.predict(x).map(|f| (y - f).abs()))
                    .collect::<Result<Vec<_>>>()?;
                Some(fit_predictor(kind, &data.with_responses(resid)?)?)
            }
            (ScoreKind::ScaledResidual, None) => return Err(invalid("scaled residual score needs a scale model")),
            _ => None,
        };
        Ok(TrainedScore::Model { kind: self.kind, model, scale })
    }
}

pub type ScoreFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// A score with all dataset dependence resolved.
#[derive(Clone)]
pub enum TrainedScore {
    Model { kind: ScoreKind, model: Predictor, scale: Option<Predictor> },
    /// Arbitrary caller-supplied `s(x, y)`.
    Custom { name: String, f: ScoreFn },
}

impl fmt::Debug for TrainedScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Model { kind, model, scale } => f
                .debug_struct("Model")
                .field("kind", kind)
                .field("model", model)
                .field("scale", scale)
                .finish(),
            Self::Custom { name, .. } => f.debug_struct("Custom").field("name", name).finish(),
        }
    }
}

impl TrainedScore {
    pub fn custom(name: impl Into<String>, f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom { name: name.into(), f: Arc::new(f) }
    }

    pub fn kind(&self) -> Option<ScoreKind> {
        match self {
            Self::Model { kind, .. } => Some(*kind),
            Self::Custom { .. } => None,
        }
    }

    /// Larger values mean less conforming.
    pub fn eval(&self, x: &[f64], y: f64) -> Result<f64> {
        match self {
            Self::Custom { f, .. } => Ok(f(x, y)),
            Self::Model { kind, model, scale } => match kind {
                ScoreKind::Residual => Ok((y - model.predict(x)?).abs()),
                ScoreKind::ScaledResidual => {
                    let sigma = scale.as_ref().ok_or_else(|| invalid("missing scale model"))?.predict(x)?;
                    Ok((y - model.predict(x)?).abs() / sigma.max(SIGMA_FLOOR))
                }
                ScoreKind::Cqr { .. } => {
                    let (lo, hi) = model.interval(x)?;
                    Ok((lo - y).max(y - hi))
                }
                ScoreKind::HighProbability => {
                    let p = model.proba(x)?;
                    Ok(-p[check_label(y, p.len())?])
                }
                ScoreKind::CumulativeProbability => {
                    let p = model.proba(x)?;
                    let py = p[check_label(y, p.len())?];
                    Ok(p.iter().filter(|&&q| q > py).sum())
                }
                ScoreKind::HighDensity => Ok(-model.density(x, y)?),
            },
        }
    }

    /// Closed-form `{y : s(x, y) <= q}` for interval-shaped real-response scores.
    pub fn sublevel(&self, x: &[f64], q: f64) -> Option<Result<PredictionSet>> {
        let Self::Model { kind, model, scale } = self else { return None };
        if q.is_nan() {
            return Some(Ok(PredictionSet::Empty));
        }
        let (center, half, lo, hi) = match kind {
            ScoreKind::Residual => match model.predict(x) {
                Ok(f) => (f, 1.0, f, f),
                Err(e) => return Some(Err(e)),
            },
            ScoreKind::ScaledResidual => {
                let r = (|| {
                    let f = model.predict(x)?;
                    let s = scale.as_ref().ok_or_else(|| invalid("missing scale model"))?.predict(x)?;
                    Ok((f, s.max(SIGMA_FLOOR)))
                })();
                match r {
                    Ok((f, s)) => (f, s, f, f),
                    Err(e) => return Some(Err(e)),
                }
            }
            ScoreKind::Cqr { .. } => match model.interval(x) {
                Ok((lo, hi)) => ((lo + hi) / 2.0, 1.0, lo, hi),
                Err(e) => return Some(Err(e)),
            },
            _ => return None,
        };
        let _ = center;
        if q == f64::INFINITY {
            return Some(Ok(PredictionSet::All));
        }
        // [lo - q*half, hi + q*half]; for the residual scores lo == hi == f.
        Some(Ok(PredictionSet::interval(lo - q * half, hi + q * half)))
    }

    /// Closed-form `{y : a <= s(x, y) <= b}` up to endpoints, for interval-shaped scores.
    pub(crate) fn band(&self, x: &[f64], a: f64, b: f64) -> Option<Result<PredictionSet>> {
        let upper = match self.sublevel(x, b)? {
            Ok(s) => s,
            Err(e) => return Some(Err(e)),
        };
        if a == f64::NEG_INFINITY {
            return Some(Ok(upper));
        }
        let lower = match self.sublevel(x, a)? {
            Ok(s) => s,
            Err(e) => return Some(Err(e)),
        };
        Some(Ok(upper.minus_interior(&lower)))
    }
}

/// A score function: fixed in advance, or refitted on the (augmented) dataset.
#[derive(Debug, Clone)]
pub enum ScoreFunction {
    Pretrained(Arc<TrainedScore>),
    Refit(ScoreRecipe),
}

impl ScoreFunction {
    pub fn pretrained(score: TrainedScore) -> Self {
        Self::Pretrained(Arc::new(score))
    }

    pub fn custom(name: impl Into<String>, f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::pretrained(TrainedScore::custom(name, f))
    }

    pub fn refit(recipe: ScoreRecipe) -> Self {
        Self::Refit(recipe)
    }

    pub fn is_pretrained(&self) -> bool {
        matches!(self, Self::Pretrained(_))
    }

    /// Resolves the score against `data`; a pretrained score ignores it.
    pub fn fit(&self, data: &Dataset) -> Result<Arc<TrainedScore>> {
        match self {
            Self::Pretrained(s) => Ok(Arc::clone(s)),
            Self::Refit(r) => Ok(Arc::new(r.fit(data)?)),
        }
    }
}

/// `s((x, y); context)`.
pub fn eval_score(s: &ScoreFunction, context: &Dataset, x: &[f64], y: f64) -> Result<f64> {
    s.fit(context)?.eval(x, y)
}

/// `S[i][m] = s((X_i, Y_i); D^{y_m})` for `i <= n` and `S[n][m] = s((x, y_m); D^{y_m})`,
/// where `D^{y_m}` is `data` augmented with `(x, y_m)`.
pub fn score_matrix(s: &ScoreFunction, data: &Dataset, test_x: &[f64], y_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = data.len();
    let mut out = vec![vec![0.0; y_grid.len()]; n + 1];
    for (m, &y) in y_grid.iter().enumerate() {
        let aug = data.augmented(test_x, y)?;
        let fitted = s.fit(&aug).map_err(|e| Error::FitAt { y, source: Box::new(e) })?;
        for (i, row) in out.iter_mut().enumerate() {
            row[m] = fitted.eval(aug.x(i), aug.y(i))?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn line() -> Dataset {
        Dataset::new(vec![vec![0.0], vec![1.0]], vec![0.0, 1.0]).unwrap()
    }

    #[test]
    fn least_squares_exact_line() {
        let p = fit_predictor(&PredictorKind::LeastSquares, &line()).unwrap();
        assert!((p.predict(&[2.0]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_rank_deficiency_is_an_error() {
        let d = Dataset::new(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).unwrap();
        assert!(matches!(fit_predictor(&PredictorKind::LeastSquares, &d), Err(Error::RankDeficient { .. })));
        assert!(fit_predictor(&PredictorKind::Ridge { lambda: 0.1 }, &d).is_ok());
    }

    #[test]
    fn knn_one_recovers_training_response() {
        let d = Dataset::new(vec![vec![0.0], vec![1.0], vec![3.0]], vec![5.0, -1.0, 2.0]).unwrap();
        let p = fit_predictor(&PredictorKind::Knn { k: 1 }, &d).unwrap();
        for (x, y) in d.rows() {
            assert_eq!(p.predict(x).unwrap(), y);
        }
        assert!(fit_predictor(&PredictorKind::Knn { k: 4 }, &d).is_err());
    }

    #[test]
    fn ridge_limit_is_mean_on_centered_data() {
        let d = Dataset::new(vec![vec![-1.0], vec![0.0], vec![1.0]], vec![-2.0, 0.5, 1.5]).unwrap();
        let p = fit_predictor(&PredictorKind::Ridge { lambda: 1e12 }, &d).unwrap();
        assert!((p.predict(&[0.7]).unwrap() - 0.0).abs() < 1e-9);
    }

    #[test]
    fn score_examples() {
        let zero = TrainedScore::Model { kind: ScoreKind::Residual, model: Predictor::Linear { coef: vec![0.0] }, scale: None };
        assert_eq!(zero.eval(&[1.0], 3.0).unwrap(), 3.0);
        let cqr = TrainedScore::Model {
            kind: ScoreKind::Cqr { alpha: 0.1 },
            model: Predictor::HistQuantile { bins: Bins::new(0.0, 1.0, 1).unwrap(), lower: vec![-1.0], upper: vec![1.0] },
            scale: None,
        };
        assert_eq!(cqr.eval(&[0.5], 0.0).unwrap(), -1.0);
        assert_eq!(cqr.eval(&[0.5], 2.0).unwrap(), 1.0);
        let hp = TrainedScore::Model {
            kind: ScoreKind::HighProbability,
            model: Predictor::HistClassProb { bins: Bins::new(0.0, 1.0, 1).unwrap(), probs: vec![vec![1.0, 0.0]] },
            scale: None,
        };
        assert_eq!(hp.eval(&[0.5], 0.0).unwrap(), -1.0);
        assert!(matches!(hp.eval(&[0.5], 2.0), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn cumulative_probability_is_strict() {
        let cp = TrainedScore::Model {
            kind: ScoreKind::CumulativeProbability,
            model: Predictor::HistClassProb { bins: Bins::new(0.0, 1.0, 1).unwrap(), probs: vec![vec![0.4, 0.4, 0.2]] },
            scale: None,
        };
        assert_eq!(cp.eval(&[0.1], 0.0).unwrap(), 0.0);
        assert_eq!(cp.eval(&[0.1], 1.0).unwrap(), 0.0);
        assert!((cp.eval(&[0.1], 2.0).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn classprob_rows_sum_to_one_and_empty_bins_uniform() {
        let d = Dataset::new(vec![vec![0.1], vec![0.2], vec![0.15]], vec![0.0, 1.0, 1.0]).unwrap().with_labels(2).unwrap();
        let p = fit_predictor(&PredictorKind::HistClassProb { bins: Bins::new(0.0, 1.0, 4).unwrap() }, &d).unwrap();
        let a = p.proba(&[0.1]).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(a, vec![1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(p.proba(&[0.9]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn hist_density_integrates_to_one() {
        let d = Dataset::new((0..10).map(|i| vec![i as f64 / 10.0]).collect(), (0..10).map(|i| (i % 4) as f64 * 0.5).collect()).unwrap();
        let bx = Bins::new(0.0, 1.0, 2).unwrap();
        let by = Bins::new(0.0, 2.0, 4).unwrap();
        let p = fit_predictor(&PredictorKind::HistDensity { bins_x: bx, bins_y: by }, &d).unwrap();
        let mass: f64 = (0..4).map(|k| p.density(&[0.2], 0.25 + 0.5 * k as f64).unwrap() * 0.5).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert_eq!(p.density(&[0.2], 5.0).unwrap(), 0.0);
    }

    #[test]
    fn residual_sublevel_is_centered_interval() {
        let s = TrainedScore::Model { kind: ScoreKind::Residual, model: Predictor::Linear { coef: vec![1.0] }, scale: None };
        assert_eq!(s.sublevel(&[1.0], 0.4).unwrap().unwrap(), PredictionSet::interval(0.6, 1.4));
        assert_eq!(s.sublevel(&[1.0], f64::INFINITY).unwrap().unwrap(), PredictionSet::All);
        assert_eq!(s.sublevel(&[1.0], -0.1).unwrap().unwrap(), PredictionSet::Empty);
    }

    #[test]
    fn cqr_sublevel_shape() {
        let s = TrainedScore::Model {
            kind: ScoreKind::Cqr { alpha: 0.1 },
            model: Predictor::HistQuantile { bins: Bins::new(0.0, 1.0, 1).unwrap(), lower: vec![-1.0], upper: vec![2.0] },
            scale: None,
        };
        assert_eq!(s.sublevel(&[0.0], 0.5).unwrap().unwrap(), PredictionSet::interval(-1.5, 2.5));
        // Negative inflation can empty the set.
        assert_eq!(s.sublevel(&[0.0], -2.0).unwrap().unwrap(), PredictionSet::Empty);
    }

    #[test]
    fn score_matrix_matches_independent_refits() {
        let d = Dataset::new(vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.5]], vec![0.3, 1.1, 2.0]).unwrap();
        let s = ScoreFunction::refit(ScoreRecipe::new(ScoreKind::Residual, PredictorKind::LeastSquares));
        let grid = [-1.0, 0.0, 1.0, 2.0, 3.0];
        let x = [1.0, 1.5];
        let m = score_matrix(&s, &d, &x, &grid).unwrap();
        for (j, &y) in grid.iter().enumerate() {
            // Oracle: normal equations solved by Cramer's rule for d = 2.
            let rows: Vec<([f64; 2], f64)> = d.rows().map(|(r, v)| ([r[0], r[1]], v)).chain([(x, y)]).collect();
            let (mut a, mut b, mut c, mut u, mut v) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (r, t) in &rows {
                a += r[0] * r[0];
                b += r[0] * r[1];
                c += r[1] * r[1];
                u += r[0] * t;
                v += r[1] * t;
            }
            let det = a * c - b * b;
            let beta = [(c * u - b * v) / det, (a * v - b * u) / det];
            for (i, (r, t)) in rows.iter().enumerate() {
                let want = (t - beta[0] * r[0] - beta[1] * r[1]).abs();
                assert!((m[i][j] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pretrained_columns_identical() {
        let d = line();
        let s = ScoreFunction::custom("abs", |x, y| (y - x[0]).abs());
        let m = score_matrix(&s, &d, &[0.5], &[0.0, 1.0, 7.0]).unwrap();
        for row in &m[..2] {
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }

    fn recipes() -> Vec<ScoreRecipe> {
        let b = Bins::new(-3.0, 3.0, 4).unwrap();
        vec![
            ScoreRecipe::new(ScoreKind::Residual, PredictorKind::LeastSquares),
            ScoreRecipe::new(ScoreKind::Residual, PredictorKind::Ridge { lambda: 0.5 }),
            ScoreRecipe::new(ScoreKind::Residual, PredictorKind::Knn { k: 3 }),
            ScoreRecipe::new(ScoreKind::ScaledResidual, PredictorKind::LeastSquares).with_scale(PredictorKind::Knn { k: 4 }),
            ScoreRecipe::new(ScoreKind::Cqr { alpha: 0.2 }, PredictorKind::HistQuantile { bins: b, beta: 0.2 }),
            ScoreRecipe::new(ScoreKind::HighDensity, PredictorKind::HistDensity { bins_x: b, bins_y: Bins::new(-5.0, 5.0, 8).unwrap() }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn refit_scores_are_permutation_symmetric(
            rows in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -4.0f64..4.0), 6..20),
            seed in any::<u64>(),
        ) {
            let d = Dataset::new(rows.iter().map(|r| vec![r.0, r.1]).collect(), rows.iter().map(|r| r.2).collect()).unwrap();
            let mut perm: Vec<usize> = (0..d.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let p = d.subset(&perm);
            for r in recipes() {
                let s = ScoreFunction::refit(r);
                let (a, b) = (s.fit(&d).unwrap(), s.fit(&p).unwrap());
                for (x, y) in d.rows() {
                    prop_assert_eq!(a.eval(x, y).unwrap().to_bits(), b.eval(x, y).unwrap().to_bits());
                }
            }
        }

        #[test]
        fn classification_refit_symmetric(
            rows in prop::collection::vec((0.0f64..1.0, 0usize..3), 5..20),
            seed in any::<u64>(),
        ) {
            let d = Dataset::new(rows.iter().map(|r| vec![r.0]).collect(), rows.iter().map(|r| r.1 as f64).collect())
                .unwrap().with_labels(3).unwrap();
            let mut perm: Vec<usize> = (0..d.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let p = d.subset(&perm);
            for kind in [ScoreKind::HighProbability, ScoreKind::CumulativeProbability] {
                for model in [PredictorKind::Knn { k: 3 }, PredictorKind::HistClassProb { bins: Bins::new(0.0, 1.0, 3).unwrap() }] {
                    let s = ScoreFunction::refit(ScoreRecipe::new(kind, model));
                    let (a, b) = (s.fit(&d).unwrap(), s.fit(&p).unwrap());
                    for (x, _) in d.rows() {
                        for y in 0..3 {
                            prop_assert_eq!(a.eval(x, y as f64).unwrap(), b.eval(x, y as f64).unwrap());
                        }
                    }
                }
            }
        }

        #[test]
        fn residual_sublevel_matches_pointwise(f in -5.0f64..5.0, q in 0.0f64..3.0, y in -10.0f64..10.0) {
            let s = TrainedScore::Model { kind: ScoreKind::Residual, model: Predictor::Linear { coef: vec![f] }, scale: None };
            let set = s.sublevel(&[1.0], q).unwrap().unwrap();
            let h = set.hull().unwrap();
            prop_assert!((h.lo + h.hi) / 2.0 - f < 1e-12);
            prop_assert_eq!(set.contains(y), s.eval(&[1.0], y).unwrap() <= q);
        }
    }
}
