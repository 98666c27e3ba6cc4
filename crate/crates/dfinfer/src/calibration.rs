//! Post-hoc calibration of binary probability forecasts and calibration-error
//! estimators.
//!
//! Bins are half-open on the left, `(c_{k-1}, c_k]`, with `0` in the first bin.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A partition of `[0, 1]` by interior cut points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    cuts: Vec<f64>,
}

impl Partition {
    /// Cuts must lie strictly inside `(0, 1)` and increase strictly.
    pub fn new(cuts: Vec<f64>) -> Result<Self> {
        if cuts.iter().any(|c| !(*c > 0.0 && *c < 1.0)) || cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("cuts must increase strictly inside (0, 1)"));
        }
        Ok(Self { cuts })
    }

    /// `K` equal-width bins with cuts `k / K`.
    pub fn equal(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("need at least one bin"));
        }
        Ok(Self { cuts: (1..k).map(|j| j as f64 / k as f64).collect() })
    }

    pub fn k(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Zero-based bin of `z`.
    pub fn index(&self, z: f64) -> usize {
        self.cuts.partition_point(|&c| c < z)
    }
}

fn check_inputs(f: &[f64], y: &[f64]) -> Result<()> {
    if f.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: f.len(), got: y.len() });
    }
    if f.is_empty() {
        return Err(Error::Empty("calibration data"));
    }
    if let Some((i, v)) = f.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(invalid(format!("forecast {v} at index {i} lies outside [0,1]")));
    }
    if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| **v != 0.0 && **v != 1.0) {
        return Err(invalid(format!("label {v} at index {i} is not binary")));
    }
    Ok(())
}

/// Pool-adjacent-violators on points sorted by `x`, pooling equal `x` first so the
/// fit is a function of `x`. Returns blocks `(x_min, x_max, mean)` in increasing order.
fn pava_blocks(x: &[f64], y: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    // Tie groups first: merging before a group is complete can pool too much.
    let mut groups: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(x.len());
    for i in order {
        match groups.last_mut() {
            Some(last) if last.1 == x[i] => {
                last.2 += y[i];
                last.3 += 1.0;
            }
            _ => groups.push((x[i], x[i], y[i], 1.0)),
        }
    }
    // Block: (x_min, x_max, sum, count).
    let mut blocks: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(groups.len());
    for g in groups {
        blocks.push(g);
        while blocks.len() >= 2 {
            let b = blocks[blocks.len() - 1];
            let a = blocks[blocks.len() - 2];
            // a.mean > b.mean, compared without division.
            if a.2 * b.3 > b.2 * a.3 {
                blocks.pop();
                let last = blocks.last_mut().expect("two blocks");
                *last = (a.0, b.1, a.2 + b.2, a.3 + b.3);
            } else {
                break;
            }
        }
    }
    blocks.into_iter().map(|(lo, hi, s, c)| (lo, hi, s / c)).collect()
}

/// Least-squares nondecreasing fit of `y` on `x`; fitted values in input order.
pub fn isotonic_fit(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if let Some((index, &value)) = x.iter().chain(y).enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    let blocks = pava_blocks(x, y);
    Ok(x.iter().map(|&v| block_value(&blocks, v)).collect())
}

/// Right-continuous step evaluation: value of the last block starting at or below `z`.
fn block_value(blocks: &[(f64, f64, f64)], z: f64) -> f64 {
    let i = blocks.partition_point(|b| b.0 <= z);
    blocks[i.saturating_sub(1)].2
}

/// Clip applied before taking logits.
pub const LOGIT_CLIP: f64 = 1e-12;
/// Bound on `|beta_0|, |beta_1|` for temperature scaling.
pub const BETA_CLAMP: f64 = 50.0;
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 100;

fn logit(z: f64) -> f64 {
    let z = z.clamp(LOGIT_CLIP, 1.0 - LOGIT_CLIP);
    (z / (1.0 - z)).ln()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibratorKind {
    Binning,
    Isotonic,
    Temperature,
}

/// A fitted map `h : [0, 1] -> [0, 1]` applied to forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Calibrator {
    /// Per-bin frequency of `Y = 1`; `1/2` for empty bins.
    Binning { partition: Partition, values: Vec<f64>, counts: Vec<usize> },
    /// Nondecreasing step function with blocks `(x_min, x_max, level)`.
    Isotonic { blocks: Vec<(f64, f64, f64)> },
    /// `h(z) = sigmoid(beta_0 + beta_1 logit(z))`.
    Temperature {
        beta0: f64,
        beta1: f64,
        /// A coefficient hit the bound `|beta| <= 50` (separable or constant labels).
        clamped: bool,
        iterations: usize,
    },
}

impl Calibrator {
    /// `partition` is used only by [`CalibratorKind::Binning`].
    pub fn fit(kind: CalibratorKind, f: &[f64], y: &[f64], partition: &Partition) -> Result<Self> {
        check_inputs(f, y)?;
        Ok(match kind {
            CalibratorKind::Binning => {
                let k = partition.k();
                let mut sums = vec![0.0; k];
                let mut counts = vec![0usize; k];
                for (&z, &l) in f.iter().zip(y) {
                    let b = partition.index(z);
                    sums[b] += l;
                    counts[b] += 1;
                }
                let values = sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { 0.5 } else { s / c as f64 }).collect();
                Self::Binning { partition: partition.clone(), values, counts }
            }
            CalibratorKind::Isotonic => Self::Isotonic { blocks: pava_blocks(f, y) },
            CalibratorKind::Temperature => fit_temperature(f, y),
        })
    }

    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Self::Binning { partition, values, .. } => values[partition.index(z)],
            Self::Isotonic { blocks } => block_value(blocks, z),
            Self::Temperature { beta0, beta1, .. } => sigmoid(beta0 + beta1 * logit(z)),
        }
    }
}

fn log_lik(beta: [f64; 2], l: &[f64], y: &[f64]) -> f64 {
    l.iter()
        .zip(y)
        .map(|(&li, &yi)| {
            let t = beta[0] + beta[1] * li;
            // log sigmoid(t) = -softplus(-t); log(1 - sigmoid(t)) = -softplus(t).
            let softplus = |u: f64| if u > 0.0 { u + (-u).exp().ln_1p() } else { u.exp().ln_1p() };
            if yi == 1.0 { -softplus(-t) } else { -softplus(t) }
        })
        .sum()
}

/// Damped Newton ascent on the logistic log-likelihood from `(0, 1)`.
fn fit_temperature(f: &[f64], y: &[f64]) -> Calibrator {
    let l: Vec<f64> = f.iter().map(|&z| logit(z)).collect();
    let mut beta = [0.0, 1.0];
    let mut ll = log_lik(beta, &l, y);
    let mut iterations = 0;
    let clamp = |b: [f64; 2]| [b[0].clamp(-BETA_CLAMP, BETA_CLAMP), b[1].clamp(-BETA_CLAMP, BETA_CLAMP)];
    for it in 1..=NEWTON_MAX_ITER {
        iterations = it;
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&li, &yi) in l.iter().zip(y) {
            let p = sigmoid(beta[0] + beta[1] * li);
            let w = p * (1.0 - p);
            g0 += yi - p;
            g1 += (yi - p) * li;
            h00 += w;
            h01 += w * li;
            h11 += w * li * li;
        }
        let det = h00 * h11 - h01 * h01;
        let step = if det > 1e-12 * (h00 * h11).max(f64::MIN_POSITIVE) {
            [(h11 * g0 - h01 * g1) / det, (h00 * g1 - h01 * g0) / det]
        } else if h00 > 0.0 {
            // Logits (nearly) constant: only the intercept is identifiable.
            [g0 / h00, 0.0]
        } else {
            // Saturated fit: move along the gradient.
            [g0.signum(), 0.0]
        };
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = clamp([beta[0] + t * step[0], beta[1] + t * step[1]]);
            let cll = log_lik(cand, &l, y);
            if cll >= ll {
                let moved = (cand[0] - beta[0]).abs().max((cand[1] - beta[1]).abs());
                beta = cand;
                ll = cll;
                accepted = moved > NEWTON_TOL;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let clamped = beta.iter().any(|b| b.abs() >= BETA_CLAMP);
    Calibrator::Temperature { beta0: beta[0], beta1: beta[1], clamped, iterations }
}

/// `sqrt(2 log(1/delta) / n)`.
pub fn concentration_radius(n: usize, delta: f64) -> f64 {
    (2.0 * (1.0 / delta).ln() / n as f64).sqrt()
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedEce {
    pub estimate: f64,
    /// `sqrt(2 log(1/delta) / n)`: `estimate + radius` upper-bounds binECE w.p. `1 - delta`.
    pub radius: f64,
    /// `sqrt(K/n)`: expected upward bias bound.
    pub slack: f64,
    pub counts: Vec<usize>,
}

/// `sum_k |sum_{i in bin k} (Y_i - f_i)| / n`.
pub fn binned_ece_estimate(f: &[f64], y: &[f64], partition: &Partition, delta: f64) -> Result<BinnedEce> {
    check_inputs(f, y)?;
    check_delta(delta)?;
    let n = f.len();
    let mut sums = vec![0.0; partition.k()];
    let mut counts = vec![0usize; partition.k()];
    for (&z, &l) in f.iter().zip(y) {
        let b = partition.index(z);
        sums[b] += l - z;
        counts[b] += 1;
    }
    Ok(BinnedEce {
        estimate: sums.iter().map(|s| s.abs()).sum::<f64>() / n as f64,
        radius: concentration_radius(n, delta),
        slack: (partition.k() as f64 / n as f64).sqrt(),
        counts,
    })
}

/// Empirical ECE `sum_v (n_v / n) |mean(Y | f = v) - v|` for forecasts with at most
/// `max_distinct` distinct values. Continuous forecasts are refused: no distribution-free
/// upper bound on ECE can shrink for them; use [`dce_estimate`] instead.
pub fn ece_discrete(f: &[f64], y: &[f64], max_distinct: usize) -> Result<f64> {
    check_inputs(f, y)?;
    let mut pairs: Vec<(f64, f64)> = f.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(f64, f64, usize)> = Vec::new();
    for (v, l) in pairs {
        match groups.last_mut() {
            Some(g) if g.0 == v => {
                g.1 += l;
                g.2 += 1;
            }
            _ => groups.push((v, l, 1)),
        }
    }
    if groups.len() > max_distinct {
        return Err(Error::Unsupported(format!(
            "forecasts take {} distinct values (limit {max_distinct}); ECE is not estimable for continuous forecasts, use dce_estimate",
            groups.len()
        )));
    }
    let n = f.len() as f64;
    Ok(groups.iter().map(|&(v, s, c)| (s / c as f64 - v).abs() * c as f64 / n).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DceEstimate {
    pub estimate: f64,
    /// `estimate + 1/K + sqrt(2 log(1/delta) / n)`, valid w.p. `1 - delta`.
    pub upper: f64,
    pub k: usize,
}

/// `(1/n) sum_k |sum_{f_i in B_k} (Y_i - k/K)|` over `K` equal-width bins.
pub fn dce_estimate(f: &[f64], y: &[f64], k: usize, delta: f64) -> Result<DceEstimate> {
    check_inputs(f, y)?;
    check_delta(delta)?;
    let part = Partition::equal(k)?;
    let mut sums = vec![0.0; k];
    for (&z, &l) in f.iter().zip(y) {
        let b = part.index(z);
        sums[b] += l - (b + 1) as f64 / k as f64;
    }
    let n = f.len();
    let estimate = sums.iter().map(|s| s.abs()).sum::<f64>() / n as f64;
    Ok(DceEstimate { estimate, upper: estimate + 1.0 / k as f64 + concentration_radius(n, delta), k })
}

/// Venn-Abers interval `[p0, p1]` at forecast `test_f`: isotonic fits on the calibration
/// data augmented with `(test_f, 0)` and `(test_f, 1)`, read at the test point.
pub fn venn_abers(cal_f: &[f64], cal_y: &[f64], test_f: f64) -> Result<(f64, f64)> {
    if cal_f.len() != cal_y.len() {
        return Err(Error::DimensionMismatch { expected: cal_f.len(), got: cal_y.len() });
    }
    if !cal_f.is_empty() {
        check_inputs(cal_f, cal_y)?;
    }
    if !(0.0..=1.0).contains(&test_f) {
        return Err(invalid(format!("forecast {test_f} lies outside [0,1]")));
    }
    let mut x = cal_f.to_vec();
    x.push(test_f);
    let fit_at = |label: f64| {
        let mut y = cal_y.to_vec();
        y.push(label);
        block_value(&pava_blocks(&x, &y), test_f)
    };
    Ok((fit_at(0.0), fit_at(1.0)))
}

/// Summary of calibration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Present only when forecasts take at most `max_distinct` values.
    pub ece: Option<f64>,
    pub binned_ece: BinnedEce,
    pub dce: DceEstimate,
    pub delta: f64,
}

pub fn calibration_report(f: &[f64], y: &[f64], k: usize, delta: f64, max_distinct: usize) -> Result<CalibrationReport> {
    let ece = match ece_discrete(f, y, max_distinct) {
        Ok(v) => Some(v),
        Err(Error::Unsupported(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(CalibrationReport {
        ece,
        binned_ece: binned_ece_estimate(f, y, &Partition::equal(k)?, delta)?,
        dce: dce_estimate(f, y, k, delta)?,
        delta,
    })
}
