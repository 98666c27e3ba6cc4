//! Merging prediction sets: strict majority vote, and majority vote recalibrated
//! over a confidence-level grid.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conformal::{union, Level, PredictionSet, YDomain};
use crate::error::{invalid, Error, Result};
use crate::quantile_core::{rank, Rank};
use crate::scores::Dataset;

/// Resolution of the confidence grid `j / 512`, `j = 0..=512`.
pub const GRID_STEPS: usize = 512;

/// Strict majority vote: `y` is kept when more than half of the sets contain it.
///
/// Interval sets are combined exactly; label sets are evaluated per label of `domain`.
pub fn majority_vote(sets: &[PredictionSet], domain: &YDomain) -> Result<PredictionSet> {
    if sets.is_empty() {
        return Err(Error::Empty("sets to aggregate"));
    }
    PredictionSet::require_same_kind(sets)?;
    let k = sets.len();
    let member = |y: f64| 2 * sets.iter().filter(|s| s.contains(y)).count() > k;
    match domain {
        YDomain::Labels(n) => {
            if sets.iter().any(|s| matches!(s, PredictionSet::Intervals(_))) {
                return Err(invalid("interval sets cannot be voted over a label domain"));
            }
            let mask: Vec<bool> = (0..*n).map(|l| member(l as f64)).collect();
            Ok(PredictionSet::from_label_mask(&mask))
        }
        _ => {
            if sets.iter().any(|s| matches!(s, PredictionSet::Labels(_))) {
                return Err(invalid("label sets cannot be voted over a real domain"));
            }
            let breaks = sets.iter().flat_map(PredictionSet::endpoints).collect();
            PredictionSet::from_breakpoints(breaks, |y| Ok(member(y)))
        }
    }
}

/// A set constructor `C(x; confidence)` evaluable at any confidence in `[0, 1]`.
pub trait SetConstructor: Send + Sync {
    fn set(&self, x: &[f64], confidence: f64) -> Result<PredictionSet>;
    /// Whether sets already grow with confidence; enables a binary search on the grid.
    fn is_nested(&self) -> bool {
        false
    }
}

pub type SetFn = Arc<dyn Fn(&[f64], f64) -> Result<PredictionSet> + Send + Sync>;

/// A closure-backed [`SetConstructor`].
#[derive(Clone)]
pub struct FnConstructor {
    f: SetFn,
    nested: bool,
}

impl fmt::Debug for FnConstructor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnConstructor").field("nested", &self.nested).finish()
    }
}

impl FnConstructor {
    pub fn new(f: impl Fn(&[f64], f64) -> Result<PredictionSet> + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), nested: false }
    }

    /// Declares that sets grow with confidence. Wrong declarations break the envelope.
    pub fn nested(mut self) -> Self {
        self.nested = true;
        self
    }
}

impl SetConstructor for FnConstructor {
    fn set(&self, x: &[f64], confidence: f64) -> Result<PredictionSet> {
        (self.f)(x, confidence)
    }
    fn is_nested(&self) -> bool {
        self.nested
    }
}

fn grid_level(j: usize) -> f64 {
    j as f64 / GRID_STEPS as f64
}

/// Members `C_k` with their monotone envelopes on the grid:
/// `C'_k(x; j/512) = union_{i <= j} C_k(x; i/512)`.
#[derive(Clone)]
pub struct SetFamily {
    members: Vec<Arc<dyn SetConstructor>>,
}

impl fmt::Debug for SetFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SetFamily").field("k", &self.members.len()).finish()
    }
}

impl SetFamily {
    pub fn new(members: Vec<Arc<dyn SetConstructor>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("set family"));
        }
        Ok(Self { members })
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    /// Smallest grid index `j` with `y` in `C'_k(x; j/512)`, or `None` if never.
    fn entry_index(&self, k: usize, x: &[f64], y: f64) -> Result<Option<usize>> {
        let m = &self.members[k];
        if m.is_nested() {
            let (mut lo, mut hi) = (0usize, GRID_STEPS + 1);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if m.set(x, grid_level(mid))?.contains(y) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            return Ok((lo <= GRID_STEPS).then_some(lo));
        }
        for j in 0..=GRID_STEPS {
            if m.set(x, grid_level(j))?.contains(y) {
                return Ok(Some(j));
            }
        }
        Ok(None)
    }

    /// Score `s(x, y) = min{j : y in C^mv(x; j/512)}` as a grid index;
    /// `GRID_STEPS + 1` when `y` is never in the vote.
    pub fn score_index(&self, x: &[f64], y: f64) -> Result<usize> {
        let mut entries = (0..self.k())
            .map(|k| Ok(self.entry_index(k, x, y)?.unwrap_or(GRID_STEPS + 1)))
            .collect::<Result<Vec<usize>>>()?;
        entries.sort_unstable();
        // Strict majority needs floor(K/2) + 1 members.
        Ok(entries[self.k() / 2])
    }

    /// Envelope `C'_k(x; j/512)`.
    pub fn envelope(&self, k: usize, x: &[f64], j: usize) -> Result<PredictionSet> {
        if j > GRID_STEPS {
            return Err(invalid(format!("grid index {j} exceeds {GRID_STEPS}")));
        }
        let m = &self.members[k];
        if m.is_nested() {
            return m.set(x, grid_level(j));
        }
        Ok(union((0..=j).map(|i| m.set(x, grid_level(i))).collect::<Result<Vec<_>>>()?))
    }

    /// `C^mv(x; j/512)`.
    pub fn vote(&self, x: &[f64], j: usize, domain: &YDomain) -> Result<PredictionSet> {
        let sets = (0..self.k()).map(|k| self.envelope(k, x, j)).collect::<Result<Vec<_>>>()?;
        majority_vote(&sets, domain)
    }
}

/// Outcome of recalibrating a majority vote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteCalibration {
    /// `lambda_hat` on the grid `j / 512`.
    pub lambda: f64,
    pub index: usize,
    /// False when no grid level meets the empirical target; `lambda` is then 1.
    pub feasible: bool,
}

/// `lambda_hat = inf{lambda in grid : (1/n) sum 1{Y_i not in C^mv(X_i; lambda)} <= alpha - (1-alpha)/n}`.
///
/// Equivalent to split conformal with score `s(x, y) = inf{lambda : y in C^mv(x; lambda)}`.
pub fn recalibrated_vote(family: &SetFamily, cal: &Dataset, level: Level) -> Result<VoteCalibration> {
    if cal.is_empty() {
        return Err(Error::Empty("calibration data"));
    }
    let mut scores = cal.rows().map(|(x, y)| family.score_index(x, y)).collect::<Result<Vec<_>>>()?;
    scores.sort_unstable();
    let n = scores.len();
    let index = match rank(n, level.conformal_tau(n)) {
        Rank::NegInf => 0,
        Rank::At(k) => scores[k - 1],
        Rank::PosInf => GRID_STEPS + 1,
    };
    Ok(if index > GRID_STEPS {
        VoteCalibration { lambda: 1.0, index: GRID_STEPS, feasible: false }
    } else {
        VoteCalibration { lambda: grid_level(index), index, feasible: true }
    })
}

impl VoteCalibration {
    pub fn contains(&self, family: &SetFamily, x: &[f64], y: f64) -> Result<bool> {
        Ok(family.score_index(x, y)? <= self.index)
    }

    pub fn set(&self, family: &SetFamily, x: &[f64], domain: &YDomain) -> Result<PredictionSet> {
        family.vote(x, self.index, domain)
    }
}
