use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Serialize, Serializer};

use crate::error::{invalid, Result};

/// A closed interval `[lo, hi]`, possibly unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// A prediction set: a finite union of closed intervals, a label subset,
/// the whole response space, or nothing.
///
/// Intervals are kept sorted and pairwise disjoint. Open and closed endpoints
/// are not distinguished.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionSet {
    Intervals(Vec<Interval>),
    Labels(Vec<usize>),
    All,
    Empty,
}

impl PredictionSet {
    /// Normalizes a list of `(lo, hi)` pairs: drops empty ones and merges overlaps.
    pub fn from_intervals(parts: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut v: Vec<Interval> = parts
            .into_iter()
            .filter(|&(lo, hi)| lo <= hi && !(lo == hi && lo.is_infinite()))
            .map(|(lo, hi)| Interval::new(lo, hi))
            .collect();
        if v.is_empty() {
            return Self::Empty;
        }
        v.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        let mut merged: Vec<Interval> = Vec::with_capacity(v.len());
        for iv in v {
            match merged.last_mut() {
                Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
                _ => merged.push(iv),
            }
        }
        if merged.len() == 1 && merged[0].lo == f64::NEG_INFINITY && merged[0].hi == f64::INFINITY {
            return Self::All;
        }
        Self::Intervals(merged)
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::from_intervals([(lo, hi)])
    }

    pub fn from_labels(labels: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = labels.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        if v.is_empty() {
            Self::Empty
        } else {
            Self::Labels(v)
        }
    }

    /// Label set over `0..n_labels`, collapsed to `All` when complete.
    pub(crate) fn from_label_mask(mask: &[bool]) -> Self {
        if !mask.is_empty() && mask.iter().all(|&m| m) {
            return Self::All;
        }
        Self::from_labels(mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i))
    }

    pub fn contains(&self, y: f64) -> bool {
        match self {
            Self::All => true,
            Self::Empty => false,
            Self::Labels(l) => y >= 0.0 && y.fract() == 0.0 && l.binary_search(&(y as usize)).is_ok(),
            Self::Intervals(v) => {
                let i = v.partition_point(|iv| iv.hi < y);
                i < v.len() && v[i].contains(y)
            }
        }
    }

    /// Lebesgue length for interval sets, cardinality for label sets.
    pub fn measure(&self) -> f64 {
        match self {
            Self::All => f64::INFINITY,
            Self::Empty => 0.0,
            Self::Labels(l) => l.len() as f64,
            Self::Intervals(v) => v.iter().map(Interval::length).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Self::Empty)
    }

    /// Smallest interval containing the set, `None` when empty or a label set.
    pub fn hull(&self) -> Option<Interval> {
        match self {
            Self::All => Some(Interval::new(f64::NEG_INFINITY, f64::INFINITY)),
            Self::Intervals(v) => Some(Interval::new(v[0].lo, v[v.len() - 1].hi)),
            _ => None,
        }
    }

    /// Interval endpoints, empty for non-interval sets.
    pub fn endpoints(&self) -> Vec<f64> {
        match self {
            Self::Intervals(v) => v.iter().flat_map(|iv| [iv.lo, iv.hi]).collect(),
            _ => Vec::new(),
        }
    }

    /// Set inclusion. Label sets and interval sets are compared on shared semantics only.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Empty, _) | (_, Self::All) => true,
            (Self::All, _) | (_, Self::Empty) => false,
            (Self::Labels(a), Self::Labels(b)) => a.iter().all(|l| b.binary_search(l).is_ok()),
            (Self::Intervals(a), Self::Intervals(b)) => a
                .iter()
                .all(|ia| b.iter().any(|ib| ib.lo <= ia.lo && ia.hi <= ib.hi)),
            _ => false,
        }
    }

    /// Intersection with the closed interval `[lo, hi]`; label sets are returned unchanged.
    pub(crate) fn clip(&self, lo: f64, hi: f64) -> PredictionSet {
        match self {
            Self::All => Self::interval(lo, hi),
            Self::Intervals(v) => Self::from_intervals(v.iter().map(|iv| (iv.lo.max(lo), iv.hi.min(hi)))),
            other => other.clone(),
        }
    }

    /// Removes the open interior of each interval of `holes` from an interval set.
    pub(crate) fn minus_interior(&self, holes: &PredictionSet) -> PredictionSet {
        let holes: Vec<Interval> = match holes {
            Self::Intervals(h) => h.clone(),
            Self::All => vec![Interval::new(f64::NEG_INFINITY, f64::INFINITY)],
            _ => return self.clone(),
        };
        let base: Vec<Interval> = match self {
            Self::Intervals(v) => v.clone(),
            Self::All => vec![Interval::new(f64::NEG_INFINITY, f64::INFINITY)],
            other => return other.clone(),
        };
        let mut out = Vec::new();
        for b in base {
            let mut pieces = vec![(b.lo, b.hi)];
            for h in &holes {
                let mut next = Vec::new();
                for (lo, hi) in pieces {
                    if h.hi <= lo || h.lo >= hi || h.lo == h.hi {
                        next.push((lo, hi));
                        continue;
                    }
                    if lo <= h.lo {
                        next.push((lo, h.lo));
                    }
                    if h.hi <= hi {
                        next.push((h.hi, hi));
                    }
                }
                pieces = next;
            }
            out.extend(pieces);
        }
        Self::from_intervals(out)
    }

    /// Builds `{y : member(y)}` for a predicate that is constant on every open cell
    /// between consecutive breakpoints. Breakpoints themselves are probed too.
    pub(crate) fn from_breakpoints(
        mut breaks: Vec<f64>,
        mut member: impl FnMut(f64) -> Result<bool>,
    ) -> Result<Self> {
        breaks.retain(|b| b.is_finite());
        breaks.sort_by(|a, b| a.total_cmp(b));
        breaks.dedup();
        if breaks.is_empty() {
            return Ok(if member(0.0)? { Self::All } else { Self::Empty });
        }
        let k = breaks.len();
        // Segments alternate: cell 0, point 0, cell 1, ..., point k-1, cell k.
        let mut parts = Vec::new();
        let mut run_start: Option<f64> = None;
        let close = |run_start: &mut Option<f64>, hi: f64, parts: &mut Vec<(f64, f64)>| {
            if let Some(lo) = run_start.take() {
                parts.push((lo, hi));
            }
        };
        for seg in 0..(2 * k + 1) {
            let (probe, lo, hi) = if seg % 2 == 0 {
                let c = seg / 2;
                let lo = if c == 0 { f64::NEG_INFINITY } else { breaks[c - 1] };
                let hi = if c == k { f64::INFINITY } else { breaks[c] };
                let probe = if c == 0 {
                    hi - hi.abs().max(1.0)
                } else if c == k {
                    lo + lo.abs().max(1.0)
                } else {
                    lo + (hi - lo) / 2.0
                };
                (probe, lo, hi)
            } else {
                let b = breaks[seg / 2];
                (b, b, b)
            };
            if member(probe)? {
                if run_start.is_none() {
                    run_start = Some(lo);
                }
                if seg == 2 * k {
                    close(&mut run_start, hi, &mut parts);
                }
            } else {
                let prev_hi = if seg % 2 == 0 { lo } else { breaks[seg / 2] };
                close(&mut run_start, prev_hi, &mut parts);
            }
        }
        Ok(Self::from_intervals(parts))
    }

    /// Label set type check helper.
    pub(crate) fn require_same_kind(sets: &[PredictionSet]) -> Result<()> {
        let labels = sets.iter().any(|s| matches!(s, Self::Labels(_)));
        let intervals = sets.iter().any(|s| matches!(s, Self::Intervals(_)));
        if labels && intervals {
            return Err(invalid("sets over different response domains"));
        }
        Ok(())
    }
}

/// Encodes a real for the JSON set format: `"inf"`/`"-inf"` for infinities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JsonReal(pub f64);

impl Serialize for JsonReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

struct Parts<'a>(&'a [Interval]);

impl Serialize for Parts<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for iv in self.0 {
            seq.serialize_element(&[JsonReal(iv.lo), JsonReal(iv.hi)])?;
        }
        seq.end()
    }
}

impl Serialize for PredictionSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(None)?;
        match self {
            Self::Intervals(v) => {
                m.serialize_entry("type", "intervals")?;
                m.serialize_entry("parts", &Parts(v))?;
            }
            Self::Labels(l) => {
                m.serialize_entry("type", "labels")?;
                m.serialize_entry("items", l)?;
            }
            Self::All => m.serialize_entry("type", "all")?,
            Self::Empty => m.serialize_entry("type", "empty")?,
        }
        m.end()
    }
}
