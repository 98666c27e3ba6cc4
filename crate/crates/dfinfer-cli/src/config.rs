//! Run configuration shared by every subcommand.
//!
//! One flat key set serves all commands. A TOML file supplies a base, command-line
//! flags override it, and each command fills its defaults before running. The
//! resolved config is what `--emit-config` writes, so replaying it reproduces the run.
//! Keys that a command (or method) does not read are rejected rather than ignored.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{usage, CliError, CliResult};

/// Point predictor behind a residual score.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    LeastSquares,
    Ridge(f64),
    Knn(usize),
    /// Linear model with the given coefficients; nothing is fitted.
    Fixed(Vec<f64>),
}

impl ModelSpec {
    pub fn is_fixed(&self) -> bool {
        matches!(self, Self::Fixed(_))
    }
}

impl FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = |a: &str| a.parse::<f64>().map_err(|e| format!("model `{s}`: {e}"));
        match (head, arg) {
            ("least-squares", None) => Ok(Self::LeastSquares),
            ("ridge", Some(a)) => Ok(Self::Ridge(num(a)?)),
            ("knn", Some(a)) => a.parse().map(Self::Knn).map_err(|e| format!("model `{s}`: {e}")),
            ("fixed", Some(a)) => a.split(',').map(|c| num(c.trim())).collect::<Result<_, _>>().map(Self::Fixed),
            _ => Err(format!("unknown model `{s}`; expected least-squares, ridge:LAMBDA, knn:K or fixed:C0,C1,...")),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LeastSquares => f.write_str("least-squares"),
            Self::Ridge(l) => write!(f, "ridge:{l:?}"),
            Self::Knn(k) => write!(f, "knn:{k}"),
            Self::Fixed(c) => {
                let parts: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
                write!(f, "fixed:{}", parts.join(","))
            }
        }
    }
}

impl Serialize for ModelSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Every key any command accepts. All optional; `None` means "not given".
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    /// Method id (per command).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Target miscoverage or test level alpha in (0,1).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Number of folds for cv-plus and cross-conformal.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    /// Master seed; mandatory for stochastic methods.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// least-squares | ridge:LAMBDA | knn:K | fixed:C0,C1,...
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    /// Score: residual | identity (identity scores are the `y` column itself).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<String>,
    /// Covariate-shift tilt `a`: likelihood ratio `exp(a . x)`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tilt: Option<Vec<f64>>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// JSONL event stream for `monitor`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<PathBuf>,
    /// Single input CSV for `test-ci` and `report`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,

    /// FDR level for Benjamini-Hochberg.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    /// Family-wise error target; replaces BH when given.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fwer: Option<f64>,
    /// Tracker step size (constant, or the scale of the power schedule).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Power schedule exponent `eps` in `eta t^-(1/2 + eps)`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_power: Option<f64>,
    /// Score bound B; enables the quantile tracker.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    /// Initial tracker threshold in [0, B].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q1: Option<f64>,
    /// Betting mixture grid.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_in: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_out: Option<PathBuf>,

    /// Number of bins.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    /// Bin range `lo,hi`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_range: Option<Vec<f64>>,
    /// Failure probability of the calibration error bounds.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Largest number of distinct forecasts for the exact ECE.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_distinct: Option<usize>,

    /// abs-correlation | ks
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<String>,
    /// Number of sampled permutations.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutations: Option<usize>,
    /// Enumerate all permutations (n <= 8).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exhaustive: Option<bool>,
    /// Lipschitz constant of the confounder dependence (reporting only).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    /// Query point for `regression-ci`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<Vec<f64>>,
    /// Response range `a,b`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<Vec<f64>>,
    /// discrete | binned | blurred
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_method: Option<String>,
    /// Gaussian kernel bandwidth for blurred regression.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,

    /// Suites to run; all when absent.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<Vec<String>>,
    /// Trials per suite; each suite's default when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

/// Keys that configure a monitor stream; a snapshot pins them.
pub const STREAM_KEYS: &[&str] =
    &["alpha", "seed", "model", "score", "train", "eta", "eta-power", "bound", "q1", "lambdas"];

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| usage(format!("cannot encode config: {e}")))
    }

    /// `other`'s given keys replace ours.
    pub fn overlay(&self, other: &Self) -> CliResult<Self> {
        let mut base = serde_json::to_value(self)?;
        let top = serde_json::to_value(other)?;
        if let (Some(b), serde_json::Value::Object(t)) = (base.as_object_mut(), top) {
            b.extend(t);
        }
        Ok(serde_json::from_value(base)?)
    }

    /// Kebab-case names of the keys that are set.
    pub fn keys(&self) -> Vec<String> {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(m)) => m.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }

    /// Rejects keys outside `allowed`, naming the command for the message.
    pub fn restrict(&self, context: &str, allowed: &[&str]) -> CliResult<()> {
        let extra: Vec<String> = self.keys().into_iter().filter(|k| !allowed.contains(&k.as_str())).collect();
        if extra.is_empty() {
            Ok(())
        } else {
            Err(usage(format!("{context}: key(s) not used here: {}", extra.join(", "))))
        }
    }

    /// Restricted to the stream keys, for snapshot comparison.
    pub fn stream_part(&self) -> CliResult<Self> {
        let mut v = serde_json::to_value(self)?;
        if let Some(m) = v.as_object_mut() {
            m.retain(|k, _| STREAM_KEYS.contains(&k.as_str()));
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn require_seed(&self, what: &str) -> CliResult<u64> {
        self.seed.ok_or_else(|| usage(format!("{what} is stochastic: --seed is required")))
    }

    pub fn method_or(&mut self, default: &str) -> String {
        self.method.get_or_insert_with(|| default.to_string()).clone()
    }
}

pub(crate) fn need<'a, T>(v: &'a Option<T>, key: &str, context: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| usage(format!("{context}: --{key} is required")))
}

pub(crate) fn pair(v: &Option<Vec<f64>>, key: &str, context: &str) -> CliResult<(f64, f64)> {
    match need(v, key, context)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        other => Err(usage(format!("{context}: --{key} takes two values, got {}", other.len()))),
    }
}
