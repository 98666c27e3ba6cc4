//! Subcommand resolution and execution. Each command is a thin wrapper: inputs are
//! parsed, one library call is made per record, and its result is serialized as is.

use std::io::Write;
use std::path::{Path, PathBuf};

use dfinfer::calibration::{calibration_report, venn_abers, Calibrator, CalibratorKind, Partition};
use dfinfer::conformal::{
    conformal_pvalue, full_set_least_squares, split_set, split_threshold, JsonReal, Level, PredictionSet, YDomain,
};
use dfinfer::crossval::{cross_conformal_set, cv_plus_interval, jackknife_interval, FoldPlan, JackknifeVariant};
use dfinfer::harness::{run_suite, suite_info, SuiteReport, SUITES};
use dfinfer::independence_regression::{
    binned_local_permutation_test, local_permutation_test, marginal_independence_test, regression_ci,
    PermutationBudget, RegressionMethod, TestStatistic,
};
use dfinfer::online::{BettingFunction, Martingale, OnlineConformal, StepSchedule, TrackerState};
use dfinfer::quantile_core::FiniteSample;
use dfinfer::risk_multiplicity::{bh_procedure, fwer_reject, outlier_pvalues};
use dfinfer::rng::{rng_from_seed, split_seed};
use dfinfer::scores::{Bins, Dataset, Predictor, PredictorKind, ScoreFunction, ScoreKind, ScoreRecipe, TrainedScore};
use dfinfer::weighted::{shift_weights, weighted_split_set, weighted_split_threshold, LikelihoodRatio, LocalizationKernel};
use serde::{Deserialize, Serialize};

use crate::config::{need, pair, ModelSpec, RunConfig};
use crate::data::{event_err, read_events, Event, Table};
use crate::error::{usage, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Predict,
    Outliers,
    Monitor,
    CalibrateProbs,
    TestCi,
    Verify,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Predict => "predict",
            Self::Outliers => "outliers",
            Self::Monitor => "monitor",
            Self::CalibrateProbs => "calibrate-probs",
            Self::TestCi => "test-ci",
            Self::Verify => "verify",
            Self::Report => "report",
        }
    }
}

/// How a successful run ended. Only `verify` can report a failed check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    Verified { pass: bool },
}

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_LAMBDAS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_ETA: f64 = 0.05;
pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_MAX_DISTINCT: usize = 20;
pub const DEFAULT_PERMUTATIONS: usize = 999;

/// Monitor state carried between runs: the stream keys and every processed event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub config: RunConfig,
    pub events: Vec<Event>,
}

impl Snapshot {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })
    }
}

/// Merges file and flags, folds in a monitor snapshot's stream keys, fills
/// defaults and rejects keys the command does not read.
pub fn prepare(cmd: Command, file: Option<RunConfig>, flags: &RunConfig) -> CliResult<RunConfig> {
    let mut cfg = file.unwrap_or_default().overlay(flags)?;
    if let (Command::Monitor, Some(path)) = (cmd, cfg.snapshot_in.clone()) {
        let snap = Snapshot::load(&path)?;
        let merged = snap.config.overlay(&cfg)?;
        if merged.stream_part()? != snap.config {
            return Err(usage(format!(
                "{}: stream settings differ from the snapshot; drop the overrides to resume",
                path.display()
            )));
        }
        cfg = merged;
    }
    resolve(cmd, cfg)
}

fn resolve(cmd: Command, mut c: RunConfig) -> CliResult<RunConfig> {
    let mut allowed = vec!["output"];
    let ctx = match cmd {
        Command::Predict => {
            let m = c.method_or("split");
            c.alpha.get_or_insert(DEFAULT_ALPHA);
            allowed.extend(["method", "alpha", "train", "test"]);
            match m.as_str() {
                "split" | "weighted-split" => {
                    allowed.extend(["model", "calibration"]);
                    check_model(&mut c, false)?;
                    if m == "weighted-split" {
                        allowed.push("tilt");
                        need(&c.tilt, "tilt", "predict weighted-split")?;
                    }
                }
                "full-least-squares" => {}
                "jackknife-plus" => {
                    allowed.push("model");
                    check_model(&mut c, true)?;
                }
                "cv-plus" | "cross-conformal" => {
                    allowed.extend(["model", "folds", "seed"]);
                    check_model(&mut c, true)?;
                    c.folds.get_or_insert(DEFAULT_FOLDS);
                    c.require_seed(&format!("predict {m}"))?;
                }
                other => return Err(unknown_method(cmd, other, &[
                    "split", "full-least-squares", "jackknife-plus", "cv-plus", "cross-conformal", "weighted-split",
                ])),
            }
            format!("predict {m}")
        }
        Command::Outliers => {
            allowed.extend(["calibration", "test", "q", "fwer"]);
            scored_keys(&mut c, &mut allowed)?;
            if c.fwer.is_none() {
                c.q.get_or_insert(DEFAULT_ALPHA);
            }
            if c.q.is_some() && c.fwer.is_some() {
                return Err(usage("outliers: give either --q (FDR) or --fwer, not both"));
            }
            "outliers".to_string()
        }
        Command::Monitor => {
            allowed.extend(["events", "alpha", "seed", "lambdas", "snapshot-in", "snapshot-out"]);
            c.alpha.get_or_insert(DEFAULT_ALPHA);
            c.lambdas.get_or_insert_with(|| DEFAULT_LAMBDAS.to_vec());
            scored_keys(&mut c, &mut allowed)?;
            if c.bound.is_some() {
                allowed.extend(["bound", "eta", "eta-power", "q1"]);
                c.eta.get_or_insert(DEFAULT_ETA);
                c.q1.get_or_insert(0.0);
            }
            c.require_seed("monitor")?;
            "monitor".to_string()
        }
        Command::CalibrateProbs => {
            let m = c.method_or("binning");
            allowed.extend(["method", "train", "test"]);
            match m.as_str() {
                "binning" => {
                    allowed.push("bins");
                    c.bins.get_or_insert(DEFAULT_BINS);
                }
                "isotonic" | "temperature" | "venn-abers" => {}
                other => return Err(unknown_method(cmd, other, &["binning", "isotonic", "temperature", "venn-abers"])),
            }
            format!("calibrate-probs {m}")
        }
        Command::TestCi => {
            let m = c.method_or("independence");
            c.alpha.get_or_insert(DEFAULT_ALPHA);
            allowed.extend(["method", "alpha", "data"]);
            match m.as_str() {
                "independence" | "local" | "binned" => {
                    allowed.extend(["statistic", "exhaustive"]);
                    c.statistic.get_or_insert_with(|| "abs-correlation".into());
                    if !*c.exhaustive.get_or_insert(false) {
                        allowed.extend(["permutations", "seed"]);
                        c.permutations.get_or_insert(DEFAULT_PERMUTATIONS);
                        c.require_seed("sampled permutation test")?;
                    }
                    if m == "binned" {
                        allowed.extend(["bins", "bin-range", "lipschitz"]);
                        c.bins.get_or_insert(DEFAULT_BINS);
                        pair(&c.bin_range, "bin-range", "test-ci binned")?;
                    }
                }
                "regression-ci" => {
                    allowed.extend(["query", "range", "ci-method"]);
                    need(&c.query, "query", "test-ci regression-ci")?;
                    pair(&c.range, "range", "test-ci regression-ci")?;
                    match c.ci_method.get_or_insert_with(|| "discrete".into()).as_str() {
                        "discrete" => {}
                        "binned" => {
                            allowed.extend(["bins", "bin-range"]);
                            c.bins.get_or_insert(DEFAULT_BINS);
                            pair(&c.bin_range, "bin-range", "test-ci regression-ci")?;
                        }
                        "blurred" => {
                            allowed.extend(["bandwidth", "seed"]);
                            need(&c.bandwidth, "bandwidth", "test-ci regression-ci")?;
                            c.require_seed("blurred regression")?;
                        }
                        other => return Err(usage(format!("unknown ci-method `{other}`; expected discrete, binned or blurred"))),
                    }
                }
                other => return Err(unknown_method(cmd, other, &["independence", "local", "binned", "regression-ci"])),
            }
            format!("test-ci {m}")
        }
        Command::Verify => {
            allowed.extend(["suite", "trials", "seed"]);
            let suites = c.suite.get_or_insert_with(|| SUITES.iter().map(|s| s.id.to_string()).collect());
            for s in suites.iter() {
                suite_info(s)?;
            }
            c.require_seed("verify")?;
            "verify".to_string()
        }
        Command::Report => {
            allowed.extend(["data", "bins", "delta", "max-distinct"]);
            c.bins.get_or_insert(DEFAULT_BINS);
            c.delta.get_or_insert(DEFAULT_DELTA);
            c.max_distinct.get_or_insert(DEFAULT_MAX_DISTINCT);
            "report".to_string()
        }
    };
    c.restrict(&ctx, &allowed)?;
    Ok(c)
}

fn unknown_method(cmd: Command, m: &str, known: &[&str]) -> CliError {
    usage(format!("{}: unknown method `{m}`; expected one of {}", cmd.name(), known.join(", ")))
}

/// Defaults the model and checks it against the training file.
fn check_model(c: &mut RunConfig, must_fit: bool) -> CliResult<()> {
    let fixed = c.model.get_or_insert(ModelSpec::LeastSquares).is_fixed();
    if fixed && must_fit {
        return Err(usage("this method refits the model; a fixed model is not allowed"));
    }
    if fixed && c.train.is_some() {
        return Err(usage("--train is not used with a fixed model"));
    }
    if !fixed && c.train.is_none() {
        return Err(usage("a fitted model needs --train"));
    }
    Ok(())
}

/// Keys of commands built on a pretrained score (`outliers`, `monitor`).
fn scored_keys(c: &mut RunConfig, allowed: &mut Vec<&str>) -> CliResult<()> {
    allowed.push("score");
    match c.score.get_or_insert_with(|| "residual".into()).as_str() {
        "residual" => {
            allowed.extend(["model", "train"]);
            check_model(c, false)
        }
        "identity" => Ok(()),
        other => Err(usage(format!("unknown score `{other}`; expected residual or identity"))),
    }
}

fn predictor_kind(m: &ModelSpec) -> CliResult<PredictorKind> {
    Ok(match m {
        ModelSpec::LeastSquares => PredictorKind::LeastSquares,
        ModelSpec::Ridge(lambda) => PredictorKind::Ridge { lambda: *lambda },
        ModelSpec::Knn(k) => PredictorKind::Knn { k: *k },
        ModelSpec::Fixed(_) => return Err(usage("a fixed model cannot be refitted")),
    })
}

fn read_table(path: &Option<PathBuf>, key: &str, ctx: &str) -> CliResult<(PathBuf, Table)> {
    let p = need(path, key, ctx)?.clone();
    let t = Table::read(&p)?;
    Ok((p, t))
}

fn read_dataset(path: &Option<PathBuf>, key: &str, ctx: &str) -> CliResult<Dataset> {
    let (p, t) = read_table(path, key, ctx)?;
    t.dataset(&p)
}

/// The score behind split-type methods: a fixed linear model, a model fitted on
/// `train`, or the identity `s(x, y) = y`.
pub fn pretrained_score(c: &RunConfig, ctx: &str) -> CliResult<TrainedScore> {
    if c.score.as_deref() == Some("identity") {
        return Ok(TrainedScore::custom("identity", |_, y| y));
    }
    match need(&c.model, "model", ctx)? {
        ModelSpec::Fixed(coef) => Ok(TrainedScore::Model {
            kind: ScoreKind::Residual,
            model: Predictor::Linear { coef: coef.clone() },
            scale: None,
        }),
        m => {
            let train = read_dataset(&c.train, "train", ctx)?;
            Ok(ScoreRecipe::new(ScoreKind::Residual, predictor_kind(m)?).fit(&train)?)
        }
    }
}

fn level(c: &RunConfig) -> CliResult<Level> {
    Ok(Level::new(c.alpha.unwrap_or(DEFAULT_ALPHA))?)
}

fn write_line<T: Serialize>(out: &mut dyn Write, v: &T) -> CliResult<()> {
    serde_json::to_writer(&mut *out, v)?;
    out.write_all(b"\n").map_err(|e| CliError::io("<output>", e))
}

/// One prediction per test row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictRecord {
    pub row: usize,
    pub set: PredictionSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<JsonReal>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pvalue: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covered: Option<bool>,
}

pub fn execute(cmd: Command, c: &RunConfig, out: &mut dyn Write, diag: &mut dyn Write) -> CliResult<Status> {
    match cmd {
        Command::Predict => predict(c, out),
        Command::Outliers => outliers(c, out),
        Command::Monitor => monitor(c, out),
        Command::CalibrateProbs => calibrate_probs(c, out),
        Command::TestCi => test_ci(c, out),
        Command::Verify => verify(c, out, diag),
        Command::Report => report(c, out),
    }
    .map(|s| s.unwrap_or(Status::Done))
}

fn predict(c: &RunConfig, out: &mut dyn Write) -> CliResult<Option<Status>> {
    let method = c.method.as_deref().unwrap_or("split");
    let ctx = format!("predict {method}");
    let level = level(c)?;
    let (_, test) = read_table(&c.test, "test", &ctx)?;
    let test_y = test.y.clone();
    let record = |row: usize, set: PredictionSet, threshold: Option<f64>, pvalue: Option<f64>| PredictRecord {
        row,
        covered: test_y.as_ref().map(|y| set.contains(y[row])),
        set,
        threshold: threshold.map(JsonReal),
        pvalue,
    };

    match method {
        "split" | "weighted-split" => {
            let score = pretrained_score(c, &ctx)?;
            let cal = read_dataset(&c.calibration, "calibration", &ctx)?;
            let cal_scores = cal.rows().map(|(x, y)| score.eval(x, y)).collect::<dfinfer::Result<Vec<_>>>()?;
            let s = ScoreFunction::pretrained(score.clone());
            if method == "split" {
                let q = split_threshold(&FiniteSample::new(cal_scores.clone())?, level);
                for (row, x) in test.x.iter().enumerate() {
                    let set = split_set(&s, &cal, x, level, &YDomain::Real)?;
                    let pvalue = match &test_y {
                        Some(y) => {
                            let mut all = cal_scores.clone();
                            all.push(score.eval(x, y[row])?);
                            Some(conformal_pvalue(&FiniteSample::new(all)?).value)
                        }
                        None => None,
                    };
                    write_line(out, &record(row, set, Some(q), pvalue))?;
                }
            } else {
                let a = c.tilt.clone().unwrap_or_default();
                if a.len() != cal.dim() {
                    return Err(usage(format!("tilt has {} coefficients but the data have {} features", a.len(), cal.dim())));
                }
                let lr = LikelihoodRatio::covariate(move |x| x.iter().zip(&a).map(|(u, v)| u * v).sum::<f64>().exp());
                for (row, x) in test.x.iter().enumerate() {
                    let w = shift_weights(&lr, &cal, x, f64::NAN)?;
                    let q = weighted_split_threshold(&cal_scores, &w, level)?;
                    let set = weighted_split_set(&s, &cal, x, level, &lr, &YDomain::Real)?;
                    write_line(out, &record(row, set, Some(q), None))?;
                }
            }
        }
        "full-least-squares" => {
            let train = read_dataset(&c.train, "train", &ctx)?;
            for (row, x) in test.x.iter().enumerate() {
                write_line(out, &record(row, full_set_least_squares(&train, x, level)?, None, None))?;
            }
        }
        "jackknife-plus" => {
            let train = read_dataset(&c.train, "train", &ctx)?;
            let alg = predictor_kind(need(&c.model, "model", &ctx)?)?;
            for (row, x) in test.x.iter().enumerate() {
                let set = jackknife_interval(&alg, &train, x, level, JackknifeVariant::Plus)?;
                write_line(out, &record(row, set, None, None))?;
            }
        }
        "cv-plus" | "cross-conformal" => {
            let train = read_dataset(&c.train, "train", &ctx)?;
            let kind = predictor_kind(need(&c.model, "model", &ctx)?)?;
            let folds = FoldPlan::new(train.len(), c.folds.unwrap_or(DEFAULT_FOLDS), c.require_seed(&ctx)?)?;
            let s = ScoreFunction::refit(ScoreRecipe::new(ScoreKind::Residual, kind.clone()));
            for (row, x) in test.x.iter().enumerate() {
                let set = if method == "cv-plus" {
                    cv_plus_interval(&kind, &train, x, level, &folds)?
                } else {
                    cross_conformal_set(&s, &train, x, level, &folds, &YDomain::Real)?
                };
                write_line(out, &record(row, set, None, None))?;
            }
        }
        other => return Err(unknown_method(Command::Predict, other, &[])),
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct OutlierRecord {
    row: usize,
    score: f64,
    pvalue: f64,
    rejected: bool,
}

fn outliers(c: &RunConfig, out: &mut dyn Write) -> CliResult<Option<Status>> {
    let ctx = "outliers";
    let score = pretrained_score(c, ctx)?;
    let cal = read_dataset(&c.calibration, "calibration", ctx)?;
    let test = read_dataset(&c.test, "test", ctx)?;
    let eval = |d: &Dataset| d.rows().map(|(x, y)| score.eval(x, y)).collect::<dfinfer::Result<Vec<_>>>();
    let (cal_s, test_s) = (eval(&cal)?, eval(&test)?);
    let p: Vec<f64> = outlier_pvalues(&FiniteSample::new(cal_s)?, &FiniteSample::new(test_s.clone())?)
        .into_iter()
        .map(|p| p.value)
        .collect();
    let rej = match c.fwer {
        Some(f) => fwer_reject(&p, f)?,
        None => bh_procedure(&p, c.q.unwrap_or(DEFAULT_ALPHA))?,
    };
    for (row, (&score, &pvalue)) in test_s.iter().zip(&p).enumerate() {
        let rejected = rej.indices.binary_search(&row).is_ok();
        write_line(out, &OutlierRecord { row, score, pvalue, rejected })?;
    }
    Ok(None)
}

/// One monitor output line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorRecord {
    pub t: u64,
    pub p: f64,
    /// `p_t <= alpha`.
    pub err: bool,
    /// Tracker threshold used for this event.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    /// Tracker miss `score > q`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracker_err: Option<bool>,
    pub log_m: JsonReal,
    /// `M_t >= 1/alpha` at this event.
    pub alarm: bool,
}

struct Monitor {
    seed: u64,
    score: TrainedScore,
    stream: OnlineConformal,
    martingale: Martingale,
    tracker: Option<TrackerState>,
    last_t: Option<u64>,
    history: Vec<Event>,
}

impl Monitor {
    fn new(c: &RunConfig) -> CliResult<Self> {
        let level = level(c)?;
        let score = pretrained_score(c, "monitor")?;
        let bet = BettingFunction::mixture(c.lambdas.clone().unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec()))?;
        let tracker = match c.bound {
            Some(b) => {
                let eta = c.eta.unwrap_or(DEFAULT_ETA);
                let schedule = match c.eta_power {
                    Some(eps) => StepSchedule::Power { scale: eta, eps },
                    None => StepSchedule::Constant { eta },
                };
                Some(TrackerState::new(c.q1.unwrap_or(0.0), level, b, schedule)?)
            }
            None => None,
        };
        Ok(Self {
            seed: c.require_seed("monitor")?,
            stream: OnlineConformal::new(ScoreFunction::pretrained(score.clone()), level),
            score,
            martingale: Martingale::new(bet, level),
            tracker,
            last_t: None,
            history: Vec::new(),
        })
    }

    /// Smoothing draw for event `t`; a pure function of `(seed, t)`.
    fn xi(&self, t: u64) -> f64 {
        use rand::Rng as _;
        rng_from_seed(split_seed(self.seed, t)).random::<f64>()
    }

    fn step(&mut self, ev: &Event) -> Result<MonitorRecord, String> {
        let t = match (ev.t, self.last_t) {
            (Some(t), Some(last)) if t <= last => return Err(format!("event time {t} does not exceed previous time {last}")),
            (Some(t), _) => t,
            (None, last) => last.map_or(1, |l| l + 1),
        };
        let mut step = || -> dfinfer::Result<MonitorRecord> {
            let xi = self.xi(t);
            let p = self.stream.step_smoothed(ev.x.clone(), ev.y, xi)?;
            let err = self.stream.state().errs.last().copied().unwrap_or(false);
            let st = self.martingale.update(p)?.clone();
            let (q, tracker_err) = match &mut self.tracker {
                Some(tr) => {
                    let q = tr.q;
                    let covered = tr.step(self.score.eval(&ev.x, ev.y)?)?;
                    (Some(q), Some(!covered))
                }
                None => (None, None),
            };
            Ok(MonitorRecord {
                t,
                p: p.value,
                err,
                q,
                tracker_err,
                log_m: JsonReal(st.log_wealth),
                alarm: st.log_wealth >= st.log_threshold,
            })
        };
        let rec = step().map_err(|e| e.to_string())?;
        self.last_t = Some(t);
        self.history.push(Event { x: ev.x.clone(), y: ev.y, t: Some(t) });
        Ok(rec)
    }
}

fn monitor(c: &RunConfig, out: &mut dyn Write) -> CliResult<Option<Status>> {
    let mut m = Monitor::new(c)?;
    if let Some(path) = &c.snapshot_in {
        let snap = Snapshot::load(path)?;
        for (i, ev) in snap.events.iter().enumerate() {
            m.step(ev).map_err(|e| CliError::Config { path: path.clone(), message: format!("event {}: {e}", i + 1) })?;
        }
    }
    let events_path = need(&c.events, "events", "monitor")?;
    for (line, ev) in read_events(events_path)? {
        let rec = m.step(&ev).map_err(|e| event_err(events_path, line, e))?;
        write_line(out, &rec)?;
    }
    if let Some(path) = &c.snapshot_out {
        let snap = Snapshot { config: c.stream_part()?, events: m.history };
        let text = serde_json::to_string(&snap)?;
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CalibratedRecord {
    row: usize,
    forecast: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibrated: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p1: Option<f64>,
}

fn calibrate_probs(c: &RunConfig, out: &mut dyn Write) -> CliResult<Option<Status>> {
    let method = c.method.as_deref().unwrap_or("binning");
    let ctx = format!("calibrate-probs {method}");
    let (train_path, train) = read_table(&c.train, "train", &ctx)?;
    let (test_path, test) = read_table(&c.test, "test", &ctx)?;
    let f = train.column0(&train_path)?;
    let y = train.require_y(&train_path)?;
    let tf = test.column0(&test_path)?;
    let kind = match method {
        "binning" => Some(CalibratorKind::Binning),
        "isotonic" => Some(CalibratorKind::Isotonic),
        "temperature" => Some(CalibratorKind::Temperature),
        _ => None,
    };
    match kind {
        Some(kind) => {
            let partition = Partition::equal(c.bins.unwrap_or(DEFAULT_BINS))?;
            let cal = Calibrator::fit(kind, &f, y, &partition)?;
            for (row, &z) in tf.iter().enumerate() {
                let rec = CalibratedRecord { row, forecast: z, calibrated: Some(cal.apply(z)), p0: None, p1: None };
                write_line(out, &rec)?;
            }
        }
        None => {
            for (row, &z) in tf.iter().enumerate() {
                let (p0, p1) = venn_abers(&f, y, z)?;
                write_line(out, &CalibratedRecord { row, forecast: z, calibrated: None, p0: Some(p0), p1: Some(p1) })?;
            }
        }
    }
    Ok(None)
}

fn test_ci(c: &RunConfig, out: &mut dyn Write) -> CliResult<Option<Status>> {
    let method = c.method.as_deref().unwrap_or("independence");
    let ctx = format!("test-ci {method}");
    let level = level(c)?;
    let (path, t) = read_table(&c.data, "data", &ctx)?;
    if method == "regression-ci" {
        let train = t.dataset(&path)?;
        let range = pair(&c.range, "range", &ctx)?;
        let rm = match c.ci_method.as_deref().unwrap_or("discrete") {
            "binned" => {
                let (lo, hi) = pair(&c.bin_range, "bin-range", &ctx)?;
                RegressionMethod::Binned(vec![Bins::new(lo, hi, c.bins.unwrap_or(DEFAULT_BINS))?; train.dim()])
            }
            "blurred" => RegressionMethod::Blurred {
                kernel: LocalizationKernel::gaussian(*need(&c.bandwidth, "bandwidth", &ctx)?),
                seed: c.require_seed(&ctx)?,
            },
            _ => RegressionMethod::Discrete,
        };
        let ci = regression_ci(&train, need(&c.query, "query", &ctx)?, level, &rm, range)?;
        write_line(out, &ci)?;
        return Ok(None);
    }
    let x = t.column0(&path)?;
    let y = t.require_y(&path)?;
    let stat = match c.statistic.as_deref().unwrap_or("abs-correlation") {
        "abs-correlation" => TestStatistic::AbsCorrelation,
        "ks" => TestStatistic::KsTwoSample,
        other => return Err(usage(format!("unknown statistic `{other}`; expected abs-correlation or ks"))),
    };
    let budget = if c.exhaustive == Some(true) {
        PermutationBudget::Exhaustive
    } else {
        PermutationBudget::Sampled { m: c.permutations.unwrap_or(DEFAULT_PERMUTATIONS), seed: c.require_seed(&ctx)? }
    };
    let r = match method {
        "independence" => marginal_independence_test(&x, y, &stat, budget, level)?,
        "local" => local_permutation_test(&x, y, t.require_w(&path)?, &stat, budget, level)?,
        "binned" => {
            let (lo, hi) = pair(&c.bin_range, "bin-range", &ctx)?;
            let bins = Bins::new(lo, hi, c.bins.unwrap_or(DEFAULT_BINS))?;
            binned_local_permutation_test(&x, y, t.require_w(&path)?, &stat, &bins, c.lipschitz, budget, level)?
        }
        other => return Err(unknown_method(Command::TestCi, other, &[])),
    };
    write_line(out, &r)?;
    Ok(None)
}

fn verify(c: &RunConfig, out: &mut dyn Write, diag: &mut dyn Write) -> CliResult<Option<Status>> {
    let seed = c.require_seed("verify")?;
    let suites = c.suite.clone().unwrap_or_default();
    let mut reports: Vec<SuiteReport> = Vec::with_capacity(suites.len());
    for id in &suites {
        let trials = match c.trials {
            Some(r) => r,
            None => suite_info(id)?.default_trials,
        };
        let r = run_suite(id, trials, seed)?;
        let _ = writeln!(diag, "{} {id} R={trials} seed={seed}", if r.pass { "PASS" } else { "FAIL" });
        reports.push(r);
    }
    serde_json::to_writer_pretty(&mut *out, &reports)?;
    out.write_all(b"\n").map_err(|e| CliError::io("<output>", e))?;
    Ok(Some(Status::Verified { pass: !reports.is_empty() && reports.iter().all(|r| r.pass) }))
}

fn report(c: &RunConfig, out: &mut dyn Write) -> CliResult<Option<Status>> {
    let (path, t) = read_table(&c.data, "data", "report")?;
    let f = t.column0(&path)?;
    let y = t.require_y(&path)?;
    let r = calibration_report(
        &f,
        y,
        c.bins.unwrap_or(DEFAULT_BINS),
        c.delta.unwrap_or(DEFAULT_DELTA),
        c.max_distinct.unwrap_or(DEFAULT_MAX_DISTINCT),
    )?;
    write_line(out, &r)?;
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig { train: Some("t.csv".into()), test: Some("s.csv".into()), ..Default::default() }
    }

    #[test]
    fn defaults_are_filled() {
        let c = prepare(Command::Predict, None, &RunConfig { calibration: Some("c.csv".into()), ..base() }).unwrap();
        assert_eq!(c.method.as_deref(), Some("split"));
        assert_eq!(c.alpha, Some(DEFAULT_ALPHA));
        assert_eq!(c.model, Some(ModelSpec::LeastSquares));
    }

    #[test]
    fn foreign_keys_are_rejected() {
        let flags = RunConfig { method: Some("jackknife-plus".into()), folds: Some(3), ..base() };
        let e = prepare(Command::Predict, None, &flags).unwrap_err().to_string();
        assert!(e.contains("folds"), "{e}");
        let flags = RunConfig { events: Some("e".into()), seed: Some(1), bins: Some(3), ..Default::default() };
        let flags = RunConfig { score: Some("identity".into()), ..flags };
        assert!(prepare(Command::Monitor, None, &flags).is_err());
    }

    #[test]
    fn stochastic_methods_need_a_seed() {
        for m in ["cv-plus", "cross-conformal"] {
            let flags = RunConfig { method: Some(m.into()), ..base() };
            let e = prepare(Command::Predict, None, &flags).unwrap_err().to_string();
            assert!(e.contains("--seed"), "{e}");
            assert!(prepare(Command::Predict, None, &RunConfig { seed: Some(3), ..flags }).is_ok());
        }
        assert!(prepare(Command::Verify, None, &RunConfig::default()).is_err());
        let flags = RunConfig { data: Some("d".into()), ..Default::default() };
        assert!(prepare(Command::TestCi, None, &flags).is_err());
        assert!(prepare(Command::TestCi, None, &RunConfig { exhaustive: Some(true), ..flags }).is_ok());
    }

    #[test]
    fn fixed_models_cannot_be_refitted() {
        let flags = RunConfig { method: Some("jackknife-plus".into()), model: Some(ModelSpec::Fixed(vec![1.0])), ..base() };
        assert!(prepare(Command::Predict, None, &flags).is_err());
        let flags = RunConfig { method: Some("split".into()), calibration: Some("c".into()), ..flags };
        let e = prepare(Command::Predict, None, &flags).unwrap_err().to_string();
        assert!(e.contains("--train"), "{e}");
    }

    #[test]
    fn verify_rejects_unknown_suites() {
        let flags = RunConfig { suite: Some(vec!["nope".into()]), seed: Some(1), ..Default::default() };
        assert!(matches!(
            prepare(Command::Verify, None, &flags),
            Err(CliError::Library(dfinfer::Error::UnknownSuite(_)))
        ));
    }
}
