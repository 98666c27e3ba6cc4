//! End-to-end tests of the `dfinfer` command line. Expected outputs are built from
//! direct library calls (or hand-derived golden files), never from the CLI itself.

use std::path::{Path, PathBuf};
use std::process::Command as Process;

use dfinfer::conformal::{full_set_least_squares, split_set, Level, PredictionSet, YDomain};
use dfinfer::crossval::{cross_conformal_set, cv_plus_interval, jackknife_interval, FoldPlan, JackknifeVariant};
use dfinfer::online::{BettingFunction, Martingale, OnlineConformal};
use dfinfer::quantile_core::FiniteSample;
use dfinfer::risk_multiplicity::{bh_procedure, outlier_pvalues};
use dfinfer::rng::{rng_from_seed, split_seed};
use dfinfer::scores::{Dataset, Predictor, PredictorKind, ScoreFunction, ScoreKind, ScoreRecipe, TrainedScore};
use dfinfer::weighted::{weighted_split_set, LikelihoodRatio};
use serde_json::Value;

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn golden(name: &str) -> String {
    let p = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{p}: {e}"))
}

/// Runs the CLI in-process: `(exit code, stdout, stderr)`.
fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("dfinfer").chain(args.iter().copied());
    let code = dfinfer_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn ok(args: &[&str]) -> String {
    let (code, out, err) = cli(args);
    assert_eq!(code, 0, "args {args:?} failed: {err}");
    out
}

fn fails(args: &[&str]) -> String {
    let (code, _, err) = cli(args);
    assert_eq!(code, 2, "args {args:?} should fail");
    err
}

fn dataset(name: &str) -> Dataset {
    let t = dfinfer_cli::data::Table::read(Path::new(&fixture(name))).unwrap();
    Dataset::new(t.x.clone(), t.y.clone().unwrap()).unwrap()
}

fn test_rows(name: &str) -> (Vec<Vec<f64>>, Option<Vec<f64>>) {
    let t = dfinfer_cli::data::Table::read(Path::new(&fixture(name))).unwrap();
    (t.x, t.y)
}

/// `{"row":..,"set":..[,"covered":..]}` built directly from library sets.
fn expected_sets(sets: &[PredictionSet], y: Option<&[f64]>) -> String {
    let mut s = String::new();
    for (row, set) in sets.iter().enumerate() {
        let set_json = serde_json::to_string(set).unwrap();
        match y {
            Some(y) => s += &format!("{{\"row\":{row},\"set\":{set_json},\"covered\":{}}}\n", set.contains(y[row])),
            None => s += &format!("{{\"row\":{row},\"set\":{set_json}}}\n"),
        }
    }
    s
}

fn real(v: &Value) -> f64 {
    match v {
        Value::String(s) if s == "inf" => f64::INFINITY,
        Value::String(s) if s == "-inf" => f64::NEG_INFINITY,
        v => v.as_f64().expect("number"),
    }
}

fn parts(line: &str) -> Vec<(f64, f64)> {
    let v: Value = serde_json::from_str(line).unwrap();
    let set = &v["set"];
    match set["type"].as_str().unwrap() {
        "intervals" => set["parts"].as_array().unwrap().iter().map(|p| (real(&p[0]), real(&p[1]))).collect(),
        "all" => vec![(f64::NEG_INFINITY, f64::INFINITY)],
        "empty" => vec![],
        other => panic!("unexpected set type {other}"),
    }
}

fn lines(s: &str) -> Vec<Value> {
    s.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn split_fixture_reproduces_threshold_examples() {
    for alpha in ["0.2", "0.5"] {
        let out = ok(&[
            "predict", "--method", "split", "--model", "fixed:0", "--alpha", alpha,
            "--calibration", &fixture("split4_cal.csv"), "--test", &fixture("split4_test.csv"),
        ]);
        assert_eq!(out, golden(&format!("split4_alpha{alpha}.jsonl")), "alpha {alpha}");
    }
}

#[test]
fn smaller_alpha_gives_nested_larger_sets() {
    let run = |alpha: &str| {
        ok(&[
            "predict", "--alpha", alpha, "--train", &fixture("linear_train.csv"),
            "--calibration", &fixture("linear_cal.csv"), "--test", &fixture("linear_test.csv"),
        ])
    };
    let (wide, narrow) = (run("0.1"), run("0.5"));
    for (w, n) in wide.lines().zip(narrow.lines()) {
        for (lo, hi) in parts(n) {
            assert!(parts(w).iter().any(|&(a, b)| a <= lo && hi <= b), "{n} not inside {w}");
        }
    }
    assert_eq!(wide.lines().count(), 5);
}

#[test]
fn split_matches_library_with_fitted_model() {
    let out = ok(&[
        "predict", "--method", "split", "--model", "ridge:0.5", "--alpha", "0.2", "--train", &fixture("linear_train.csv"),
        "--calibration", &fixture("linear_cal.csv"), "--test", &fixture("linear_test_unlabeled.csv"),
    ]);
    let score = ScoreRecipe::new(ScoreKind::Residual, PredictorKind::Ridge { lambda: 0.5 })
        .fit(&dataset("linear_train.csv"))
        .unwrap();
    let cal = dataset("linear_cal.csv");
    let s = ScoreFunction::pretrained(score);
    let (xs, _) = test_rows("linear_test_unlabeled.csv");
    let level = Level::new(0.2).unwrap();
    for (line, x) in out.lines().zip(&xs) {
        let set = split_set(&s, &cal, x, level, &YDomain::Real).unwrap();
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["set"], serde_json::to_value(&set).unwrap());
        assert!(v.get("covered").is_none() && v.get("pvalue").is_none());
    }
}

#[test]
fn jackknife_plus_matches_library_byte_for_byte() {
    let out = ok(&[
        "predict", "--method", "jackknife-plus", "--alpha", "0.2",
        "--train", &fixture("linear_train.csv"), "--test", &fixture("linear_test.csv"),
    ]);
    let train = dataset("linear_train.csv");
    let (xs, y) = test_rows("linear_test.csv");
    let level = Level::new(0.2).unwrap();
    let sets: Vec<_> = xs
        .iter()
        .map(|x| jackknife_interval(&PredictorKind::LeastSquares, &train, x, level, JackknifeVariant::Plus).unwrap())
        .collect();
    assert_eq!(out, expected_sets(&sets, y.as_deref()));
    assert_eq!(out, golden("jackknife_plus_alpha0.2.jsonl"));
}

#[test]
fn refitting_methods_match_library() {
    let train = dataset("linear_train.csv");
    let (xs, y) = test_rows("linear_test.csv");
    let level = Level::new(0.1).unwrap();
    let common = ["--alpha", "0.1", "--train", &fixture("linear_train.csv"), "--test", &fixture("linear_test.csv")];
    let run = |extra: &[&str]| ok(&[&["predict"], extra, &common[..]].concat());

    let sets: Vec<_> = xs.iter().map(|x| full_set_least_squares(&train, x, level).unwrap()).collect();
    assert_eq!(run(&["--method", "full-least-squares"]), expected_sets(&sets, y.as_deref()));

    let folds = FoldPlan::new(train.len(), 4, 11).unwrap();
    let knn = PredictorKind::Knn { k: 3 };
    let sets: Vec<_> = xs.iter().map(|x| cv_plus_interval(&knn, &train, x, level, &folds).unwrap()).collect();
    let out = run(&["--method", "cv-plus", "--model", "knn:3", "--folds", "4", "--seed", "11"]);
    assert_eq!(out, expected_sets(&sets, y.as_deref()));

    let s = ScoreFunction::refit(ScoreRecipe::new(ScoreKind::Residual, PredictorKind::LeastSquares));
    let sets: Vec<_> =
        xs.iter().map(|x| cross_conformal_set(&s, &train, x, level, &folds, &YDomain::Real).unwrap()).collect();
    let out = run(&["--method", "cross-conformal", "--folds", "4", "--seed", "11"]);
    assert_eq!(out, expected_sets(&sets, y.as_deref()));
}

#[test]
fn fold_assignment_depends_on_seed() {
    let run = |seed: &str| {
        ok(&[
            "predict", "--method", "cv-plus", "--folds", "4", "--seed", seed,
            "--train", &fixture("linear_train.csv"), "--test", &fixture("linear_test.csv"),
        ])
    };
    assert_eq!(run("1"), run("1"));
    assert_ne!(run("1"), run("2"));
}

#[test]
fn weighted_split_matches_library() {
    let out = ok(&[
        "predict", "--method", "weighted-split", "--model", "fixed:1,2", "--tilt", "0,-1.5", "--alpha", "0.2",
        "--calibration", &fixture("linear_cal.csv"), "--test", &fixture("linear_test.csv"),
    ]);
    let score = TrainedScore::Model { kind: ScoreKind::Residual, model: Predictor::Linear { coef: vec![1.0, 2.0] }, scale: None };
    let s = ScoreFunction::pretrained(score);
    let lr = LikelihoodRatio::covariate(|x| (-1.5 * x[1]).exp());
    let cal = dataset("linear_cal.csv");
    let (xs, _) = test_rows("linear_test.csv");
    for (line, x) in out.lines().zip(&xs) {
        let set = weighted_split_set(&s, &cal, x, Level::new(0.2).unwrap(), &lr, &YDomain::Real).unwrap();
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["set"], serde_json::to_value(&set).unwrap());
        assert!(v["threshold"].is_number() || v["threshold"] == "inf");
    }
    let err = fails(&[
        "predict", "--method", "weighted-split", "--model", "fixed:1,2", "--tilt", "1",
        "--calibration", &fixture("linear_cal.csv"), "--test", &fixture("linear_test.csv"),
    ]);
    assert!(err.contains("tilt"), "{err}");
}

#[test]
fn outliers_match_library() {
    let out = ok(&[
        "outliers", "--model", "fixed:1,2", "--q", "0.5",
        "--calibration", &fixture("linear_cal.csv"), "--test", &fixture("linear_test.csv"),
    ]);
    let score = TrainedScore::Model { kind: ScoreKind::Residual, model: Predictor::Linear { coef: vec![1.0, 2.0] }, scale: None };
    let eval = |d: &Dataset| d.rows().map(|(x, y)| score.eval(x, y).unwrap()).collect::<Vec<_>>();
    let test_s = eval(&dataset("linear_test.csv"));
    let p: Vec<f64> = outlier_pvalues(
        &FiniteSample::new(eval(&dataset("linear_cal.csv"))).unwrap(),
        &FiniteSample::new(test_s.clone()).unwrap(),
    )
    .iter()
    .map(|p| p.value)
    .collect();
    let rej = bh_procedure(&p, 0.5).unwrap();
    let recs = lines(&out);
    assert_eq!(recs.len(), p.len());
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(r["score"].as_f64().unwrap(), test_s[i]);
        assert_eq!(r["pvalue"].as_f64().unwrap(), p[i]);
        assert_eq!(r["rejected"].as_bool().unwrap(), rej.indices.contains(&i));
    }
    let err = fails(&["outliers", "--model", "fixed:1,2", "--q", "0.1", "--fwer", "0.1",
        "--calibration", &fixture("linear_cal.csv"), "--test", &fixture("linear_test.csv")]);
    assert!(err.contains("not both"), "{err}");
}

fn monitor_args<'a>(events: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["monitor", "--model", "fixed:0", "--seed", "5", "--alpha", "0.05", "--bound", "10", "--events", events];
    v.extend_from_slice(extra);
    v
}

#[test]
fn monitor_empty_stream_prints_nothing() {
    assert_eq!(ok(&monitor_args(&fixture("events_empty.jsonl"), &[])), "");
}

#[test]
fn monitor_alarm_iff_wealth_crosses_one_over_alpha() {
    let out = ok(&monitor_args(&fixture("events.jsonl"), &[]));
    let recs = lines(&out);
    assert_eq!(recs.len(), 80);
    let threshold = (1.0f64 / 0.05).ln();
    for r in &recs {
        assert_eq!(r["alarm"].as_bool().unwrap(), real(&r["log_m"]) >= threshold, "{r}");
    }
    // The stream shifts after its 40th event; the alarm must not fire before it.
    assert!(recs[..40].iter().all(|r| r["alarm"] == false));
    assert!(recs.iter().any(|r| r["alarm"] == true));
}

#[test]
fn monitor_matches_library_stream() {
    let out = ok(&monitor_args(&fixture("events.jsonl"), &[]));
    let level = Level::new(0.05).unwrap();
    let score = TrainedScore::Model { kind: ScoreKind::Residual, model: Predictor::Linear { coef: vec![0.0] }, scale: None };
    let mut stream = OnlineConformal::new(ScoreFunction::pretrained(score), level);
    let mut mart = Martingale::new(BettingFunction::mixture(vec![0.25, 0.5, 0.75, 1.0]).unwrap(), level);
    let text = std::fs::read_to_string(fixture("events.jsonl")).unwrap();
    for (line, rec) in text.lines().zip(lines(&out)) {
        let ev: Value = serde_json::from_str(line).unwrap();
        let t = ev["t"].as_u64().unwrap();
        let xi = {
            use rand::Rng as _;
            rng_from_seed(split_seed(5, t)).random::<f64>()
        };
        let x: Vec<f64> = ev["x"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        let p = stream.step_smoothed(x, ev["y"].as_f64().unwrap(), xi).unwrap();
        let st = mart.update(p).unwrap();
        assert_eq!(rec["t"].as_u64().unwrap(), t);
        assert_eq!(rec["p"].as_f64().unwrap(), p.value);
        assert_eq!(rec["err"].as_bool().unwrap(), p.value <= 0.05);
        assert_eq!(real(&rec["log_m"]), st.log_wealth);
    }
}

#[test]
fn monitor_snapshot_plus_tail_equals_full_run() {
    let dir = tmp();
    let text = std::fs::read_to_string(fixture("events.jsonl")).unwrap();
    let all: Vec<&str> = text.lines().collect();
    let head = dir.path().join("head.jsonl");
    let tail = dir.path().join("tail.jsonl");
    std::fs::write(&head, all[..33].join("\n") + "\n").unwrap();
    std::fs::write(&tail, all[33..].join("\n") + "\n").unwrap();
    let snap = dir.path().join("snap.json");

    let full = ok(&monitor_args(&fixture("events.jsonl"), &[]));
    let first = ok(&monitor_args(path_str(&head), &["--snapshot-out", path_str(&snap)]));
    let rest = ok(&["monitor", "--snapshot-in", path_str(&snap), "--events", path_str(&tail)]);
    assert_eq!(first + &rest, full);

    let err = fails(&["monitor", "--snapshot-in", path_str(&snap), "--events", path_str(&tail), "--alpha", "0.2"]);
    assert!(err.contains("snapshot"), "{err}");
    // Restating the same settings is allowed.
    let again = ok(&["monitor", "--snapshot-in", path_str(&snap), "--alpha", "0.05", "--events", path_str(&tail)]);
    assert_eq!(again, rest);
    // The tail must continue the snapshot's clock.
    let err = fails(&["monitor", "--snapshot-in", path_str(&snap), "--events", path_str(&head)]);
    assert!(err.contains("line 1") && err.contains("does not exceed"), "{err}");
}

#[test]
fn monitor_rejects_bad_events() {
    let err = fails(&monitor_args(&fixture("events_unordered.jsonl"), &[]));
    assert!(err.contains("line 3") && err.contains("does not exceed"), "{err}");
    let err = fails(&monitor_args(&fixture("events_malformed.jsonl"), &[]));
    assert!(err.contains("line 2") && err.contains("malformed"), "{err}");
    let err = fails(&["monitor", "--model", "fixed:0", "--events", &fixture("events.jsonl")]);
    assert!(err.contains("--seed"), "{err}");
    let err = fails(&["monitor", "--model", "fixed:0", "--seed", "1", "--eta", "0.1", "--events", &fixture("events.jsonl")]);
    assert!(err.contains("eta"), "{err}");
}

#[test]
fn verify_selects_single_suite() {
    let out = ok(&["verify", "--suite", "smoothed-pvalue", "--trials", "500", "--seed", "3"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    let reports = v.as_array().unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0]["suite"], "smoothed-pvalue");
    assert_eq!(reports[0]["trials"], 500);
    assert_eq!(reports[0]["pass"], true);
}

#[test]
fn verify_seed_changes_values_not_verdict() {
    let run = |seed: &str| {
        let out = ok(&["verify", "--suite", "split-coverage", "--seed", seed]);
        let v: Value = serde_json::from_str(&out).unwrap();
        v[0].clone()
    };
    let (a, b) = (run("101"), run("202"));
    assert_ne!(a["checks"], b["checks"]);
    assert_eq!(a["pass"], true);
    assert_eq!(b["pass"], true);
}

#[test]
fn verify_failures_and_unknown_suites() {
    let err = fails(&["verify", "--suite", "split-coverage,no-such-suite", "--seed", "1"]);
    assert!(err.contains("no-such-suite"), "{err}");
    // Zero trials yields no checks, which is not a pass.
    let (code, out, _) = cli(&["verify", "--suite", "split-coverage", "--trials", "0", "--seed", "1"]);
    assert_eq!(code, 1);
    assert_eq!(serde_json::from_str::<Value>(&out).unwrap()[0]["pass"], false);
}

#[test]
fn emitted_config_reproduces_the_run() {
    let dir = tmp();
    let cfg = dir.path().join("run.toml");
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    ok(&[
        "predict", "--method", "cross-conformal", "--model", "knn:4", "--seed", "9",
        "--train", &fixture("linear_train.csv"), "--test", &fixture("linear_test.csv"),
        "--emit-config", path_str(&cfg), "--output", path_str(&a),
    ]);
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("folds = 5") && text.contains("alpha = 0.1"), "{text}");
    ok(&["predict", "--config", path_str(&cfg), "--output", path_str(&b)]);
    let (ra, rb) = (std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
    assert!(!ra.is_empty());
    assert_eq!(ra, rb);

    // Flags override the file.
    let c = ok(&["predict", "--config", path_str(&cfg), "--output", path_str(&b), "--alpha", "0.3"]);
    assert_eq!(c, "");
    assert_ne!(std::fs::read_to_string(&b).unwrap(), ra);
}

#[test]
fn config_rejects_unknown_and_foreign_keys() {
    let dir = tmp();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "alpah = 0.1\n").unwrap();
    let err = fails(&["predict", "--config", path_str(&cfg)]);
    assert!(err.contains("alpah"), "{err}");

    std::fs::write(&cfg, "method = \"split\"\nfolds = 3\nmodel = \"fixed:0\"\n").unwrap();
    let err = fails(&["predict", "--config", path_str(&cfg), "--calibration", &fixture("split4_cal.csv"),
        "--test", &fixture("split4_test.csv")]);
    assert!(err.contains("folds"), "{err}");

    let err = fails(&["report", "--data", &fixture("forecast_train.csv"), "--alpha", "0.1"]);
    assert!(err.contains("alpha"), "{err}");
}

#[test]
fn malformed_csv_names_line_and_column() {
    let err = fails(&["predict", "--method", "full-least-squares", "--train", &fixture("bad_value.csv"),
        "--test", &fixture("split4_test.csv")]);
    assert!(err.contains("bad_value.csv") && err.contains("line 3") && err.contains("column `y`"), "{err}");
    let err = fails(&["predict", "--method", "full-least-squares", "--train", &fixture("bad_header.csv"),
        "--test", &fixture("split4_test.csv")]);
    assert!(err.contains("unknown column `target`"), "{err}");
    let err = fails(&["predict", "--method", "full-least-squares", "--train", &fixture("nonexistent.csv"),
        "--test", &fixture("split4_test.csv")]);
    assert!(err.contains("nonexistent.csv"), "{err}");
}

#[test]
fn incompatible_data_is_an_error() {
    // Two features in the model, one in the data.
    let err = fails(&["predict", "--model", "fixed:1,2", "--calibration", &fixture("split4_cal.csv"),
        "--test", &fixture("split4_test.csv")]);
    assert!(err.contains("dimension"), "{err}");
    let err = fails(&["test-ci", "--method", "local", "--exhaustive", "--data", &fixture("regression.csv")]);
    assert!(err.contains("`w`"), "{err}");
}

#[test]
fn seed_is_mandatory_for_stochastic_methods() {
    for args in [
        vec!["predict", "--method", "cv-plus", "--train", "t.csv", "--test", "s.csv"],
        vec!["predict", "--method", "cross-conformal", "--train", "t.csv", "--test", "s.csv"],
        vec!["test-ci", "--data", "d.csv"],
        vec!["test-ci", "--method", "regression-ci", "--data", "d.csv", "--query", "1", "--range", "0,1",
             "--ci-method", "blurred", "--bandwidth", "1"],
        vec!["verify", "--suite", "split-coverage"],
    ] {
        let err = fails(&args);
        assert!(err.contains("--seed is required"), "{args:?}: {err}");
    }
}

#[test]
fn calibration_commands_match_library() {
    use dfinfer::calibration::{calibration_report, venn_abers, Calibrator, CalibratorKind, Partition};
    let t = dfinfer_cli::data::Table::read(Path::new(&fixture("forecast_train.csv"))).unwrap();
    let f: Vec<f64> = t.x.iter().map(|r| r[0]).collect();
    let y = t.y.unwrap();
    let (test, _) = test_rows("forecast_test.csv");
    let train = fixture("forecast_train.csv");
    let testp = fixture("forecast_test.csv");

    for (m, kind) in [("binning", CalibratorKind::Binning), ("isotonic", CalibratorKind::Isotonic), ("temperature", CalibratorKind::Temperature)] {
        let out = ok(&["calibrate-probs", "--method", m, "--train", &train, "--test", &testp]);
        let cal = Calibrator::fit(kind, &f, &y, &Partition::equal(10).unwrap()).unwrap();
        for (r, x) in lines(&out).iter().zip(&test) {
            assert_eq!(r["calibrated"].as_f64().unwrap(), cal.apply(x[0]), "{m}");
        }
    }
    let out = ok(&["calibrate-probs", "--method", "venn-abers", "--train", &train, "--test", &testp]);
    for (r, x) in lines(&out).iter().zip(&test) {
        let (p0, p1) = venn_abers(&f, &y, x[0]).unwrap();
        assert_eq!((r["p0"].as_f64().unwrap(), r["p1"].as_f64().unwrap()), (p0, p1));
    }

    let out = ok(&["report", "--data", &train, "--bins", "5", "--delta", "0.1"]);
    let rep = calibration_report(&f, &y, 5, 0.1, 20).unwrap();
    assert_eq!(serde_json::from_str::<Value>(&out).unwrap(), serde_json::to_value(&rep).unwrap());
}

#[test]
fn test_ci_matches_library() {
    use dfinfer::independence_regression::{
        binned_local_permutation_test, local_permutation_test, regression_ci, PermutationBudget, RegressionMethod, TestStatistic,
    };
    use dfinfer::scores::Bins;
    let read = |name: &str| dfinfer_cli::data::Table::read(Path::new(&fixture(name))).unwrap();
    let level = Level::new(0.1).unwrap();

    let t = read("small_discrete.csv");
    let x: Vec<f64> = t.x.iter().map(|r| r[0]).collect();
    let out = ok(&["test-ci", "--method", "local", "--exhaustive", "--statistic", "ks", "--data", &fixture("small_discrete.csv")]);
    let r = local_permutation_test(&x, t.y.as_ref().unwrap(), t.w.as_ref().unwrap(), &TestStatistic::KsTwoSample, PermutationBudget::Exhaustive, level).unwrap();
    assert_eq!(serde_json::from_str::<Value>(&out).unwrap(), serde_json::to_value(&r).unwrap());

    let t = read("confounded.csv");
    let x: Vec<f64> = t.x.iter().map(|r| r[0]).collect();
    let out = ok(&["test-ci", "--method", "binned", "--bins", "4", "--bin-range", "0,1", "--lipschitz", "2",
        "--permutations", "199", "--seed", "8", "--data", &fixture("confounded.csv")]);
    let r = binned_local_permutation_test(&x, t.y.as_ref().unwrap(), t.w.as_ref().unwrap(), &TestStatistic::AbsCorrelation,
        &Bins::new(0.0, 1.0, 4).unwrap(), Some(2.0), PermutationBudget::Sampled { m: 199, seed: 8 }, level).unwrap();
    assert_eq!(serde_json::from_str::<Value>(&out).unwrap(), serde_json::to_value(&r).unwrap());

    let out = ok(&["test-ci", "--method", "regression-ci", "--query", "2", "--range", "0,1", "--alpha", "0.05",
        "--data", &fixture("regression.csv")]);
    let ci = regression_ci(&dataset("regression.csv"), &[2.0], Level::new(0.05).unwrap(), &RegressionMethod::Discrete, (0.0, 1.0)).unwrap();
    assert_eq!(serde_json::from_str::<Value>(&out).unwrap(), serde_json::to_value(ci).unwrap());
}

fn binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_dfinfer"))
}

#[test]
fn binary_exit_codes_and_output() {
    let out = Process::new(binary())
        .args(["predict", "--model", "fixed:0", "--alpha", "0.2", "--calibration", &fixture("split4_cal.csv"),
            "--test", &fixture("split4_test.csv")])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden("split4_alpha0.2.jsonl"));

    let out = Process::new(binary()).args(["verify", "--suite", "nope", "--seed", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown suite `nope`"));

    let out = Process::new(binary()).args(["predict", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
