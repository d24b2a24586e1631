//! Runs the `csf` binary end to end on small simulated data.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csf_cli::exit;
use serde_json::Value;

fn csf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csf"))
        .args(args)
        .env_remove("CSF_THREADS")
        .env_remove("RUST_LOG")
        .output()
        .expect("run csf")
}

fn ok(args: &[&str]) -> String {
    let out = csf(args);
    assert!(
        out.status.success(),
        "csf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates `n` rows into `dir/name.csv`.
fn simulate(dir: &Path, name: &str, n: usize, seed: u64, effect: &[&str]) -> PathBuf {
    let path = dir.join(format!("{name}.csv"));
    let n = n.to_string();
    let seed = seed.to_string();
    let mut args = vec!["simulate", "--out", s(&path), "--n", &n, "--seed", &seed];
    args.extend_from_slice(effect);
    ok(&args);
    path
}

const SMALL_FOREST: [&str; 6] = ["--num-trees", "60", "--nuisance-trees", "30", "--censoring-trees", "30"];

fn fit(data: &Path, model: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["fit", "--data", s(data), "--model", s(model), "--horizon", "200"];
    args.extend_from_slice(&SMALL_FOREST);
    args.extend_from_slice(extra);
    serde_json::from_str(&ok(&args)).unwrap()
}

#[test]
fn missing_data_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let model = dir.path().join("m.json");
    let out = csf(&["fit", "--data", s(&missing), "--model", s(&model), "--horizon", "10"]);
    assert_eq!(code(&out), exit::IO);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
    assert!(out.stdout.is_empty());
    assert!(!model.exists());
}

#[test]
fn negative_horizon_is_a_parameter_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", 200, 1, &[]);
    let model = dir.path().join("m.json");
    let out = csf(&["fit", "--data", s(&data), "--model", s(&model), "--horizon=-1"]);
    assert_eq!(code(&out), exit::PARAMETER);
    assert!(out.stdout.is_empty());
    assert!(!model.exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = csf(&["ate", "--bogus"]);
    assert_eq!(code(&out), exit::USAGE);
}

#[test]
fn corrupt_model_file_is_a_model_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    std::fs::write(&model, "{\"version\": 1}").unwrap();
    let out = csf(&["ate", "--model", s(&model)]);
    assert_eq!(code(&out), exit::MODEL);
}

#[test]
fn unreachable_download_is_a_network_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("jtpa.csv");
    let out = csf(&["fetch-jtpa", "--url", "http://127.0.0.1:9/jtpa.csv", "--out", s(&out_path)]);
    assert_eq!(code(&out), exit::NETWORK);
    assert!(!out_path.exists());
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = simulate(d, "trial", 600, 3, &["--effect", "step", "--tau-low", "0", "--tau-high", "20"]);
    assert!(d.join("trial.truth.csv").exists());
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(d.join("trial.truth.json")).unwrap()).unwrap();
    assert_eq!(truth["ate_population"], 10.0);

    let model = d.join("model.json");
    let report = fit(&data, &model, &["--w-hat", "auto-mean"]);
    assert_eq!(report["horizon"], 200.0);
    assert_eq!(report["model_hash"].as_str().unwrap().len(), 64);

    // Model-based commands find the training file through the model.
    let ate: Value = serde_json::from_str(&ok(&["ate", "--model", s(&model)])).unwrap();
    assert!(ate["std_err"].as_f64().unwrap() > 0.0);
    let table = ok(&["ate", "--model", s(&model), "--format", "table"]);
    assert!(table.starts_with("estimate std.err\n"));
    let csv = ok(&["ate", "--model", s(&model), "--format", "csv"]);
    assert_eq!(csv.lines().count(), 2);

    let preds = ok(&["predict", "--model", s(&model), "--data", s(&data), "--format", "csv"]);
    assert_eq!(preds.lines().next(), Some("row,tau_hat"));
    assert_eq!(preds.lines().count(), 601);
    let oob = ok(&["predict", "--model", s(&model), "--oob", "--format", "csv"]);
    assert_eq!(oob.lines().count(), 601);

    let blp = ok(&["blp", "--model", s(&model), "--on", "x1,x2", "--format", "table"]);
    assert!(blp.contains("(Intercept)") && blp.contains("x1") && blp.contains("HC3"));
    assert!(!blp.contains("x3"));

    let toc = d.join("toc.csv");
    let svg = d.join("toc.svg");
    let rate = ok(&[
        "rate", "--model", s(&model), "--bootstrap", "20", "--toc-csv", s(&toc), "--svg", s(&svg), "--format", "table",
    ]);
    assert!(rate.starts_with("AUTOC: "));
    assert_eq!(std::fs::read_to_string(&toc).unwrap().lines().count(), 601);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));

    let hist_svg = d.join("hist.svg");
    let hist_csv = d.join("hist.csv");
    let rep = ok(&[
        "report", "--model", s(&model), "--histogram-svg", s(&hist_svg), "--histogram-csv", s(&hist_csv),
    ]);
    assert!(rep.contains("full.sample") && rep.contains("top.20"));
    assert!(hist_svg.exists() && hist_csv.exists());
}

#[test]
fn constant_priority_ends_at_zero() {
    // Tied priorities keep row order, so only TOC(1) is pinned.
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", 300, 4, &[]);
    let model = dir.path().join("m.json");
    let toc = dir.path().join("toc.csv");
    fit(&data, &model, &[]);
    let rate: Value = serde_json::from_str(&ok(&[
        "rate", "--model", s(&model), "--priority", "constant", "--bootstrap", "10", "--toc-csv", s(&toc),
    ]))
    .unwrap();
    assert!(rate["autoc_estimate"].as_f64().unwrap().is_finite());
    let last = std::fs::read_to_string(&toc).unwrap().lines().last().unwrap().to_string();
    assert!(last.ends_with(",0"), "last TOC row {last}");
}

#[test]
fn other_data_is_refused_by_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a", 300, 5, &[]);
    let b = simulate(dir.path(), "b", 300, 6, &[]);
    let model = dir.path().join("m.json");
    fit(&a, &model, &[]);
    let out = csf(&["report", "--model", s(&model), "--data", s(&b)]);
    assert_eq!(code(&out), exit::FINGERPRINT);
    assert!(out.stdout.is_empty());
    let out = csf(&["predict", "--model", s(&model), "--data", s(&b), "--oob"]);
    assert_eq!(code(&out), exit::FINGERPRINT);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", 400, 8, &["--effect", "linear"]);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let model = dir.path().join(format!("m{threads}.json"));
        let mut args = vec!["--threads", threads, "fit", "--data", s(&data), "--model", s(&model), "--horizon", "200"];
        args.extend_from_slice(&SMALL_FOREST);
        // The fit report names the model path, which differs between runs.
        let fit_out = ok(&args);
        let rate = ok(&["--threads", threads, "rate", "--model", s(&model), "--bootstrap", "30"]);
        let report = ok(&["--threads", threads, "report", "--model", s(&model), "--format", "json"]);
        outputs.push((std::fs::read(&model).unwrap(), fit_out.replace(&format!("m{threads}.json"), ""), rate, report));
    }
    assert!(outputs[0].0 == outputs[1].0, "model files differ");
    assert_eq!(outputs[0].1, outputs[1].1);
    assert_eq!(outputs[0].2, outputs[1].2);
    assert_eq!(outputs[0].3, outputs[1].3);
}

#[test]
fn simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a", 100, 9, &[]);
    let b = simulate(dir.path(), "b", 100, 9, &[]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}
