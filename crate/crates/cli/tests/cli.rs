use std::path::Path;
use std::process::{Command, Output};

fn tscf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tscf"))
        .args(args)
        .env("TSCF_WORKSPACE", dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn train(dir: &Path, dataset: &str, out: &str) {
    let o = tscf(
        dir,
        &["train", "--dataset", dataset, "--epochs", "8", "--filters", "4,8,4", "--out", out],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("accuracy"), "{}", stdout(&o));
}

#[test]
fn help_lists_subcommands_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = tscf(dir.path(), &["--help"]);
    assert!(o.status.success());
    for cmd in ["train", "explain", "evaluate", "bench", "report"] {
        assert!(stdout(&o).contains(cmd), "missing {cmd}");
    }
    let o = tscf(dir.path(), &["bench", "--help"]);
    for flag in [
        "--dataset", "--model", "--method", "--tau", "--tolerance", "--k", "--sample-cap", "--timeout", "--seed",
        "--workers", "--out", "TSCF_WORKSPACE",
    ] {
        assert!(stdout(&o).contains(flag), "missing {flag}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = tscf(dir.path(), &["train", "--dataset", "synth:bump", "--arch", "resnet"]);
    assert_eq!(o.status.code(), Some(2));
    let o = tscf(dir.path(), &["train", "--dataset", "synth:bump", "--filters", "4,8"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), "synth:bump", "a.tscf");
    train(dir.path(), "synth:bump", "b.tscf");
    let a = std::fs::read(dir.path().join("a.tscf")).unwrap();
    let b = std::fs::read(dir.path().join("b.tscf")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn explain_writes_counterfactual_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), "synth:bump", "m.tscf");
    let o = tscf(
        dir.path(),
        &["explain", "--model", "m.tscf", "--dataset", "synth:bump", "--index", "0", "--method", "wcf", "--trace", "--out", "ex"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let cf: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ex/cf.json")).unwrap()).unwrap();
    assert!(cf.to_string().contains("trace"), "no trace in {cf}");
    let svg = std::fs::read_to_string(dir.path().join("ex/overlay.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn inapplicable_method_reports_a_clear_error() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), "synth:motions", "m.tscf");
    let o = tscf(
        dir.path(),
        &["explain", "--model", "m.tscf", "--dataset", "synth:motions", "--index", "0", "--method", "ng"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("univariate"), "{}", stderr(&o));
}

#[test]
fn bench_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = tscf(
        dir.path(),
        &[
            "bench", "--dataset", "synth:bump", "--method", "nun_cf", "--method", "ng", "--epochs", "8", "--filters",
            "4,8,4", "--sample-cap", "6", "--out", "res",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let res = dir.path().join("res");
    for f in ["config.json", "aggregates.json", "summary.txt", "timing/aggregates.json"] {
        assert!(res.join(f).exists(), "missing {f}");
    }
    let o = tscf(dir.path(), &["report", "--results", "res", "--format", "table", "--format", "csv", "--out", "rep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("rep/summary.txt")).unwrap();
    assert!(table.contains("nun_cf") && table.contains("ng"), "{table}");
    assert!(dir.path().join("rep/aggregates.csv").exists());
}

#[test]
fn report_without_results_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let o = tscf(dir.path(), &["report", "--results", "empty"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no results found"), "{}", stderr(&o));
}
