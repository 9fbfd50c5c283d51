use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_beampred"))
}

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny.json")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().arg("--version").output().unwrap().status.code(), Some(0));
}

#[test]
fn bad_arguments_are_validation_errors() {
    assert_eq!(bin().arg("nonsense").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().args(["generate", "--seed", "x"]).output().unwrap().status.code(), Some(1));
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tiny()).unwrap()).unwrap();
    cfg["radio"]["k_dl"] = serde_json::json!(0);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = run(&["generate", "--config", path.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));

    std::fs::write(&path, "{ not json").unwrap();
    let o = run(&["generate", "--config", path.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(code(&o), 1);

    let o = run(&["generate", "--t-pilot", "-1"], &dir.path().join("o"));
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_artifacts_are_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let o = run(&["pretrain", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn selfcheck_passes() {
    let o = bin().arg("selfcheck").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{text}");
    assert!(text.lines().count() >= 8);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = tiny();
    let o = run(&["generate", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for step in ["pretrain", "transfer", "finetune", "scratch", "evaluate"] {
        let o = run(&[step], &out);
        assert_eq!(code(&o), 0, "{step}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["report"], &out);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("method,train_size"));
    assert_eq!(stdout.lines().count(), 1 + 5 * 2);
    let csv = std::fs::read_to_string(out.join("report/report.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "method,bs_id,train_size,seed,eff_rate_bps_hz,top1,top3,trainable_params"
    );
    assert_eq!(csv.lines().count(), 1 + 5 * 2 * 2);

    let o = run(&["generate", "--seed", "8"], &out);
    assert_eq!(code(&o), 0);
}
