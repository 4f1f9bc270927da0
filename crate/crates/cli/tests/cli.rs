use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn dynpg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynpg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn solve_bandit_value_is_two() {
    let out = dynpg(&["solve", fixture("bandit.json").to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let value = v["values"][0].as_f64().unwrap();
    assert!((value - 2.0).abs() < 1e-8, "{value}");
}

#[test]
fn schedule_reports_horizon() {
    let out = dynpg(&[
        "schedule",
        fixture("bandit.json").to_str().unwrap(),
        "--eps",
        "1",
        "--target",
        "value",
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).lines().any(|l| l == "# H=2"), "{}", stdout(&out));
}

#[test]
fn check_passes_on_bundled_fixtures() {
    let out = dynpg(&["check", "--cases", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
    assert!(text.contains("ring") && text.contains("bandit"));
}

#[test]
fn malformed_mdp_exits_two() {
    let dir = std::env::temp_dir().join(format!("dynpg-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.json");
    std::fs::write(&path, r#"{"n_states": 1}"#).unwrap();
    let out = dynpg(&["solve", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_actions"));
}

#[test]
fn infeasible_theoretical_run_exits_three() {
    let ring = fixture("ring.json");
    let out = dynpg(&["dynpg", ring.to_str().unwrap(), "--mode", "theoretical", "--eps", "0.01"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn saved_stack_decomposes() {
    let dir = std::env::temp_dir().join(format!("dynpg-stack-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let stack = dir.join("stack.json");
    let ring = fixture("ring.json");
    let out = dynpg(&["dynpg", ring.to_str().unwrap(), "--save-stack", stack.to_str().unwrap()]);
    assert!(out.status.success());
    let out = dynpg(&["decompose", ring.to_str().unwrap(), stack.to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success());
    let b: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(b["true_value_error"].as_f64().unwrap() <= 0.1);

    let bandit = fixture("bandit.json");
    let out = dynpg(&["decompose", bandit.to_str().unwrap(), stack.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
