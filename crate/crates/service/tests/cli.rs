use std::process::Command;

fn vfnav() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vfnav"))
}

#[test]
fn selftest_passes() {
    let out = vfnav().arg("selftest").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn run_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    let log = dir.path().join("session.jsonl");
    std::fs::write(&scene, "{}").unwrap();
    let out = vfnav().arg("run").arg(&scene).arg("--log").arg(&log).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["grade"], "contained");

    let out = vfnav().arg("replay").arg(&log).output().unwrap();
    assert_eq!(out.status.code(), Some(0));

    // a tampered log is a runtime failure
    let text = std::fs::read_to_string(&log).unwrap().replacen("\"seed\":1", "\"seed\":2", 1);
    std::fs::write(&log, text).unwrap();
    let out = vfnav().arg("replay").arg(&log).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validation_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    std::fs::write(&scene, r#"{"imaging": {"dewarp_degree": 0}}"#).unwrap();
    let out = vfnav().arg("run").arg(&scene).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("imaging.dewarp_degree"));

    let log = dir.path().join("broken.jsonl");
    std::fs::write(&log, "not json\n").unwrap();
    let out = vfnav().arg("replay").arg(&log).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = vfnav().args(["study", "--trials", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_files_are_runtime_errors() {
    let out = vfnav().args(["replay", "/nonexistent/log.jsonl"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn study_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("summary.csv");
    let json = dir.path().join("report.json");
    let out = vfnav()
        .args(["study", "--trials", "30", "--seed", "4", "--arms", "blind"])
        .arg("--csv")
        .arg(&csv)
        .arg("--json")
        .arg(&json)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("arm,trials,breaches"));
    assert!(table.lines().nth(1).unwrap().starts_with("blind,30,"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(report["guided"].is_null());
    assert_eq!(report["operative_time"]["simulated"], false);
}
