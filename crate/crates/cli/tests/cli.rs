use std::path::Path;
use std::process::{Command, Output};

fn evalbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evalbench"))
        .args(args)
        .env_remove("IMPROV_PROVIDER")
        .env_remove("IMPROV_MOCK_FIXTURES")
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path) -> String {
    let out = evalbench(&["synth", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("manifest.jsonl").to_str().unwrap().to_string()
}

#[test]
fn mock_run_writes_all_reports() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let out = dir.path().join("out");
    let result = evalbench(&[
        "run", "--manifest", &manifest, "--ratios", "0.5,1", "--context", "both", "--seed", "3", "--out",
        out.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    assert!(stdout.contains("estimated at most"));
    assert!(stdout.contains("n=5"));
    for name in ["table1.csv", "table2.csv", "records.jsonl"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let table2 = std::fs::read_to_string(out.join("table2.csv")).unwrap();
    assert_eq!(table2.lines().count(), 5);
    assert!(table2.contains("\nContext - 0.5,"));
    assert!(table2.contains("\nNoContext - 1,"));
}

#[test]
fn remote_run_needs_explicit_permission() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let result = evalbench(&[
        "run", "--manifest", &manifest, "--provider", "remote", "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("--allow-network"));
    assert!(String::from_utf8_lossy(&result.stdout).contains("estimated at most"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.jsonl");
    let result = evalbench(&["run", "--manifest", missing.to_str().unwrap(), "--out", "x"]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("cannot read manifest"));

    let manifest = synth(dir.path());
    let result = evalbench(&["run", "--manifest", &manifest, "--ratios", "0,1", "--out", "x"]);
    assert!(!result.status.success());
    let result = evalbench(&["run", "--manifest", &manifest, "--context", "sometimes", "--out", "x"]);
    assert!(!result.status.success());
}
