//! End-to-end tests of the gph binary: exit codes, file emission, and
//! configuration precedence between --config and the environment variable.

use std::path::Path;
use std::process::{Command, Output};

fn gph() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gph"));
    // isolate from any ambient configuration
    cmd.env_remove("GPH_CONFIG");
    cmd
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_quick_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("quick.toml");
    std::fs::write(
        &path,
        "checks = [\"factorize\"]\nk = 1\nr = 2\nn = 16\nt = 0.3\nseed = 5\n",
    )
    .unwrap();
    path
}

#[test]
fn enumerate_table_and_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("table.csv");
    let out = gph()
        .args(["enumerate", "--k", "3", "--r", "5", "--csv"])
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let table = std::fs::read_to_string(&csv_path).unwrap();
    assert!(table.starts_with("k,r,map_count,class_count,bound_2^(k+r)\n"));
    assert!(table.contains("\n1,3,6,5,16\n"), "missing (1,3) row:\n{table}");
    // the nominal exponential column is exceeded at (3, 5)
    assert!(table.contains("\n3,5,2520,297,256\n"), "missing (3,5) row:\n{table}");
    assert_eq!(table.lines().count(), 1 + 15);
}

#[test]
fn trees_listing_marks_distinguished() {
    let out = gph()
        .args(["trees", "--k", "3", "--rho", "2,2,3,5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("tree 2 (distinguished)"), "{text}");
    assert!(text.contains("tree 1\n"), "{text}");
}

#[test]
fn verify_passes_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let json_path = dir.path().join("report.json");
    let out = gph()
        .args([
            "verify", "--check", "factorize", "--k", "1", "--r", "2", "--n", "16", "--json",
        ])
        .arg(&json_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
    assert_eq!(report["records"][0]["check"], "factorize");
}

#[test]
fn failing_check_exits_one() {
    // trace on a grid larger than the dense-oracle cap is recorded as a
    // failing record, not a process error
    let out = gph()
        .args(["verify", "--check", "trace", "--n", "256", "--d", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn bad_arguments_and_bad_config_exit_two() {
    let out = gph().args(["verify", "--check", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");

    let out = gph()
        .args(["--config", "/nonexistent/gph.toml", "suite"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "k = \"three\"\n").unwrap();
    let out = gph().arg("--config").arg(&bad).arg("suite").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn config_env_var_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_quick_config(dir.path());

    // the environment variable alone selects the configuration
    let out = gph().env("GPH_CONFIG", &good).arg("suite").output().unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("factorize"), "{text}");
    assert!(text.contains("SUITE PASS"), "{text}");

    // --config wins over a broken environment value
    let out = gph()
        .env("GPH_CONFIG", "/nonexistent/gph.toml")
        .arg("--config")
        .arg(&good)
        .arg("suite")
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("SUITE PASS"));
}
