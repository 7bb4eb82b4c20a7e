use std::path::Path;
use std::process::{Command, Output};

fn beaflow(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beaflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn order_check_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = beaflow(&["order-check", "--problem", "quadratic", "--flow", "igr"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["run_config.json", "order_check.json", "order_check.csv"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("order_check.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["config"]["flow"], "igr");
    let csv = std::fs::read_to_string(dir.path().join("order_check.csv")).unwrap();
    assert!(csv.starts_with("h,error,"));
}

#[test]
fn band_mismatch_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = beaflow(&["order-check", "--flow", "gradient_flow", "--band", "2.75:3.25"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 6] = [
        &["order-check", "--ladder", "2^-4..2^-5"],
        &["order-check", "--ladder", "banana"],
        &["order-check", "--problem", "nope"],
        &["order-check", "--problem", "quadratic", "--flow", "game_bea"],
        &["gan-coeffs", "--grid", "0"],
        &["regularizers", "--n", "7", "--examples", "28"],
    ];
    for args in cases {
        let o = beaflow(args, dir.path());
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn unreadable_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let o = beaflow(&["order-check", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json"));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = beaflow(&["order-check", "--problem", "quadratic", "--ladder", "1e6,5e5,2.5e5,1.25e5"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn regularizers_and_gan_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = beaflow(&["regularizers", "--problem", "logistic", "--n", "3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("regularizers.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(dir.path().join("order_study.csv").exists());

    let o = beaflow(&["gan-coeffs", "--grid", "4", "--steps", "3"], dir.path());
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("coeffs_saturating.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let traj = std::fs::read_to_string(dir.path().join("gan_trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 4);
}

#[test]
fn check_gradients_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = beaflow(&["check-gradients"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
