use std::path::Path;
use std::process::{Command, Output};

fn merge_cbf(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_merge-cbf"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn demo4_prints_orders_and_writes_logs() {
    let dir = tempfile::tempdir().unwrap();
    let out = merge_cbf(dir.path(), &["demo4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("dpc-cbf") && l.contains("M1-H1-M2-H2")));
    assert!(text.lines().any(|l| l.starts_with("fifo") && l.contains("M1-H1-H2-M2")));
    for kind in ["dpc-cbf", "c-cbf", "fifo"] {
        assert!(dir.path().join("demo4").join(format!("{kind}.csv")).is_file());
    }
}

#[test]
fn mc_writes_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = merge_cbf(dir.path(), &["mc", "--runs", "2", "--seed", "5", "--controllers", "dpc-cbf,fifo", "--bins", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("summary.json").is_file());
    assert!(dir.path().join("runs/dpc-cbf/0.csv").is_file());
    assert!(dir.path().join("runs/fifo/1.csv").is_file());
    assert!(!dir.path().join("runs/c-cbf").exists());
    let hist = std::fs::read_to_string(dir.path().join("hist_tel_whpkm_fifo.csv")).unwrap();
    assert!(hist.starts_with("bin_lo,bin_hi,count,sum"));
    let summary: String = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 5"));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_merge-cbf"))
        .env("MERGE_CBF_OUT_DIR", dir.path())
        .args(["tuning", "--points", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("tuning.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("kappa_per_s,stable_eig_per_s,unstable_eig_per_s"));
}

#[test]
fn config_file_is_honoured_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[network]\nmerge_angle_deg = 30\n").unwrap();
    let out = merge_cbf(dir.path(), &["--config", cfg.to_str().unwrap(), "demo4"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid configuration"));
}

#[test]
fn unknown_controller_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = merge_cbf(dir.path(), &["mc", "--controllers", "greedy"]);
    assert!(!out.status.success());
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = merge_cbf(dir.path(), &["verify", "--problems", "200", "--runs", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8(out.stdout).unwrap().contains("FAIL"));
}
