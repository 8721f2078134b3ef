//! End-to-end runs of the `rt` binary.

use std::process::Command;

fn rt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rt"))
}

#[test]
fn gen_data_writes_csv_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mg.toml");
    std::fs::write(&cfg, "length = 300\n").unwrap();
    let out = rt().args(["gen-data", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("mackey_glass.csv")).unwrap();
    assert_eq!(csv.lines().count(), 301);
    assert!(dir.path().join("mackey_glass.meta").exists());
}

#[test]
fn d2_reports_a_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("d2.toml");
    std::fs::write(&cfg, "dataset = \"lorenz\"\nlength = 600\nd2_points = 500\nd2_embed_dim = 0\n").unwrap();
    let out = rt().args(["d2", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("d2:"));
}

#[test]
fn forecast_writes_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("f.toml");
    std::fs::write(&cfg, "length = 600\nepochs = 1\nl = 2\nn_r = 10\nhorizons = [10]\n").unwrap();
    let out = rt().args(["forecast", "--seed", "3", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = std::fs::read_to_string(dir.path().join("forecast.records")).unwrap();
    assert_eq!(rec.lines().count(), 1);
    assert!(rec.contains("seed:3\t") && rec.contains("config_hash:"));
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "no_such_field = 1\n").unwrap();
    let out = rt().args(["forecast", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = rt().args(["forecast", "--profile", "nope"]).output().unwrap();
    assert!(!out.status.success());
}
