use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn isac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isac")).args(args).output().expect("binary runs")
}

/// CSV text with the trailing timing column removed.
fn without_timing(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn figures_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = isac(&["figures", "--out", out.to_str().unwrap(), "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names = ["pd_vs_gamma.csv", "pd_vs_pfa.csv", "pd_vs_pmax.csv", "pd_vs_rotation.csv"];
    for name in names {
        let (x, y) = (without_timing(&a.join(name)), without_timing(&b.join(name)));
        assert!(x.lines().count() > 1, "{name} is empty");
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn solve_prints_summary() {
    let o = isac(&["solve", "--antennas", "8", "--scenario", "2", "--receiver", "1", "--gamma-db", "10"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("status       optimal"), "{text}");
    assert!(text.contains("p_D"));
    assert!(text.contains("sinr slack"));
}

#[test]
fn detect_mc_reports_both_estimates() {
    let o = isac(&["detect-mc", "--antennas", "8", "--trials", "20000", "--pfa", "0.01", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("closed form") && text.contains("simulated"), "{text}");
}

#[test]
fn sweep_writes_csv_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{
        "scene": {"builtin": "one_cu"},
        "antennas": 8,
        "variants": [{"scenario": "SyncI", "receiver": "TypeII", "scheme": "Proposed"}],
        "param": "pmax",
        "grid": [5.0, 10.0],
        "p_fa": 0.001,
        "gamma_db": 20.0,
        "seed": 1
    }"#;
    let cfg = dir.path().join("sweep.json");
    fs::write(&cfg, spec).unwrap();
    let out = dir.path().join("out.csv");
    let o = isac(&["sweep", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "scenario,receiver,scheme,param,value,omega,pd_cf,pd_mc,pfa_mc,status,ms");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,2,proposed,p_max,5.00000000000e0,"));
}

#[test]
fn bad_config_fails_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    fs::write(&cfg, r#"{"scene": {"builtin": "one_cu"}, "variants": [], "param": "gamma"}"#).unwrap();
    let o = isac(&["sweep", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.contains("grid"), "{err}");
}
