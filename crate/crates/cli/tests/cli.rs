use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn podmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_podmpc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn summary(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn lists_presets() {
    let out = podmpc(&["presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["run1", "run2", "run3", "run4"] {
        assert!(text.lines().any(|l| l == name), "{text}");
    }
}

#[test]
fn horizon_mode_for_run2_passes_its_gates() {
    let dir = tempfile::tempdir().unwrap();
    let out = podmpc(&["run", "--preset", "run2", "--mode", "horizon", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let s = summary(&dir.path().join("summary.json"));
    assert_eq!(s["N"], 14);
    assert!((s["K"].as_f64().unwrap() - 1.5).abs() < 1e-9);
    let report = summary(&dir.path().join("report.json"));
    assert_eq!(report["passed"], true);
}

#[test]
fn nmpc_run_writes_one_row_per_time_level_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = podmpc(&["run", "--preset", "run1", "--mode", "nmpc", "--out", d.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let state = fs::read_to_string(a.path().join("nmpc/state.csv")).unwrap();
    assert_eq!(state.lines().count(), 1 + 51);
    assert!(state.starts_with("t,x_1,"));
    let control = fs::read_to_string(a.path().join("nmpc/control.csv")).unwrap();
    assert_eq!(control.lines().count(), 1 + 50);
    for f in ["nmpc/state.csv", "nmpc/control.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let sa = summary(&a.path().join("nmpc/summary.json"));
    let sb = summary(&b.path().join("nmpc/summary.json"));
    assert_eq!(sa["J"], sb["J"]);
    assert_eq!(sa["N"], 10);
}

#[test]
fn config_file_with_noise_and_rank_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"preset": "run2", "noise": 0.3, "seed": 11, "nx": 39}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = podmpc(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "pod-nmpc",
        "--pod-rank",
        "3",
        "--deim-rank",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(matches!(out.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out_dir.join("pod_l3_deim2/summary.json"));
    assert_eq!(s["pod_rank"], 3);
    assert_eq!(s["deim_rank"], 2);
    assert!(out_dir.join("pod_l3_deim2/eigs.csv").exists());
    let state = fs::read_to_string(out_dir.join("pod_l3_deim2/state.csv")).unwrap();
    assert!(state.lines().next().unwrap().ends_with(",x_39"));
}

#[test]
fn invalid_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = podmpc(&["run", "--preset", "run9", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\"preset\": \"run1\", \"u_a\": 0.5}").unwrap();
    let out = podmpc(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("u_a"));
}

#[test]
fn sweep_writes_monotone_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = podmpc(&[
        "sweep",
        "--preset",
        "run2",
        "--errs",
        "0,0.0001,0.01,0.1",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("err,N_min,K_star,alpha,found"));
    let n: Vec<usize> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(n[0], 14);
    assert!(n.windows(2).all(|w| w[0] <= w[1]), "{n:?}");
}
