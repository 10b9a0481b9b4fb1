use hhgq::fock::QState;
use hhgq::scan::{execute_scan, run_scan, validate_config, RunConfig, Severity};
use std::process::Command;

fn config(json: &str, out: &std::path::Path) -> RunConfig {
    let mut c = RunConfig::from_json(json).unwrap();
    c.output_dir = out.to_path_buf();
    c
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn orbit_table_has_both_branches_until_the_stokes_point() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(r#"{"tasks": ["orbits"], "q_range": [15, 24], "field": {"E0": 0.053}}"#, dir.path());
    let r = execute_scan(&c).unwrap();
    let t = rows(&r.tables["orbits"]);
    assert_eq!(&t[0][..4], ["E0", "omegaL", "Ip", "q"]);
    for q in 15..=24 {
        let n = t[1..].iter().filter(|row| row[3] == q.to_string()).count();
        assert_eq!(n, if q < 23 { 2 } else { 1 }, "q {q}");
    }
    for row in &t[1..] {
        assert_eq!(&row[..3], ["0.053", "0.057", "0.5"]);
        assert!(row[12].parse::<f64>().unwrap() < 1e-10);
    }
}

#[test]
fn unknown_keys_are_named() {
    let e = RunConfig::from_json(r#"{"field": {"E0": 0.065, "omega": 0.05}}"#).unwrap_err();
    assert!(e.to_string().contains("omega"), "{e}");
}

#[test]
fn invalid_ranges_are_reported() {
    let c = RunConfig::from_json(r#"{"tasks": ["orbits"], "q_range": [11, 40]}"#).unwrap();
    let d = validate_config(&c);
    assert!(d.iter().filter(|x| x.severity == Severity::Error).count() >= 2, "{d:?}");
    let c = RunConfig::from_json(r#"{"tasks": ["entanglement_scan"], "Nat": [0]}"#).unwrap();
    assert!(validate_config(&c).iter().any(|x| x.severity == Severity::Error));
}

#[test]
fn scans_are_deterministic_and_cache_transparent() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"tasks": ["orbits", "delta_maps", "entanglement_scan"], "q_range": [16, 17],
                   "field": {"E0": 0.053}, "Nat": [1000, 10000]}"#;
    let c = config(json, dir.path());
    let first = run_scan(&c).unwrap();
    assert_eq!(first.manifest.cache_hits, 0);
    let second = run_scan(&c).unwrap();
    assert_eq!(second.manifest.cache_misses, 0);
    assert_eq!(first.tables, second.tables);
    std::fs::remove_dir_all(dir.path().join("cache")).unwrap();
    let third = run_scan(&c).unwrap();
    assert_eq!(first.tables, third.tables);
    for (name, text) in &first.tables {
        assert_eq!(&std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap(), text);
    }
    assert_eq!(first.manifest.tables, third.manifest.tables);
    let e = rows(&first.tables["entanglement_scan"]);
    assert_eq!(e.len(), 5);
    for row in &e[1..] {
        assert_eq!(&row[..3], ["0.053", "0.057", "0.5"]);
    }
}

#[test]
fn cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let exe = env!("CARGO_BIN_EXE_hhgq");
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"q_range": [16, 16], "field": {"E0": 0.053}, "Nat": [1000]}"#).unwrap();
    let out = dir.path().join("out");
    let st = Command::new(exe).arg("--config").arg(&cfg).args(["--task", "orbits", "--output"]).arg(&out).output().unwrap();
    assert!(st.status.success());
    assert!(out.join("orbits.csv").exists() && out.join("manifest.json").exists());

    let dump = dir.path().join("state.qst");
    let st = Command::new(exe).arg("--config").arg(&cfg).arg("--dump-state").arg(&dump).output().unwrap();
    assert!(st.status.success());
    let s = QState::from_bytes(&std::fs::read(&dump).unwrap()).unwrap();
    assert_eq!(s.dims().len(), 2);
    assert!((s.weight() - 1.0).abs() < 1e-12);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"q_range": [10, 16]}"#).unwrap();
    let o = Command::new(exe).arg("--config").arg(&bad).args(["--task", "orbits", "--validate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("q >= 15"));
    let o = Command::new(exe).args(["--task", "nonsense"]).output().unwrap();
    assert!(!o.status.success());
}
