use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jumpmfg"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin().args(args).arg("--quiet").arg("--config").arg(cfg).arg("--out").arg(out).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn missing_config_is_exit_1() {
    let out = bin().arg("riccati").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unreadable_config_is_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["riccati"], &tmp.path().join("nope.json"), tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_field_is_reported_with_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"problem": {"horizon": 1.0, "diffusion": "one", "raw": {"a": 1.0, "b": 0.0, "terminal": {"A": 0, "B": 0, "C": 0}}}}"#,
    );
    let out = run(&["expect"], &cfg, tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("problem.diffusion"), "{err}");
}

#[test]
fn negative_horizon_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"problem": {"horizon": -1.0, "diffusion": 1.0, "raw": {"a": 1.0, "b": 0.0, "terminal": {"A": 0, "B": 0, "C": 0}}}}"#,
    );
    assert_eq!(run(&["riccati"], &cfg, tmp.path()).status.code(), Some(1));
}

#[test]
fn blow_up_is_exit_2_with_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"problem": {"horizon": 1.0, "diffusion": 1.0, "raw": {"a": 2.0, "b": 0.0, "terminal": {"A": 1.0, "B": 0, "C": 0}}}}"#,
    );
    let out = run(&["riccati"], &cfg, tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let report = fs::read_to_string(tmp.path().join("riccati_report.txt")).unwrap();
    assert!(report.contains("blow"), "{report}");
}

#[test]
fn riccati_csv_has_header_and_all_nodes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["riccati"], &config("riccati.json"), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("riccati.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("t,A,B,C"));
    assert_eq!(lines.count(), 4097);
}

#[test]
fn expect_routes_agree_in_csv() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&["expect"], &config("expect.json"), tmp.path()).status.success());
    let csv = fs::read_to_string(tmp.path().join("expect.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect();
        for w in &v[2..] {
            assert!((w - v[1]).abs() < 1e-6, "{line}");
        }
    }
}

#[test]
fn validate_passes_on_shipped_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["validate"], &config("validate.json"), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("validate.csv")).unwrap();
    assert!(!csv.contains(",FAIL,"));
}

#[test]
fn every_perturbed_engine_is_exit_3() {
    for engine in ["quadrature", "ode", "closed", "charfn", "transform", "fd", "montecarlo"] {
        let tmp = tempfile::tempdir().unwrap();
        let out = run(&["validate", "--perturb-engine", engine], &config("validate.json"), tmp.path());
        assert_eq!(out.status.code(), Some(3), "{engine}");
    }
}

#[test]
fn seed_flag_changes_simulation_only() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&["simulate", "--seed", "1"], &config("simulate.json"), &a).status.success());
    assert!(run(&["simulate", "--seed", "2"], &config("simulate.json"), &b).status.success());
    let (sa, sb) = (fs::read(a.join("simulate.csv")).unwrap(), fs::read(b.join("simulate.csv")).unwrap());
    assert_ne!(sa, sb);
}

#[test]
fn investor_report_names_consensus() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&["investor"], &config("investor.json"), tmp.path()).status.success());
    let report = fs::read_to_string(tmp.path().join("investor_report.txt")).unwrap();
    assert!(report.contains("Consensus"), "{report}");
    assert!(tmp.path().join("investor_expectation.csv").exists());
}

#[test]
fn density_writes_one_file_per_engine_and_time() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&["density"], &config("density.json"), tmp.path()).status.success());
    let names: Vec<String> =
        fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    for prefix in ["charfn_", "density_transform_", "density_fd_"] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "{prefix} missing in {names:?}");
    }
}
