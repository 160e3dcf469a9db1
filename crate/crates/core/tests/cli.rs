use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vsboltz::harness::{read_records, RunManifest, SUITES};

const SMALL: &str = r#"
[kernel]
dim = 2
gamma = -1.5
s = 0.5
n_theta = 4
n_omega = 1

[grid]
radius = 5.0
n = 12

[corpus]
size = 4

[functional]
k = 4.0
ell = 4.0
"#;

fn vsboltz(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsboltz")).current_dir(dir).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("experiment.toml");
    fs::write(&path, format!("{extra}\n{SMALL}")).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn empty_verify_list_writes_an_empty_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "verify = []");
    let out = vsboltz(tmp.path(), &["verify", "--config", &cfg, "--out", "run"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(tmp.path().join("run/verdicts.jsonl")).unwrap(), b"");
    assert!(manifest(&tmp.path().join("run")).suites.is_empty());
}

#[test]
fn verify_all_runs_each_suite_once() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = vsboltz(tmp.path(), &["verify", "all", "all", "--config", &cfg, "--out", "run"]);
    let code = out.status.code();
    assert!(code == Some(0) || code == Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("run"));
    let expected: Vec<String> = SUITES.iter().map(|s| s.to_string()).collect();
    assert_eq!(m.suites, expected);
    let records = read_records(&tmp.path().join("run/verdicts.jsonl")).unwrap();
    for s in SUITES {
        assert!(records.iter().any(|r| r.suite == s), "no record for {s}");
    }
    assert_eq!(m.counts.pass + m.counts.fail + m.counts.skipped, records.len());
    assert_eq!(code == Some(1), m.counts.fail > 0);
}

#[test]
fn reruns_are_byte_identical_for_any_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"verify = ["conservation", "hls", "interpolation", "elementary", "commutator"]"#);
    let a = vsboltz(tmp.path(), &["verify", "--config", &cfg, "--out", "a", "--jobs", "1"]);
    let b = vsboltz(tmp.path(), &["verify", "--config", &cfg, "--out", "b", "--jobs", "3"]);
    assert!(a.status.success() && b.status.success());
    let fa = fs::read(tmp.path().join("a/verdicts.jsonl")).unwrap();
    assert!(!fa.is_empty());
    assert_eq!(fa, fs::read(tmp.path().join("b/verdicts.jsonl")).unwrap());
    assert_eq!(manifest(&tmp.path().join("a")).config_hash, manifest(&tmp.path().join("b")).config_hash);
}

#[test]
fn seed_flag_changes_the_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"verify = ["hls"]"#);
    vsboltz(tmp.path(), &["verify", "--config", &cfg, "--out", "a", "--seed", "1"]);
    vsboltz(tmp.path(), &["verify", "--config", &cfg, "--out", "b", "--seed", "2"]);
    assert_eq!(manifest(&tmp.path().join("b")).seed, 2);
    assert_ne!(fs::read(tmp.path().join("a/verdicts.jsonl")).unwrap(), fs::read(tmp.path().join("b/verdicts.jsonl")).unwrap());
}

fn scan_values(tmp: &Path, values: &str) -> (Output, String) {
    let cfg = write_config(
        tmp,
        &format!("verify = [\"eps_poincare\"]\n[scan]\nbase = \"verify\"\naxis = \"functional.eps\"\nvalues = {values}\n"),
    );
    let out = vsboltz(tmp, &["scan", "--config", &cfg, "--out", "scan_run"]);
    let summary = fs::read_to_string(tmp.join("scan_run/scan_summary.csv")).unwrap_or_default();
    (out, summary)
}

#[test]
fn scan_writes_one_block_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, summary) = scan_values(tmp.path(), "[0.01, 0.1, 1.0]");
    assert!(out.status.code() == Some(0) || out.status.code() == Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let values: std::collections::BTreeSet<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(values.len(), 3);
    for v in ["0.01", "0.1", "1"] {
        assert!(tmp.path().join(format!("scan_run/scan/functional.eps={v}/verdicts.jsonl")).exists());
    }
}

#[test]
fn single_value_scan_writes_one_block() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, summary) = scan_values(tmp.path(), "[0.5]");
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.starts_with("0.5,")));
}

#[test]
fn unknown_scan_axis_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[scan]\nbase = \"verify\"\naxis = \"grid.nonexistent\"\nvalues = [1.0]\n");
    let out = vsboltz(tmp.path(), &["scan", "--config", &cfg, "--out", "run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.nonexistent"));
}

#[test]
fn unknown_key_reports_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[solver]\ntime_step = 0.1\n");
    let out = vsboltz(tmp.path(), &["verify", "--config", &cfg, "--out", "run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("time_step"));
}

#[test]
fn kind_mismatch_and_bad_parameters_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "kind = \"evolve\"");
    assert_eq!(vsboltz(tmp.path(), &["verify", "--config", &cfg, "--out", "run"]).status.code(), Some(2));
    let cfg = write_config(tmp.path(), "[tolerance]\nidentity = -1.0\n");
    assert_eq!(vsboltz(tmp.path(), &["verify", "--config", &cfg, "--out", "run"]).status.code(), Some(2));
    let out = vsboltz(tmp.path(), &["verify", "no_such_suite", "--out", "run"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evolve_writes_a_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[solver]\ndt = 0.1\nhorizon = 0.6\n");
    let out = vsboltz(tmp.path(), &["evolve", "--config", &cfg, "--out", "run"]);
    assert!(out.status.code() == Some(0) || out.status.code() == Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("run/trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7);
    let records = read_records(&tmp.path().join("run/verdicts.jsonl")).unwrap();
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["evolve/appearance", "evolve/appearance_slope", "evolve/endpoint_r1", "evolve/gronwall", "evolve/lp_evolution"]);
}
