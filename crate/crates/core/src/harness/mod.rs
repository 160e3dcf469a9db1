//! Experiment driver behind the `vsboltz` binary: configuration, suites,
//! output files and exit codes.

pub mod config;
pub mod suites;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, ExperimentKind};
pub use suites::{resolve_suites, run_suite, CheckRecord, Status, SuiteContext, SUITES};

use crate::error::{Error, Result};
use crate::grid::{make_maxwellian, GridFunction, VelocityGrid};
use crate::oracle::{named_report, NAMED_CHECKS};
use crate::solver::{appearance_envelope, endpoint_r1_check, evolve, gronwall_envelope, lp_evolution_check, stability_run};
use crate::verdict::InequalityVerdict;

pub const VERDICT_FILE: &str = "verdicts.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Relative tolerance of each named oracle comparison.
pub fn oracle_tolerance(name: &str) -> f64 {
    match name {
        "c_alpha" => 1e-2,
        "sobolev_norm" => 5e-3,
        _ => 2e-2,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub pass: usize,
    pub fail: usize,
    pub skipped: usize,
}

impl Counts {
    pub fn of(records: &[CheckRecord]) -> Self {
        let mut c = Self::default();
        for r in records {
            match r.status {
                Status::Pass => c.pass += 1,
                Status::Fail => c.fail += 1,
                Status::Skipped => c.skipped += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub suites: Vec<String>,
    pub counts: Counts,
    /// Files written by the run, relative to its output directory.
    pub files: Vec<String>,
}

/// Outcome of one run: the records and the manifest that was written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<CheckRecord>,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.manifest.counts.fail > 0 {
            1
        } else {
            0
        }
    }
}

/// Exit code of a run that aborted with `err`.
pub fn error_exit_code(err: &Error) -> i32 {
    match err {
        Error::Parameter(_) | Error::Config(_) => 2,
        _ => 3,
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// One JSON object per line, sorted by id, so reruns are byte-identical.
pub fn write_records(path: &Path, records: &[CheckRecord]) -> Result<()> {
    let mut sorted: Vec<&CheckRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut text = String::new();
    for r in sorted {
        text.push_str(&serde_json::to_string(r).map_err(|e| io_err(path, e))?);
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

pub fn read_records(path: &Path) -> Result<Vec<CheckRecord>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(|e| io_err(path, e))).collect()
}

/// Runs `kind` with `config`, writing into `out`. `jobs` sizes the thread pool
/// (`None` uses rayon's default). Results do not depend on `jobs`.
pub fn run(kind: ExperimentKind, config: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<RunOutcome> {
    if let Some(k) = config.kind {
        if k != kind {
            return Err(Error::Config(format!("config declares kind '{}' but '{}' was requested", k.tag(), kind.tag())));
        }
    }
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Runtime { op: "thread pool".into(), msg: e.to_string() })?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let start = Instant::now();
    let (records, suites, mut files) = pool.install(|| dispatch(kind, config, out))?;
    write_records(&out.join(VERDICT_FILE), &records)?;
    files.insert(0, VERDICT_FILE.to_string());
    files.push(MANIFEST_FILE.to_string());
    let manifest = RunManifest {
        kind,
        config_hash: config.hash(),
        seed: config.corpus.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        suites,
        counts: Counts::of(&records),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(out, e))?;
    write_file(&out.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(RunOutcome { records, manifest })
}

type Dispatched = (Vec<CheckRecord>, Vec<String>, Vec<String>);

fn dispatch(kind: ExperimentKind, config: &ExperimentConfig, out: &Path) -> Result<Dispatched> {
    match kind {
        ExperimentKind::Verify => run_verify(config),
        ExperimentKind::Evolve => run_evolve(config, out),
        ExperimentKind::Stability => run_stability(config, out),
        ExperimentKind::Oracle => run_oracle(config, out),
        ExperimentKind::Scan => run_scan(config, out),
    }
}

fn run_verify(config: &ExperimentConfig) -> Result<Dispatched> {
    let names = resolve_suites(&config.verify)?;
    if names.is_empty() {
        return Ok((Vec::new(), names, Vec::new()));
    }
    let ctx = SuiteContext::new(config)?;
    let per_suite = names.par_iter().map(|n| run_suite(n, &ctx)).collect::<Result<Vec<_>>>()?;
    Ok((per_suite.into_iter().flatten().collect(), names, Vec::new()))
}

/// Two Maxwellians on the first axis at `±separation/2`, with equal mass.
pub fn initial_state(config: &ExperimentConfig, grid: VelocityGrid) -> Result<GridFunction> {
    let init = &config.initial;
    let mut mean = vec![0.0; grid.dim()];
    mean[0] = init.separation / 2.0;
    let a = make_maxwellian(grid, 0.5, &mean, init.temperature)?;
    mean[0] = -mean[0];
    let b = make_maxwellian(grid, 0.5, &mean, init.temperature)?;
    let mut f = a.add(&b)?;
    f.nonnegative = true;
    Ok(f)
}

/// `initial_state` times `1 + perturbation·sin(v₁ - v₂/2)`.
pub fn perturbed_state(config: &ExperimentConfig, h0: &GridFunction) -> Result<GridFunction> {
    let amp = config.initial.perturbation;
    let mut g = GridFunction::from_fn(*h0.grid(), |v| 1.0 + amp * (v[0] - 0.5 * v[1]).sin()).mul(h0)?;
    g.nonnegative = true;
    Ok(g)
}

fn gate_record(suite: &str, id: &str, r: Result<InequalityVerdict>) -> Result<CheckRecord> {
    match r {
        Ok(v) => Ok(CheckRecord::judged(suite, id, v)),
        Err(Error::Parameter(msg)) => Ok(CheckRecord::skipped(suite, id, msg)),
        Err(e) => Err(e),
    }
}

fn run_evolve(config: &ExperimentConfig, out: &Path) -> Result<Dispatched> {
    let solver = config.solver()?;
    let f0 = initial_state(config, solver.grid)?;
    let traj = evolve(&f0, &solver)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    write_file(&out.join("trajectory.csv"), &csv)?;
    let slack = config.tolerance.fitted_slack;
    let gronwall = gronwall_envelope(&traj, None, slack);
    let c1 = gronwall.as_ref().ok().map(|g| g.constant);
    let records = vec![
        gate_record("evolve", "lp_evolution", lp_evolution_check(&traj, None, slack).map(|r| r.verdict))?,
        gate_record("evolve", "gronwall", gronwall.map(|r| r.verdict))?,
        gate_record("evolve", "appearance", appearance_envelope(&traj, None, c1, slack).map(|r| r.verdict))?,
        gate_record("evolve", "appearance_slope", appearance_envelope(&traj, None, c1, slack).map(|r| r.slope_verdict))?,
        gate_record("evolve", "endpoint_r1", endpoint_r1_check(&traj, None, slack).map(|r| r.verdict))?,
    ];
    Ok((records, vec!["evolve".into()], vec!["trajectory.csv".into()]))
}

fn run_stability(config: &ExperimentConfig, out: &Path) -> Result<Dispatched> {
    let solver = config.solver()?;
    let h0 = initial_state(config, solver.grid)?;
    let g0 = perturbed_state(config, &h0)?;
    let slack = config.tolerance.fitted_slack;
    let twin = match stability_run(&h0, &g0, &solver, slack) {
        Err(Error::Parameter(msg)) => return Ok((vec![CheckRecord::skipped("stability", "twin", msg)], vec!["stability".into()], Vec::new())),
        other => other?,
    };
    let same = stability_run(&h0, &h0, &solver, slack)?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    let row_err = |e: csv::Error| Error::Io(e.to_string());
    csv.write_record(["t", "distance", "cone", "profile", "weighted_l2"]).map_err(row_err)?;
    for (i, t) in twin.trace.t.iter().enumerate() {
        let th = &twin.trace.theta[i];
        csv.write_record([*t, twin.trace.distance[i], twin.cone[i], th.profile(), th.weighted_l2].iter().map(|x| x.to_string())).map_err(row_err)?;
    }
    let bytes = csv.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    write_file(&out.join("stability.csv"), &bytes)?;
    let identical = InequalityVerdict::identity("stability_identical", if same.identical { 0.0 } else { 1.0 }, 0.0);
    let records = vec![
        CheckRecord::judged("stability", "twin", twin.verdict),
        CheckRecord::judged("stability", "identical", InequalityVerdict::all("stability_identical", &[identical, same.verdict])),
    ];
    Ok((records, vec!["stability".into()], vec!["stability.csv".into()]))
}

fn run_oracle(config: &ExperimentConfig, out: &Path) -> Result<Dispatched> {
    let names: Vec<String> = if config.oracle.is_empty() || config.oracle.iter().any(|n| n == "all") {
        NAMED_CHECKS.iter().map(|s| s.to_string()).collect()
    } else {
        for n in &config.oracle {
            if !NAMED_CHECKS.contains(&n.as_str()) {
                return Err(Error::Config(format!("unknown oracle check '{n}', expected one of {NAMED_CHECKS:?}")));
            }
        }
        config.oracle.clone()
    };
    let reports = names.par_iter().map(|n| named_report(n)).collect::<Result<Vec<_>>>()?;
    let mut text = String::new();
    for r in &reports {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::Io(e.to_string()))?);
        text.push('\n');
    }
    write_file(&out.join("oracle.jsonl"), text.as_bytes())?;
    let records = names
        .iter()
        .zip(&reports)
        .map(|(n, r)| {
            let v = InequalityVerdict::identity(format!("oracle_{n}"), r.rel_err, oracle_tolerance(n)).with_note("oracle", r.oracle).with_note("fast", r.fast);
            CheckRecord::judged("oracle", n.as_str(), v)
        })
        .collect();
    Ok((records, vec!["oracle".into()], vec!["oracle.jsonl".into()]))
}

fn scan_dir(axis: &str, value: f64) -> String {
    format!("{axis}={value}")
}

fn run_scan(config: &ExperimentConfig, out: &Path) -> Result<Dispatched> {
    let scan = &config.scan;
    if scan.base == ExperimentKind::Scan {
        return Err(Error::Config("scan.base cannot itself be 'scan'".into()));
    }
    if scan.values.is_empty() {
        return Err(Error::Config("scan.values is empty".into()));
    }
    // Resolve every point first so a bad axis fails before any work is done.
    let points = scan
        .values
        .iter()
        .map(|&v| {
            let mut c = config.with_axis(&scan.axis, v)?;
            c.kind = Some(scan.base);
            c.validate()?;
            Ok((v, c))
        })
        .collect::<Result<Vec<(f64, ExperimentConfig)>>>()?;
    let mut records = Vec::new();
    let mut files = Vec::new();
    let mut summary = csv::Writer::from_writer(Vec::new());
    let row_err = |e: csv::Error| Error::Io(e.to_string());
    summary.write_record(["value", "id", "status", "lhs", "rhs", "constants"]).map_err(row_err)?;
    let mut per_value: Vec<(f64, BTreeMap<String, f64>)> = Vec::new();
    for (value, c) in &points {
        let dir = PathBuf::from("scan").join(scan_dir(&scan.axis, *value));
        fs::create_dir_all(out.join(&dir)).map_err(|e| io_err(&dir, e))?;
        let (recs, _, _) = dispatch(scan.base, c, &out.join(&dir))?;
        write_records(&out.join(&dir).join(VERDICT_FILE), &recs)?;
        files.push(dir.join(VERDICT_FILE).to_string_lossy().into_owned());
        let mut sorted = recs.clone();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let mut lhs_by_id = BTreeMap::new();
        for r in &sorted {
            let (lhs, rhs, consts) = match &r.verdict {
                Some(v) => (v.lhs.to_string(), v.rhs.to_string(), serde_json::to_string(&v.fitted_constants).unwrap_or_default()),
                None => (String::new(), String::new(), String::new()),
            };
            if let Some(v) = &r.verdict {
                lhs_by_id.insert(r.id.clone(), v.lhs);
            }
            let status = serde_json::to_value(r.status).ok().and_then(|s| s.as_str().map(String::from)).unwrap_or_default();
            summary.write_record([value.to_string(), r.id.clone(), status, lhs, rhs, consts]).map_err(row_err)?;
        }
        per_value.push((*value, lhs_by_id));
        records.extend(recs.into_iter().map(|mut r| {
            r.id = format!("{}/{}", scan_dir(&scan.axis, *value), r.id);
            r
        }));
    }
    let bytes = summary.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    write_file(&out.join("scan_summary.csv"), &bytes)?;
    files.push("scan_summary.csv".into());
    if scan.axis == "grid.n" && per_value.len() >= 2 {
        write_convergence(out, &per_value)?;
        files.push("convergence.csv".into());
    }
    Ok((records, vec![format!("scan:{}", scan.base.tag())], files))
}

/// Successive differences of each record's left side across grid sizes and
/// their ratios, one row per (id, refinement).
fn write_convergence(out: &Path, per_value: &[(f64, BTreeMap<String, f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let row_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["id", "n", "difference", "ratio"]).map_err(row_err)?;
    let ids: Vec<&String> = per_value[0].1.keys().collect();
    for id in ids {
        let series: Vec<(f64, f64)> = per_value.iter().filter_map(|(n, m)| m.get(id).map(|x| (*n, *x))).collect();
        let diffs: Vec<(f64, f64)> = series.windows(2).map(|p| (p[1].0, (p[1].1 - p[0].1).abs())).collect();
        for (i, (n, d)) in diffs.iter().enumerate() {
            let ratio = if i > 0 && diffs[i - 1].1 > 0.0 { d / diffs[i - 1].1 } else { f64::NAN };
            w.write_record([id.clone(), n.to_string(), d.to_string(), ratio.to_string()]).map_err(row_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    write_file(&out.join("convergence.csv"), &bytes)
}
