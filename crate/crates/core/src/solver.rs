//! Explicit time integration of `∂ₜf = Q(f, f)` with per-step diagnostics,
//! the L^p evolution and envelope checks built on top of a trajectory, and
//! twin-run stability traces.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::angular::CollisionKernel;
use crate::collision::{collision_operator, CollisionSettings};
use crate::error::{param, Error, Result};
use crate::functionals::{c_alpha, eta_exponent, lp_norm, moment, prodi_serrin_from_q, sobolev_norm, ProdiSerrinParams};
use crate::grid::{ClassYBounds, GridFunction, VelocityGrid};
use crate::inequalities::regression_slope;
use crate::verdict::InequalityVerdict;

/// Largest mass removed by clipping in one step, relative to the current
/// mass, before a run is aborted.
pub const MAX_CLIPPED_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    ForwardEuler,
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kernel: CollisionKernel,
    pub grid: VelocityGrid,
    pub dt: f64,
    pub horizon: f64,
    /// Lebesgue exponent of the tracked norm.
    pub p: f64,
    /// Weight exponent of the tracked norm.
    pub k: f64,
    /// Prodi-Serrin exponent.
    pub q: f64,
    pub stepper: Stepper,
    /// Keep every `snapshot_stride`-th state; 0 keeps none.
    pub snapshot_stride: usize,
    pub settings: CollisionSettings,
    pub bounds: ClassYBounds,
    /// How often a step may be halved after producing non-finite values.
    pub max_halvings: u32,
    /// Project each right-hand side onto zero mass, momentum and energy change.
    pub conservative: bool,
}

impl SolverConfig {
    pub fn new(kernel: CollisionKernel, grid: VelocityGrid, dt: f64, horizon: f64, p: f64, k: f64, q: f64) -> Result<Self> {
        let c = Self {
            kernel,
            grid,
            dt,
            horizon,
            p,
            k,
            q,
            stepper: Stepper::Midpoint,
            snapshot_stride: 0,
            settings: CollisionSettings::default(),
            bounds: ClassYBounds::default(),
            max_halvings: 6,
            conservative: true,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_stepper(mut self, stepper: Stepper) -> Self {
        self.stepper = stepper;
        self
    }

    pub fn with_snapshots(mut self, stride: usize) -> Self {
        self.snapshot_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.dim != self.grid.dim() {
            return param(format!("kernel dimension {} vs grid dimension {}", self.kernel.dim, self.grid.dim()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return param(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return param(format!("horizon {} must be at least dt = {}", self.horizon, self.dt));
        }
        if !(self.p > 1.0) {
            return param(format!("p must exceed 1, got {}", self.p));
        }
        if !(self.k >= 0.0) {
            return param(format!("k must be >= 0, got {}", self.k));
        }
        self.prodi_serrin().map(|_| ())
    }

    pub fn prodi_serrin(&self) -> Result<ProdiSerrinParams> {
        prodi_serrin_from_q(self.grid.dim(), self.kernel.gamma, self.kernel.s, self.q)
    }

    /// Number of steps; the last one is shortened to land on the horizon.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Diagnostics of one recorded state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    /// `𝕄_{k,p} = ∫f^p⟨v⟩^k`.
    pub m_kp: f64,
    /// `𝔻_{s,k,p} = ‖⟨·⟩^{k/2}f^{p/2}‖²_{Ḣ^s}`.
    pub d_skp: f64,
    /// `𝔻_{s,k+γ,p}`, the dissipation of the evolution inequality.
    pub dissipation: f64,
    /// `𝕄_{k+γ,p}`.
    pub m_kgp: f64,
    /// `∫c_γ[f]f^p⟨v⟩^k`.
    pub drift: f64,
    /// `∫f^p⟨v⟩^k c_{γ+2s}[⟨·⟩^{2k/p-2s}f]`; zero when `k = 0`.
    pub weight_drift: f64,
    /// `∫f^p`.
    pub m_p: f64,
    /// `‖⟨·⟩^{|γ|}f‖_{L^q}`.
    pub ps_norm: f64,
    /// `∫₀ᵗ ps_norm^r` (trapezoidal).
    pub ps_accum: f64,
    /// `‖f‖_{L^{d/(d+γ)}}`.
    pub endpoint_norm: f64,
    /// `m_{η_{p,k}}`.
    pub moment_eta: f64,
    pub mass: f64,
    pub momentum: Vec<f64>,
    /// `∫f|v|²`.
    pub energy: f64,
    /// Mass removed by clipping negative values during the step into this record.
    pub clipped_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub state: GridFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: SolverConfig,
    pub records: Vec<DiagnosticsRecord>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: GridFunction,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    /// One CSV row per record.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.config.grid.dim();
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["t", "M_kp", "D_skp", "ps_norm", "ps_accum", "mass"].iter().map(|s| s.to_string()).collect();
        header.extend(["momentum_x", "momentum_y", "momentum_z"].iter().take(d).map(|s| s.to_string()));
        header.extend(["energy".to_string(), "clipped_mass".to_string()]);
        out.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![r.t, r.m_kp, r.d_skp, r.ps_norm, r.ps_accum, r.mass];
            row.extend(&r.momentum);
            row.extend([r.energy, r.clipped_mass]);
            out.write_record(row.iter().map(|x| x.to_string())).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn blow_up(msg: impl std::fmt::Display, last: Option<&DiagnosticsRecord>) -> Error {
    let last = last.and_then(|r| serde_json::to_string(r).ok()).unwrap_or_else(|| "none".into());
    Error::Runtime { op: "evolve".into(), msg: format!("{msg}; last valid record: {last}") }
}

/// Diagnostics of `f`; `prev` is the previous record, used for the
/// Prodi-Serrin accumulator.
pub fn diagnose(f: &GridFunction, config: &SolverConfig, step: usize, t: f64, clipped_mass: f64, prev: Option<&DiagnosticsRecord>) -> Result<DiagnosticsRecord> {
    let (kernel, p, k) = (&config.kernel, config.p, config.k);
    let (gamma, s) = (kernel.gamma, kernel.s);
    let grid = *f.grid();
    let d = grid.dim();
    let ps = config.prodi_serrin()?;
    let pos = f.positive_part();
    let fp = pos.map(|x| x.powf(p));
    let half = pos.map(|x| x.powf(0.5 * p));
    let m_kp = lp_norm(&fp, 1.0, k)?;
    let d_skp = sobolev_norm(&half.weighted(0.5 * k), s, true)?.powi(2);
    let dissipation = sobolev_norm(&half.weighted(0.5 * (k + gamma)), s, true)?.powi(2);
    let m_kgp = lp_norm(&fp, 1.0, k + gamma)?;
    let fpk = fp.weighted(k);
    let dot = |a: &GridFunction, b: &GridFunction| a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum::<f64>() * grid.cell_volume();
    let drift = dot(&c_alpha(&pos, gamma)?, &fpk);
    let weight_drift = if k > 0.0 { dot(&c_alpha(&pos.weighted(2.0 * k / p - 2.0 * s), gamma + 2.0 * s)?, &fpk) } else { 0.0 };
    let ps_norm = lp_norm(&pos, ps.q, ps.q * gamma.abs())?;
    let ps_accum = match prev {
        Some(r) => r.ps_accum + 0.5 * (t - r.t) * (r.ps_norm.powf(ps.r) + ps_norm.powf(ps.r)),
        None => 0.0,
    };
    let endpoint_norm = lp_norm(&pos, d as f64 / (d as f64 + gamma), 0.0)?;
    let moment_eta = moment(&pos, eta_exponent(d, gamma, s, p, k)?);
    let mut momentum = vec![0.0; d];
    let mut energy = 0.0;
    for (i, &x) in f.values().iter().enumerate() {
        let v = grid.node(i);
        for a in 0..d {
            momentum[a] += x * v[a];
        }
        energy += x * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    }
    let dv = grid.cell_volume();
    momentum.iter_mut().for_each(|m| *m *= dv);
    let rec = DiagnosticsRecord {
        step,
        t,
        m_kp,
        d_skp,
        dissipation,
        m_kgp,
        drift,
        weight_drift,
        m_p: lp_norm(&fp, 1.0, 0.0)?,
        ps_norm,
        ps_accum,
        endpoint_norm,
        moment_eta,
        mass: moment(f, 0.0),
        momentum,
        energy: energy * dv,
        clipped_mass,
    };
    let scalars = [rec.m_kp, rec.d_skp, rec.dissipation, rec.drift, rec.weight_drift, rec.ps_norm, rec.ps_accum, rec.endpoint_norm, rec.moment_eta, rec.energy];
    if scalars.iter().any(|x| !x.is_finite()) {
        return Err(blow_up(format!("non-finite diagnostics at t = {t}"), prev));
    }
    Ok(rec)
}

/// Removes from `q` the multiple `f·(λ₀ + λ·v + λ_E|v|²)` that makes its
/// mass, momentum and energy vanish.
pub fn conservative_projection(q: &GridFunction, f: &GridFunction) -> Result<GridFunction> {
    q.grid().check_same(f.grid())?;
    let grid = *q.grid();
    let d = grid.dim();
    let n = d + 2;
    let basis = |i: usize| {
        let v = grid.node(i);
        let mut b = vec![1.0];
        b.extend_from_slice(&v[..d]);
        b.push(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        b
    };
    let mut a = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    for (i, (&qi, &fi)) in q.values().iter().zip(f.values()).enumerate() {
        let b = basis(i);
        for j in 0..n {
            rhs[j] += qi * b[j];
            for l in 0..n {
                a[j][l] += fi.abs() * b[j] * b[l];
            }
        }
    }
    let lambda = solve_dense(a, rhs).ok_or_else(|| Error::Runtime { op: "conservative_projection".into(), msg: "singular moment matrix".into() })?;
    let vals = q
        .values()
        .iter()
        .zip(f.values())
        .enumerate()
        .map(|(i, (&qi, &fi))| qi - fi.abs() * basis(i).iter().zip(&lambda).map(|(b, l)| b * l).sum::<f64>())
        .collect();
    Ok(GridFunction::from_parts(grid, vals))
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c] == 0.0 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let m = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= m * a[c][k];
            }
            b[r] -= m * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn axpy(f: &GridFunction, a: f64, q: &GridFunction) -> GridFunction {
    GridFunction::from_parts(*f.grid(), f.values().iter().zip(q.values()).map(|(x, y)| x + a * y).collect())
}

/// One step of length `h`; on non-finite values the step is split in two,
/// at most `config.max_halvings` times. Returns the clipped state and the
/// clipped mass.
fn advance(f: &GridFunction, h: f64, config: &SolverConfig, depth: u32) -> Result<(GridFunction, f64)> {
    let rhs = |g: &GridFunction| {
        let q = collision_operator(g, g, &config.kernel, &config.settings)?;
        if config.conservative {
            conservative_projection(&q, g)
        } else {
            Ok(q)
        }
    };
    let raw = match config.stepper {
        Stepper::ForwardEuler => rhs(f).map(|q| axpy(f, h, &q)),
        Stepper::Midpoint => rhs(f).and_then(|q| rhs(&axpy(f, 0.5 * h, &q))).map(|q| axpy(f, h, &q)),
    };
    let finite = matches!(&raw, Ok(g) if g.values().iter().all(|x| x.is_finite()));
    if !finite {
        if let Err(e) = &raw {
            if !matches!(e, Error::Runtime { .. }) {
                return Err(e.clone());
            }
        }
        if depth >= config.max_halvings {
            return Err(Error::Runtime { op: "evolve".into(), msg: format!("non-finite state after {depth} step halvings") });
        }
        let (a, c1) = advance(f, 0.5 * h, config, depth + 1)?;
        let (b, c2) = advance(&a, 0.5 * h, config, depth + 1)?;
        return Ok((b, c1 + c2));
    }
    let raw = raw?;
    let dv = config.grid.cell_volume();
    let clipped = raw.values().iter().filter(|&&x| x < 0.0).map(|x| -x).sum::<f64>() * dv;
    let mut out = raw.positive_part();
    out.nonnegative = true;
    Ok((out, clipped))
}

/// Evolves `f0` to the configured horizon, recording diagnostics after
/// every step.
pub fn evolve(f0: &GridFunction, config: &SolverConfig) -> Result<Trajectory> {
    config.validate()?;
    f0.grid().check_same(&config.grid)?;
    if f0.values().iter().any(|&x| x < 0.0) {
        return Err(Error::Precondition("initial state has negative values".into()));
    }
    config.bounds.check(f0)?;
    let mut f = f0.clone();
    let mut records = vec![diagnose(&f, config, 0, 0.0, 0.0, None)?];
    let mut snapshots = Vec::new();
    if config.snapshot_stride > 0 {
        snapshots.push(Snapshot { step: 0, t: 0.0, state: f.clone() });
    }
    let n = config.steps();
    let mut t = 0.0;
    for step in 1..=n {
        let h = config.dt.min(config.horizon - t);
        let mass = moment(&f, 0.0);
        let (next, clipped) = advance(&f, h, config, 0).map_err(|e| blow_up(e, records.last()))?;
        if clipped > MAX_CLIPPED_FRACTION * mass.abs() {
            return Err(blow_up(format!("clipped mass {clipped} exceeds {MAX_CLIPPED_FRACTION} of the mass {mass} at step {step}"), records.last()));
        }
        t = if step == n { config.horizon } else { step as f64 * config.dt };
        f = next;
        let rec = diagnose(&f, config, step, t, clipped, records.last())?;
        records.push(rec);
        if config.snapshot_stride > 0 && step % config.snapshot_stride == 0 {
            snapshots.push(Snapshot { step, t, state: f.clone() });
        }
    }
    Ok(Trajectory { config: config.clone(), records, snapshots, final_state: f })
}

/// Centered differences in the interior, one-sided at the ends.
pub fn time_derivative(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    (0..n)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i + 1 == n {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            (y[b] - y[a]) / (t[b] - t[a])
        })
        .collect()
}

/// `∫₀^{t_i} g` by the trapezoidal rule, for every `i`.
pub fn cumulative_integral(t: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    let mut acc = 0.0;
    for i in 0..t.len() {
        if i > 0 {
            acc += 0.5 * (t[i] - t[i - 1]) * (g[i] + g[i - 1]);
        }
        out.push(acc);
    }
    out
}

fn require_records(traj: &Trajectory, min: usize) -> Result<()> {
    if traj.records.len() < min {
        return param(format!("need at least {min} records, got {}", traj.records.len()));
    }
    Ok(())
}

/// Records in the fit half (`0..split`) and the held-out half (`split..`).
fn split_point(n: usize) -> usize {
    n.div_ceil(2)
}

/// Candidate values for a fitted lower-order constant.
pub fn constant_candidates() -> Vec<f64> {
    (-16..=16).map(|e| 10f64.powf(e as f64 / 4.0)).collect()
}

// ---------------------------------------------------------------------------
// L^p evolution inequality

/// Constants of `d𝕄/dt + c_p𝔻 ≤ (p-1)C_B·drift + C·(𝕄_{k+γ,p} + weight drift)`.
/// `C_B = ‖b̃‖_{L¹}` is fixed; `C` stands for both lower-order constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpConstants {
    pub c_p: f64,
    pub cap_c: f64,
    pub c_b: f64,
}

/// Terms of the evolution inequality at one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTerms {
    pub t: f64,
    pub rate: f64,
    pub dissipation: f64,
    pub drift: f64,
    pub lower_order: f64,
}

impl EvolutionTerms {
    pub fn lhs(&self, c: &LpConstants) -> f64 {
        self.rate + c.c_p * self.dissipation
    }
    pub fn rhs(&self, c: &LpConstants, p: f64) -> f64 {
        (p - 1.0) * c.c_b * self.drift + c.cap_c * self.lower_order
    }
}

pub fn evolution_terms(traj: &Trajectory) -> Result<Vec<EvolutionTerms>> {
    require_records(traj, 3)?;
    let t = traj.times();
    let m: Vec<f64> = traj.records.iter().map(|r| r.m_kp).collect();
    let rate = time_derivative(&t, &m);
    Ok(traj
        .records
        .iter()
        .zip(rate)
        .map(|(r, rate)| EvolutionTerms { t: r.t, rate, dissipation: r.dissipation, drift: r.drift, lower_order: r.m_kgp + r.weight_drift })
        .collect())
}

/// With `c(C) = min (A + C·Z - rate)/𝔻` over the fit records, takes the
/// smallest candidate `C` with `c(C) > 0`, keeps half of that dissipation
/// (`c_p = c(C)/2`) and refits `C` as the smallest value admissible with it.
/// Falls back to `c_p = 0` when no candidate leaves positive dissipation.
pub fn fit_lp_constants(terms: &[EvolutionTerms], p: f64, c_b: f64) -> LpConstants {
    let drift = |t: &EvolutionTerms| (p - 1.0) * c_b * t.drift;
    let c_of = |cap: f64| {
        terms
            .iter()
            .filter(|t| t.dissipation > 0.0)
            .map(|t| (drift(t) + cap * t.lower_order - t.rate) / t.dissipation)
            .fold(f64::INFINITY, f64::min)
    };
    let c_p = std::iter::once(0.0)
        .chain(constant_candidates())
        .map(c_of)
        .find(|c| *c > 0.0 && c.is_finite())
        .map_or(0.0, |c| 0.5 * c);
    let cap_c = terms
        .iter()
        .filter(|t| t.lower_order > 0.0)
        .map(|t| (t.rate + c_p * t.dissipation - drift(t)) / t.lower_order)
        .fold(0.0, f64::max);
    LpConstants { c_p, cap_c, c_b }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpEvolutionReport {
    pub constants: LpConstants,
    /// Records used for fitting (`0..fit_records`); zero when supplied.
    pub fit_records: usize,
    pub verdicts: Vec<InequalityVerdict>,
    pub verdict: InequalityVerdict,
}

/// Per-record verdicts of the L^p evolution inequality. Without supplied
/// constants they are fitted on the first half of the records and only the
/// second half is judged.
pub fn lp_evolution_check(traj: &Trajectory, constants: Option<LpConstants>, slack: f64) -> Result<LpEvolutionReport> {
    let terms = evolution_terms(traj)?;
    let p = traj.config.p;
    let split = split_point(terms.len());
    let (constants, fit_records) = match constants {
        Some(c) => (c, 0),
        None => (fit_lp_constants(&terms[..split], p, traj.config.kernel.b_norms().norm_b_tilde), split),
    };
    let verdicts: Vec<InequalityVerdict> = terms[fit_records..]
        .iter()
        .map(|t| {
            InequalityVerdict::new("lp_evolution", t.lhs(&constants), t.rhs(&constants, p), slack)
                .with_note("t", t.t)
                .with_note("k", traj.config.k)
        })
        .collect();
    let verdict = InequalityVerdict::all("lp_evolution", &verdicts)
        .with_constant("c_p", constants.c_p)
        .with_constant("C_p", constants.cap_c)
        .with_constant("C_B", constants.c_b)
        .with_kernel(&traj.config.kernel)
        .with_grid(&traj.config.grid);
    Ok(LpEvolutionReport { constants, fit_records, verdicts, verdict })
}

// ---------------------------------------------------------------------------
// Envelopes

/// `exp((1/p)∫₀ᵗΛ)·initial` at every time.
pub fn envelope_series(t: &[f64], lambda: &[f64], p: f64, initial: f64) -> Vec<f64> {
    cumulative_integral(t, lambda).iter().map(|i| (i / p).exp() * initial).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub constant: f64,
    pub fit_records: usize,
    pub times: Vec<f64>,
    pub norm: Vec<f64>,
    pub envelope: Vec<f64>,
    pub verdict: InequalityVerdict,
}

/// `Λ = C·profile`: fits `C = max (d ln 𝕄/dt)_+ / profile` over the first
/// half and checks `‖f‖ ≤ exp((1/p)∫Λ)‖f0‖` on the second half.
fn envelope_check(name: &str, traj: &Trajectory, m: &[f64], profile: &[f64], constant: Option<f64>, slack: f64) -> Result<EnvelopeReport> {
    require_records(traj, 3)?;
    let t = traj.times();
    let p = traj.config.p;
    let split = split_point(t.len());
    let (constant, fit_records) = match constant {
        Some(c) => (c, 0),
        None => {
            let rate = time_derivative(&t, m);
            let c = (0..split)
                .filter(|&i| m[i] > 0.0 && profile[i] > 0.0)
                .map(|i| (rate[i] / m[i]).max(0.0) / profile[i])
                .fold(0.0, f64::max);
            (c, split)
        }
    };
    let lambda: Vec<f64> = profile.iter().map(|x| constant * x).collect();
    let norm: Vec<f64> = m.iter().map(|x| x.powf(1.0 / p)).collect();
    let envelope = envelope_series(&t, &lambda, p, norm[0]);
    let parts: Vec<InequalityVerdict> = (fit_records..t.len())
        .map(|i| InequalityVerdict::new(name, norm[i], envelope[i], slack).with_note("t", t[i]))
        .collect();
    let verdict = InequalityVerdict::all(name, &parts)
        .with_constant("C", constant)
        .with_kernel(&traj.config.kernel)
        .with_grid(&traj.config.grid);
    Ok(EnvelopeReport { constant, fit_records, times: t, norm, envelope, verdict })
}

/// Propagation envelope with `Λ(t) = C₁(1 + ‖⟨·⟩^{|γ|}f‖_q^r)` for the
/// weighted norm `‖f‖_{L^p_k} = 𝕄_{k,p}^{1/p}`.
pub fn gronwall_envelope(traj: &Trajectory, c1: Option<f64>, slack: f64) -> Result<EnvelopeReport> {
    let r = traj.config.prodi_serrin()?.r;
    let m: Vec<f64> = traj.records.iter().map(|x| x.m_kp).collect();
    let profile: Vec<f64> = traj.records.iter().map(|x| 1.0 + x.ps_norm.powf(r)).collect();
    envelope_check("gronwall_envelope", traj, &m, &profile, c1, slack)
}

/// Endpoint envelope `exp((C₀/p)∫‖f‖_{L^{q₀}})‖f0‖_{L^p}`, `q₀ = d/(d+γ)`,
/// for `1 < p < q₀`.
pub fn endpoint_r1_check(traj: &Trajectory, c0: Option<f64>, slack: f64) -> Result<EnvelopeReport> {
    let d = traj.config.grid.dim() as f64;
    let q0 = d / (d + traj.config.kernel.gamma);
    let p = traj.config.p;
    if !(p > 1.0 && p < q0) {
        return param(format!("the endpoint estimate needs 1 < p < d/(d+gamma) = {q0}, got p = {p}"));
    }
    let m: Vec<f64> = traj.records.iter().map(|x| x.m_p).collect();
    let profile: Vec<f64> = traj.records.iter().map(|x| x.endpoint_norm).collect();
    envelope_check("endpoint_r1", traj, &m, &profile, c0, slack)
}

/// `(d/2s)(1 - 1/p)`.
pub fn appearance_exponent(d: usize, s: f64, p: f64) -> f64 {
    d as f64 / (2.0 * s) * (1.0 - 1.0 / p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceReport {
    pub exponent: f64,
    pub constant: f64,
    pub c1: f64,
    pub sup_moment: f64,
    pub times: Vec<f64>,
    pub norm: Vec<f64>,
    pub envelope: Vec<f64>,
    pub verdict: InequalityVerdict,
    /// Log-log slope of `‖f(t)‖_{L^p}` over the first half of the run.
    pub slope: f64,
    pub slope_verdict: InequalityVerdict,
}

/// Envelope `K·t^{-(d/2s)(1-1/p)}·sup m_η·exp((C₁/p)∫₀ᵗ(1 + ‖⟨·⟩^{|γ|}f‖_q^r))`
/// for `‖f(t)‖_{L^p}` at `t > 0`, with `C₁` supplied or taken from the
/// propagation fit and `K` fitted on the first half; plus the transient
/// slope check.
pub fn appearance_envelope(traj: &Trajectory, k_const: Option<f64>, c1: Option<f64>, slack: f64) -> Result<AppearanceReport> {
    require_records(traj, 4)?;
    let cfg = &traj.config;
    let c1 = match c1 {
        Some(c) => c,
        None => gronwall_envelope(traj, None, slack)?.constant,
    };
    let r = cfg.prodi_serrin()?.r;
    let all_t = traj.times();
    let profile: Vec<f64> = traj.records.iter().map(|x| c1 * (1.0 + x.ps_norm.powf(r))).collect();
    let growth: Vec<f64> = cumulative_integral(&all_t, &profile).iter().map(|i| (i / cfg.p).exp()).collect();
    let growth: Vec<f64> = traj.records.iter().zip(growth).filter(|(r, _)| r.t > 0.0).map(|(_, g)| g).collect();
    let exponent = appearance_exponent(cfg.grid.dim(), cfg.kernel.s, cfg.p);
    let sup_moment = traj.records.iter().map(|r| r.moment_eta).fold(0.0, f64::max);
    let recs: Vec<&DiagnosticsRecord> = traj.records.iter().filter(|r| r.t > 0.0).collect();
    let times: Vec<f64> = recs.iter().map(|r| r.t).collect();
    let norm: Vec<f64> = recs.iter().map(|r| r.m_p.powf(1.0 / cfg.p)).collect();
    let split = split_point(times.len());
    let (constant, first) = match k_const {
        Some(k) => (k, 0),
        None => ((0..split).map(|i| norm[i] * times[i].powf(exponent) / (sup_moment * growth[i])).fold(0.0, f64::max), split),
    };
    let envelope: Vec<f64> = times.iter().zip(&growth).map(|(t, g)| constant * t.powf(-exponent) * sup_moment * g).collect();
    let parts: Vec<InequalityVerdict> = (first..times.len())
        .map(|i| InequalityVerdict::new("appearance_envelope", norm[i], envelope[i], slack).with_note("t", times[i]))
        .collect();
    let verdict = InequalityVerdict::all("appearance_envelope", &parts)
        .with_constant("K", constant)
        .with_constant("C1", c1)
        .with_kernel(&cfg.kernel)
        .with_grid(&cfg.grid);
    let lt: Vec<f64> = times[..split.max(2)].iter().map(|t| t.ln()).collect();
    let ln: Vec<f64> = norm[..split.max(2)].iter().map(|x| x.ln()).collect();
    let slope = regression_slope(&lt, &ln);
    let slope_verdict = InequalityVerdict::new("appearance_slope", -slope, exponent, 0.0).with_note("slope", slope);
    Ok(AppearanceReport { exponent, constant, c1, sup_moment, times, norm, envelope, verdict, slope, slope_verdict })
}

// ---------------------------------------------------------------------------
// ODE comparison

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeComparison {
    pub k: f64,
    pub beta: f64,
    pub y0: f64,
    pub times: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `(Kβt)^{-1/β}`.
    pub asymptotic: Vec<f64>,
    /// `(y0^{-β} + Kβt)^{-1/β}`.
    pub exact: Vec<f64>,
    pub max_rel_asymptotic: f64,
    pub max_rel_exact: f64,
}

/// Integrates `y' = -Ky^{1+β}` from `y(0) = y0` with an adaptive
/// Dormand-Prince pair in `u = ln y`, sampling at log-spaced times in
/// `[t_min, t_max]`.
pub fn ode_comparison(k: f64, beta: f64, y0: f64, t_min: f64, t_max: f64, samples: usize) -> Result<OdeComparison> {
    if !(k > 0.0 && beta > 0.0 && y0 > 0.0 && t_min > 0.0 && t_max > t_min && samples >= 2) {
        return param("need K, beta, y0 > 0, 0 < t_min < t_max and at least two samples");
    }
    let rhs = |u: f64| -k * (beta * u).exp();
    let times: Vec<f64> = (0..samples)
        .map(|i| (t_min.ln() + (t_max / t_min).ln() * i as f64 / (samples - 1) as f64).exp())
        .collect();
    let mut numeric = Vec::with_capacity(samples);
    let (mut t, mut u) = (0.0, y0.ln());
    let mut h = 1e-3 / (k * beta * y0.powf(beta));
    for &target in &times {
        while t < target {
            let step = h.min(target - t);
            let (next, err) = dopri_step(&rhs, u, step);
            let tol = 1e-12 * (1.0 + u.abs());
            if err <= tol {
                t += step;
                u = next;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
            h = step * factor;
        }
        numeric.push(u.exp());
    }
    let asymptotic: Vec<f64> = times.iter().map(|t| (k * beta * t).powf(-1.0 / beta)).collect();
    let exact: Vec<f64> = times.iter().map(|t| (y0.powf(-beta) + k * beta * t).powf(-1.0 / beta)).collect();
    let worst = |r: &[f64]| numeric.iter().zip(r).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
    Ok(OdeComparison {
        k,
        beta,
        y0,
        max_rel_asymptotic: worst(&asymptotic),
        max_rel_exact: worst(&exact),
        times,
        numeric,
        asymptotic,
        exact,
    })
}

/// One autonomous Dormand-Prince 5(4) step; returns the fifth-order value
/// and the embedded error estimate.
fn dopri_step(f: &impl Fn(f64) -> f64, u: f64, h: f64) -> (f64, f64) {
    let k1 = f(u);
    let k2 = f(u + h * (k1 / 5.0));
    let k3 = f(u + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2));
    let k4 = f(u + h * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3));
    let k5 = f(u + h * (19372.0 / 6561.0 * k1 - 25360.0 / 2187.0 * k2 + 64448.0 / 6561.0 * k3 - 212.0 / 729.0 * k4));
    let k6 = f(u + h * (9017.0 / 3168.0 * k1 - 355.0 / 33.0 * k2 + 46732.0 / 5247.0 * k3 + 49.0 / 176.0 * k4 - 5103.0 / 18656.0 * k5));
    let y5 = u + h * (35.0 / 384.0 * k1 + 500.0 / 1113.0 * k3 + 125.0 / 192.0 * k4 - 2187.0 / 6784.0 * k5 + 11.0 / 84.0 * k6);
    let k7 = f(y5);
    let y4 = u + h * (5179.0 / 57600.0 * k1 + 7571.0 / 16695.0 * k3 + 393.0 / 640.0 * k4 - 92097.0 / 339200.0 * k5 + 187.0 / 2100.0 * k6 + k7 / 40.0);
    if !y5.is_finite() || !y4.is_finite() {
        return (u, f64::INFINITY);
    }
    (y5, (y5 - y4).abs())
}

// ---------------------------------------------------------------------------
// Stability

/// Components of the Grönwall integrand of the stability estimate at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaComponents {
    /// `Λ[h]` without its constant.
    pub lambda_h: f64,
    pub lambda_g: f64,
    /// `‖⟨·⟩^{(k-γ)/2}h‖²_{H^s}`.
    pub sobolev_h: f64,
    /// `‖⟨·⟩^{|γ|}g‖_q^r`.
    pub prodi_serrin_g: f64,
    /// `‖⟨·⟩^{γ/2}⟨·⟩^{k/2}(h-g)‖²_{L²}`.
    pub weighted_l2: f64,
}

impl ThetaComponents {
    /// `Θ/C = 1 + Λ[h] + Λ[g] + ‖·‖²_{H^s} + ‖·‖_q^r`.
    pub fn profile(&self) -> f64 {
        1.0 + self.lambda_h + self.lambda_g + self.sobolev_h + self.prodi_serrin_g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityTrace {
    pub t: Vec<f64>,
    /// `𝒩(t) = ‖h(t) - g(t)‖²_{L²_k}`.
    pub distance: Vec<f64>,
    pub theta: Vec<ThetaComponents>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub trace: StabilityTrace,
    pub constant: f64,
    pub fit_records: usize,
    pub cone: Vec<f64>,
    /// `𝒩` vanishes at every record.
    pub identical: bool,
    pub verdict: InequalityVerdict,
}

/// The exponent `ν = -(3+2γ)/4` of the `Λ` functional, which must lie in `(0, s)`.
pub fn lambda_nu(kernel: &CollisionKernel) -> f64 {
    -(3.0 + 2.0 * kernel.gamma) / 4.0
}

pub fn stability_gate(config: &SolverConfig) -> Result<()> {
    let kernel = &config.kernel;
    if kernel.dim != 3 {
        return param(format!("the stability estimate is stated for d = 3, got d = {}", kernel.dim));
    }
    if !(config.k > 11.0 + 4.0 * kernel.s) {
        return param(format!("k = {} must exceed 11 + 4s = {}", config.k, 11.0 + 4.0 * kernel.s));
    }
    let nu = lambda_nu(kernel);
    if !(nu > 0.0 && nu < kernel.s) {
        return param(format!("nu = -(3+2gamma)/4 = {nu} must lie in (0, s = {})", kernel.s));
    }
    Ok(())
}

/// `(1 + ‖φ‖^{1/2}_{L¹_{γ+3+2s}})(‖φ‖_{L¹_{4+|γ|}} + ‖⟨·⟩^{k/2}φ‖²_{H^s} + ‖φ‖_{L²_{2(4+|γ|)}}^{s/(s-ν)})`.
pub fn lambda_profile(phi: &GridFunction, kernel: &CollisionKernel, k: f64) -> Result<f64> {
    let (gamma, s) = (kernel.gamma, kernel.s);
    let nu = lambda_nu(kernel);
    let a = 4.0 + gamma.abs();
    let lead = 1.0 + lp_norm(phi, 1.0, gamma + 3.0 + 2.0 * s)?.sqrt();
    let hs = sobolev_norm(&phi.weighted(0.5 * k), s, false)?.powi(2);
    let l2 = lp_norm(phi, 2.0, 2.0 * a)?.powf(s / (s - nu));
    Ok(lead * (lp_norm(phi, 1.0, a)? + hs + l2))
}

fn theta_components(h: &GridFunction, g: &GridFunction, config: &SolverConfig, r: f64) -> Result<ThetaComponents> {
    let (kernel, k) = (&config.kernel, config.k);
    let gamma = kernel.gamma;
    let diff = h.sub(g)?;
    Ok(ThetaComponents {
        lambda_h: lambda_profile(h, kernel, k)?,
        lambda_g: lambda_profile(g, kernel, k)?,
        sobolev_h: sobolev_norm(&h.weighted(0.5 * (k - gamma)), kernel.s, false)?.powi(2),
        prodi_serrin_g: lp_norm(g, config.q, config.q * gamma.abs())?.powf(r),
        weighted_l2: lp_norm(&diff, 2.0, k + gamma)?.powi(2),
    })
}

/// Evolves `h0` and `g0` side by side and checks
/// `𝒩(t) ≤ 𝒩(0)·exp(2C∫₀ᵗΘ/C)` with `C` fitted on the first half from
/// `½d𝒩/dt ≤ C·(Θ/C)·‖⟨·⟩^{γ/2}F‖²`.
pub fn stability_run(h0: &GridFunction, g0: &GridFunction, config: &SolverConfig, slack: f64) -> Result<StabilityReport> {
    stability_gate(config)?;
    let extra = config.k + 2.0 * config.kernel.gamma.abs();
    for (name, x) in [("h0", h0), ("g0", g0)] {
        if !lp_norm(x, 2.0, extra)?.is_finite() {
            return Err(Error::Precondition(format!("{name} is not in L2 with weight k + 2|gamma|")));
        }
    }
    let cfg = config.clone().with_snapshots(1);
    let (th, tg) = rayon::join(|| evolve(h0, &cfg), || evolve(g0, &cfg));
    let (th, tg) = (th?, tg?);
    let r = cfg.prodi_serrin()?.r;
    let mut t = Vec::new();
    let mut distance = Vec::new();
    let mut theta = Vec::new();
    for (a, b) in th.snapshots.iter().zip(&tg.snapshots) {
        t.push(a.t);
        distance.push(lp_norm(&a.state.sub(&b.state)?, 2.0, cfg.k)?.powi(2));
        theta.push(theta_components(&a.state, &b.state, &cfg, r)?);
    }
    let identical = distance.iter().all(|&x| x == 0.0);
    let split = split_point(t.len());
    let rate = time_derivative(&t, &distance);
    let constant = (0..split)
        .filter(|&i| theta[i].weighted_l2 > 0.0)
        .map(|i| (0.5 * rate[i]).max(0.0) / (theta[i].profile() * theta[i].weighted_l2))
        .fold(0.0, f64::max);
    let profile: Vec<f64> = theta.iter().map(|c| constant * c.profile()).collect();
    let cone: Vec<f64> = cumulative_integral(&t, &profile).iter().map(|i| distance[0] * (2.0 * i).exp()).collect();
    let parts: Vec<InequalityVerdict> =
        (0..t.len()).map(|i| InequalityVerdict::new("stability", distance[i], cone[i], slack).with_note("t", t[i])).collect();
    let verdict = InequalityVerdict::all("stability", &parts)
        .with_constant("C", constant)
        .with_note("identical", if identical { 1.0 } else { 0.0 })
        .with_kernel(&cfg.kernel)
        .with_grid(&cfg.grid);
    Ok(StabilityReport { trace: StabilityTrace { t, distance, theta }, constant, fit_records: split, cone, identical, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_maxwellian;

    fn config2(n: usize, dt: f64, horizon: f64) -> SolverConfig {
        let kernel = CollisionKernel::new(2, -1.5, 0.5, 1.0, 1e-2, 4, 1).unwrap();
        let grid = VelocityGrid::new(2, 6.0, n).unwrap();
        SolverConfig::new(kernel, grid, dt, horizon, 2.0, 0.0, 2.0).unwrap()
    }

    #[test]
    fn config_gates() {
        let c = config2(16, 0.1, 0.3);
        assert_eq!(c.steps(), 3);
        let mut bad = c.clone();
        bad.dt = 0.0;
        assert!(matches!(bad.validate(), Err(Error::Parameter(_))));
        bad.dt = 0.5;
        assert!(bad.validate().is_err());
        let mut q = c.clone();
        q.q = 10.0;
        assert!(q.validate().is_err());
    }

    #[test]
    fn maxwellian_stays_put() {
        let c = config2(24, 0.05, 0.15);
        let m = make_maxwellian(c.grid, 1.0, &[0.0, 0.0], 1.0).unwrap();
        let traj = evolve(&m, &c).unwrap();
        assert_eq!(traj.records.len(), 4);
        let m0 = traj.records[0].mass;
        for r in &traj.records {
            assert!((r.mass - m0).abs() < 1e-6 * m0, "{} vs {m0}", r.mass);
            assert!(r.ps_accum >= 0.0);
        }
        let drift = traj.final_state.sub(&m).unwrap().max_abs() / m.max_abs();
        assert!(drift < 1e-2, "{drift}");
        let mut csv = Vec::new();
        traj.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,M_kp,D_skp,ps_norm,ps_accum,mass,momentum_x,momentum_y,energy,clipped_mass"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn projection_removes_the_conserved_moments() {
        let grid = VelocityGrid::new(2, 4.0, 12).unwrap();
        let f = make_maxwellian(grid, 1.0, &[0.3, 0.0], 0.8).unwrap();
        let q = GridFunction::from_fn(grid, |v| (v[0] - 0.2 * v[1]).sin() * (-0.5 * (v[0] * v[0] + v[1] * v[1])).exp());
        let c = conservative_projection(&q, &f).unwrap();
        for k in [0.0, 2.0] {
            assert!(moment(&c, k).abs() < 1e-13, "{}", moment(&c, k));
        }
        let mx: f64 = c.values().iter().enumerate().map(|(i, x)| x * grid.node(i)[0]).sum();
        assert!(mx.abs() < 1e-12);
    }

    #[test]
    fn derivative_and_integral_helpers() {
        let t = [0.0, 0.5, 1.0, 2.0];
        let y: Vec<f64> = t.iter().map(|x| 3.0 * x + 1.0).collect();
        assert!(time_derivative(&t, &y).iter().all(|d| (d - 3.0).abs() < 1e-12));
        let c = cumulative_integral(&t, &[2.0; 4]);
        assert!((c[3] - 4.0).abs() < 1e-12);
        let env = envelope_series(&t, &[0.0; 4], 2.0, 5.0);
        assert!(env.iter().all(|&e| e == 5.0));
        let env = envelope_series(&t, &[0.6; 4], 2.0, 5.0);
        assert!((env[3] - 5.0 * (0.6f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn ode_matches_closed_form() {
        let c = ode_comparison(1.0, 1.0, 1e6, 1e-3, 10.0, 30).unwrap();
        assert!(c.max_rel_exact < 1e-8, "{}", c.max_rel_exact);
        assert!(c.max_rel_asymptotic < 1e-2, "{}", c.max_rel_asymptotic);
        assert!(appearance_exponent(3, 0.5, 1.0 + 1e-12) < 1e-9);
    }

    #[test]
    fn endpoint_gate() {
        let kernel = CollisionKernel::new(3, -2.0, 0.4, 1.0, 1e-2, 4, 2).unwrap();
        let grid = VelocityGrid::new(3, 5.0, 8).unwrap();
        let c = SolverConfig::new(kernel, grid, 0.1, 0.2, 3.5, 0.0, 2.0).unwrap();
        let f = make_maxwellian(grid, 1.0, &[0.0; 3], 1.0).unwrap();
        let traj = Trajectory { config: c, records: vec![], snapshots: vec![], final_state: f };
        assert!(matches!(endpoint_r1_check(&traj, None, 0.05), Err(Error::Parameter(_))));
    }
}
