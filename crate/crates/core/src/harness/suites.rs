//! The `verify` suites: each turns the configured corpus into check records.

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::angular::CollisionKernel;
use crate::collision::{
    cancellation_check, changevar_check, coercivity_terms, coercivity_verdict, fit_coercivity, q_strong, q_weak, weak_form, CollisionSettings,
    PolarRule,
};
use crate::error::{Error, Result};
use crate::functionals::{hls_check, hls_sharp_constant, interpolation_check, moment, prodi_serrin_sweep};
use crate::grid::{make_maxwellian, GridFunction, VelocityGrid};
use crate::inequalities::{
    commutator, commutator_bound_check, conv_bound_check, elementary_xy_check, interleave, poincare_sweep, poincare_terms, split_validate,
    trilinear_check, weight_cancellation_check, weighted_poincare_terms, CancellationForm, Corpus, Observation,
};
use crate::solver::constant_candidates;
use crate::verdict::InequalityVerdict;

/// Every suite `verify all` runs, in id order.
pub const SUITES: [&str; 15] = [
    "cancellation",
    "changevar",
    "coercivity",
    "commutator",
    "conservation",
    "conv_bound",
    "elementary",
    "eps_poincare",
    "eps_poincare_weighted",
    "equilibrium",
    "hls",
    "interpolation",
    "prodi_serrin",
    "trilinear",
    "weight_cancellation",
];

/// Tolerance of the `ℛ₀ ≡ 0` identity, relative to `|⟨Q(f,g),ψ⟩|`.
pub const COMMUTATOR_ZERO_TOL: f64 = 1e-10;
/// Mass residual of the weak form relative to its loss scale.
pub const MASS_TOL: f64 = 1e-12;
/// Items used by the quadrature identities, which are costlier per item.
const IDENTITY_ITEMS: usize = 3;
const POINTWISE_SAMPLES: usize = 10_000;
const TRIPLE_SAMPLES: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// A parameter gate rules the check out for this configuration.
    Skipped,
}

/// One line of a verdict file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub id: String,
    pub suite: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<InequalityVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl CheckRecord {
    pub fn judged(suite: &str, id: impl Into<String>, verdict: InequalityVerdict) -> Self {
        let status = if verdict.pass { Status::Pass } else { Status::Fail };
        Self { id: format!("{suite}/{}", id.into()), suite: suite.into(), status, verdict: Some(verdict), reason: None }
    }

    pub fn skipped(suite: &str, id: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { id: format!("{suite}/{}", id.into()), suite: suite.into(), status: Status::Skipped, verdict: None, reason: Some(reason.into()) }
    }
}

/// Re-judges a verdict at a different slack, keeping its metadata.
fn at_slack(v: InequalityVerdict, slack: f64) -> InequalityVerdict {
    let mut out = InequalityVerdict::new(v.name.clone(), v.lhs, v.rhs, slack);
    out.fitted_constants = v.fitted_constants;
    out.provenance = v.provenance;
    out
}

/// Shared inputs of all suites of one run.
pub struct SuiteContext<'a> {
    pub config: &'a ExperimentConfig,
    pub kernel: CollisionKernel,
    pub grid: VelocityGrid,
    pub corpus: Corpus,
}

impl<'a> SuiteContext<'a> {
    pub fn new(config: &'a ExperimentConfig) -> Result<Self> {
        let grid = config.grid()?;
        let corpus = Corpus::generate(grid, config.corpus_spec()?)?;
        Ok(Self { config, kernel: config.kernel()?, grid, corpus })
    }

    fn items(&self) -> impl Iterator<Item = (&str, &GridFunction)> {
        self.corpus.items.iter().map(|i| (i.id.as_str(), &i.function))
    }

    /// Cyclic neighbours `(i, i+1)`.
    fn pairs(&self) -> Vec<(String, &GridFunction, &GridFunction)> {
        let it = &self.corpus.items;
        (0..it.len()).map(|i| {
            let j = (i + 1) % it.len();
            (format!("{}+{}", it[i].id, it[j].id), &it[i].function, &it[j].function)
        })
        .collect()
    }

    /// Cyclic neighbours `(i, i+1, i+2)`.
    fn triples(&self) -> Vec<(String, &GridFunction, &GridFunction, &GridFunction)> {
        let it = &self.corpus.items;
        let n = it.len();
        (0..n)
            .map(|i| {
                let (j, k) = ((i + 1) % n, (i + 2) % n);
                (format!("{}+{}+{}", it[i].id, it[j].id, it[k].id), &it[i].function, &it[j].function, &it[k].function)
            })
            .collect()
    }
}

/// Parameter errors become a skipped record; anything else propagates.
fn gated(suite: &str, id: &str, run: impl FnOnce() -> Result<Vec<CheckRecord>>) -> Result<Vec<CheckRecord>> {
    match run() {
        Err(Error::Parameter(msg)) => Ok(vec![CheckRecord::skipped(suite, id, msg)]),
        other => other,
    }
}

/// Fits on even-indexed observations and validates on the rest.
fn split_record(suite: &str, obs: &[Observation], slack: f64) -> CheckRecord {
    let (fit, val) = interleave(obs);
    CheckRecord::judged(suite, "held_out", split_validate(suite, &fit, &val, slack))
}

pub fn run_suite(name: &str, ctx: &SuiteContext) -> Result<Vec<CheckRecord>> {
    let cfg = ctx.config;
    let tol = &cfg.tolerance;
    let kernel = &ctx.kernel;
    match name {
        "conservation" => ctx
            .items()
            .map(|(id, f)| {
                let r = weak_form(f, f, kernel, &CollisionSettings::default())?.residuals();
                let m2 = moment(f, 2.0);
                let mass = r.mass.abs() / r.loss_scale.max(f64::MIN_POSITIVE);
                let momentum = r.momentum.iter().fold(0.0f64, |m, x| m.max(x.abs())) / m2;
                let energy = r.energy.abs() / m2;
                let parts = [InequalityVerdict::identity("mass", mass, MASS_TOL), InequalityVerdict::identity("momentum_energy", momentum.max(energy), tol.identity)];
                let v = InequalityVerdict::all("conservation", &parts)
                    .with_note("mass_relative", mass)
                    .with_note("momentum_relative", momentum)
                    .with_note("energy_relative", energy)
                    .with_kernel(kernel)
                    .with_grid(f.grid());
                Ok(CheckRecord::judged(name, id, v))
            })
            .collect(),
        "equilibrium" => {
            let m = make_maxwellian(ctx.grid, 1.0, &vec![0.0; ctx.grid.dim()], 1.0)?;
            let q = q_strong(&m, &m, kernel)?;
            let v = InequalityVerdict::identity("equilibrium", q.result.max_abs(), tol.identity).with_kernel(kernel).with_grid(&ctx.grid);
            Ok(vec![CheckRecord::judged(name, "maxwellian", v)])
        }
        "interpolation" => ctx
            .items()
            .map(|(id, f)| {
                let v = interpolation_check(f, [(4.0 / 3.0, 2.0), (0.0, 1.0), (2.0, 4.0)], 1.0 / 3.0)?;
                Ok(CheckRecord::judged(name, id, at_slack(v, tol.exact_slack)))
            })
            .collect(),
        "hls" => {
            let d = ctx.grid.dim() as f64;
            let lambda = 1.0;
            let p = 2.0 * d / (2.0 * d - lambda);
            let sharp = hls_sharp_constant(ctx.grid.dim(), lambda);
            ctx.pairs()
                .into_iter()
                .map(|(id, g, h)| Ok(CheckRecord::judged(name, id, at_slack(hls_check(g, h, p, p, lambda, Some(sharp))?, tol.exact_slack))))
                .collect()
        }
        "coercivity" => {
            let bounds = cfg.bounds()?;
            let terms = ctx.pairs().into_iter().map(|(_, g, f)| coercivity_terms(g, f, kernel, &bounds)).collect::<Result<Vec<_>>>()?;
            let (fit, val) = interleave(&terms);
            let rec = match fit_coercivity(&fit, &constant_candidates()) {
                Some(c) => {
                    let parts: Vec<InequalityVerdict> = val.iter().map(|t| coercivity_verdict(t, c.c0, c.cap_c0, tol.fitted_slack)).collect();
                    CheckRecord::judged(name, "held_out", InequalityVerdict::all("coercivity", &parts).with_constant("c0", c.c0).with_constant("C0", c.cap_c0).with_kernel(kernel))
                }
                None => {
                    let mut v = InequalityVerdict::new("coercivity", 1.0, 0.0, 0.0);
                    v.pass = false;
                    CheckRecord { reason: Some("no candidate lower-order constant gives a positive c0".into()), ..CheckRecord::judged(name, "held_out", v) }
                }
            };
            Ok(vec![rec])
        }
        "changevar" => ctx
            .items()
            .take(IDENTITY_ITEMS)
            .map(|(id, f)| Ok(CheckRecord::judged(name, id, changevar_check(f, kernel, &PolarRule::default(), tol.identity)?)))
            .collect(),
        "cancellation" => ctx
            .items()
            .take(IDENTITY_ITEMS)
            .map(|(id, f)| Ok(CheckRecord::judged(name, id, cancellation_check(f, None, kernel, &PolarRule::default(), tol.identity)?)))
            .collect(),
        "eps_poincare" => gated(name, "sweep", || {
            let terms = ctx.pairs().into_iter().map(|(_, g, phi)| poincare_terms(g, phi, kernel, cfg.functional.q)).collect::<Result<Vec<_>>>()?;
            let (fit, val) = interleave(&terms);
            let sweep = poincare_sweep(&fit, &val, &cfg.functional.eps, tol.fitted_slack)?;
            Ok(sweep
                .verdicts
                .into_iter()
                .zip(&sweep.eps)
                .map(|(v, e)| CheckRecord::judged(name, format!("eps={e}"), v.with_note("slope", sweep.slope).with_note("predicted_slope", sweep.predicted_slope)))
                .collect())
        }),
        "eps_poincare_weighted" => gated(name, "sweep", || {
            let (beta, a) = (cfg.functional.beta, cfg.moment_exponent());
            let terms = ctx
                .pairs()
                .into_iter()
                .map(|(_, g, phi)| weighted_poincare_terms(g, phi, kernel, cfg.functional.q, beta, a))
                .collect::<Result<Vec<_>>>()?;
            let (fit, val) = interleave(&terms);
            Ok(cfg
                .functional
                .eps
                .iter()
                .map(|&e| {
                    let c = fit.iter().map(|t| t.required_constant(e)).fold(0.0, f64::max);
                    let parts: Vec<InequalityVerdict> = val
                        .iter()
                        .map(|t| InequalityVerdict::new("eps_poincare_weighted", t.lhs, e * t.sobolev + c * t.moments * t.l2, tol.fitted_slack))
                        .collect();
                    let mut v = InequalityVerdict::all("eps_poincare_weighted", &parts).with_constant("C_eps", c).with_note("eps", e);
                    v.pass = v.pass && c.is_finite();
                    CheckRecord::judged(name, format!("eps={e}"), v)
                })
                .collect())
        }),
        "conv_bound" => gated(name, "held_out", || {
            let (alpha, beta, ell) = (kernel.gamma, cfg.functional.beta, cfg.functional.ell);
            let obs = ctx
                .pairs()
                .into_iter()
                .map(|(id, chi, psi)| conv_bound_check(chi, psi, kernel, alpha, beta, ell, Some(1.0)).map(|v| Observation::new(id, v.lhs, v.rhs)))
                .collect::<Result<Vec<_>>>()?;
            Ok(vec![split_record(name, &obs, tol.fitted_slack)])
        }),
        "trilinear" => gated(name, "held_out", || {
            let ell = cfg.functional.ell;
            let obs = ctx
                .triples()
                .into_iter()
                .map(|(id, f, g, h)| trilinear_check(f, g, h, kernel, ell, Some(1.0)).map(|v| Observation::new(id, v.lhs.abs(), v.rhs)))
                .collect::<Result<Vec<_>>>()?;
            Ok(vec![split_record(name, &obs, tol.fitted_slack)])
        }),
        "commutator" => {
            let triples = ctx.triples();
            let mut out: Vec<CheckRecord> = triples
                .iter()
                .map(|(id, f, g, psi)| {
                    let r0 = commutator(f, g, psi, kernel, 0.0)?;
                    let scale = q_weak(f, g, psi, kernel)?.abs().max(f64::MIN_POSITIVE);
                    let v = InequalityVerdict::identity("commutator_k0", r0.abs() / scale, COMMUTATOR_ZERO_TOL);
                    Ok(CheckRecord::judged(name, format!("k0/{id}"), v))
                })
                .collect::<Result<_>>()?;
            out.extend(gated(name, "bound", || {
                let k = cfg.functional.k;
                let obs = triples
                    .iter()
                    .map(|(id, f, g, psi)| commutator_bound_check(f, g, psi, kernel, k, Some(1.0)).map(|v| Observation::new(id.clone(), v.lhs, v.rhs)))
                    .collect::<Result<Vec<_>>>()?;
                let (fit, val) = interleave(&obs);
                Ok(vec![CheckRecord::judged(name, "bound", split_validate("commutator_bound", &fit, &val, tol.fitted_slack).with_note("k", k))])
            })?);
            Ok(out)
        }
        "elementary" => [1.1, 2.0, 3.0, 10.0]
            .iter()
            .map(|&p| Ok(CheckRecord::judged(name, format!("p={p}"), elementary_xy_check(POINTWISE_SAMPLES, p, cfg.corpus.seed)?)))
            .collect(),
        "weight_cancellation" => {
            let forms = [("pointwise", CancellationForm::Pointwise, 4.0, 1.0), ("integrated", CancellationForm::Integrated, 4.0, 0.5)];
            forms
                .iter()
                .map(|&(tag, form, ell, alpha)| {
                    gated(name, tag, || {
                        let v = weight_cancellation_check(kernel, ell, alpha, form, TRIPLE_SAMPLES, cfg.corpus.seed)?;
                        Ok(vec![CheckRecord::judged(name, tag, at_slack(v, tol.fitted_slack))])
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(|v| v.into_iter().flatten().collect())
        }
        "prodi_serrin" => Ok(vec![CheckRecord::judged(name, "random_tuples", prodi_serrin_sweep(1000, cfg.corpus.seed, 1e-12)?)]),
        other => Err(Error::Config(format!("unknown verify suite '{other}', expected 'all' or one of {SUITES:?}"))),
    }
}

/// Expands `all` and checks every name; duplicates are dropped.
pub fn resolve_suites(requested: &[String]) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for r in requested {
        if r == "all" {
            out.extend(SUITES.iter().map(|s| s.to_string()));
        } else if SUITES.contains(&r.as_str()) {
            out.push(r.clone());
        } else {
            return Err(Error::Config(format!("unknown verify suite '{r}', expected 'all' or one of {SUITES:?}")));
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}
