//! Acceptance suite: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each. Criteria in `KNOWN_FAILURES` are expected to fail
//! and the run asserts that they still do.

use std::process::ExitCode;
use std::time::Instant;

use vsboltz::angular::CollisionKernel;
use vsboltz::collision::{cancellation_check, q_strong, weak_form, CollisionSettings, PolarRule};
use vsboltz::functionals::{moment, prodi_serrin_sweep};
use vsboltz::grid::{make_maxwellian, GridFunction, VelocityGrid};
use vsboltz::harness::{run, ExperimentConfig, ExperimentKind, VERDICT_FILE};
use vsboltz::inequalities::{
    commutator, commutator_bound_check, commutator_single_integral, elementary_xy_check, interleave, poincare_sweep, poincare_terms, scaled_pairs,
    split_validate, Corpus, CorpusSpec, Observation,
};
use vsboltz::solver::{gronwall_envelope, lp_evolution_check, evolve, ode_comparison, stability_run, SolverConfig};
use vsboltz::Result;

/// Criteria that cannot be met as stated, with the reason.
const KNOWN_FAILURES: [(&str, &str); 1] = [(
    "AC7",
    "for (K, beta) = (2, 0.5) the asymptotic profile (K beta t)^(-1/beta) ignores y(0); at t = 1e-3 the exact solution differs from it by about 75%",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn kernel3(n_theta: usize, n_omega: usize) -> CollisionKernel {
    CollisionKernel::new(3, -2.0, 0.4, 1.0, 1e-2, n_theta, n_omega).unwrap()
}

fn standard_maxwellian(grid: VelocityGrid) -> Result<GridFunction> {
    make_maxwellian(grid, 1.0, &vec![0.0; grid.dim()], 1.0)
}

/// Nonnegative seeded corpus functions on `grid`, `count` of them.
fn nonnegative_corpus(grid: VelocityGrid, count: usize, seed: u64) -> Result<Vec<GridFunction>> {
    let mut size = count;
    loop {
        let corpus = Corpus::generate(grid, CorpusSpec::new(seed, size))?;
        let items: Vec<GridFunction> = corpus.items.into_iter().map(|i| i.function).filter(|f| f.nonnegative).take(count).collect();
        if items.len() == count {
            return Ok(items);
        }
        size *= 2;
    }
}

/// Worst relative conservation residuals `(mass, momentum_energy)` over `items`.
fn conservation_residuals(items: &[GridFunction], kernel: &CollisionKernel) -> Result<(f64, f64)> {
    let (mut mass, mut moments) = (0.0f64, 0.0f64);
    for f in items {
        let r = weak_form(f, f, kernel, &CollisionSettings::default())?.residuals();
        let m2 = moment(f, 2.0);
        mass = mass.max(r.mass.abs() / r.loss_scale);
        let worst = r.momentum.iter().map(|x| x.abs()).fold(r.energy.abs(), f64::max);
        moments = moments.max(worst / m2);
    }
    Ok((mass, moments))
}

fn ac1_conservation() -> Result<Outcome> {
    let kernel = kernel3(4, 2);
    let coarse = conservation_residuals(&nonnegative_corpus(VelocityGrid::new(3, 10.0, 24)?, 20, 1)?, &kernel)?;
    let fine = conservation_residuals(&nonnegative_corpus(VelocityGrid::new(3, 10.0, 32)?, 20, 1)?, &kernel)?;
    let halving = fine.1 <= 0.5 * coarse.1 || fine.1 <= 1e-10;
    let pass = coarse.0 <= 1e-12 && fine.0 <= 1e-12 && coarse.1 <= 1e-2 && halving;
    outcome(pass, format!("mass {:.2e}/{:.2e}, momentum+energy N=24 {:.2e}, N=32 {:.2e}", coarse.0, fine.0, coarse.1, fine.1))
}

fn ac2_equilibrium() -> Result<Outcome> {
    let kernel = kernel3(4, 2);
    let sup = |n: usize| -> Result<f64> {
        let m = standard_maxwellian(VelocityGrid::new(3, 6.0, n)?)?;
        Ok(q_strong(&m, &m, &kernel)?.result.max_abs())
    };
    let (coarse, fine) = (sup(16)?, sup(32)?);
    outcome(coarse >= 2.0 * fine && fine <= 1e-2, format!("sup|Q(M,M)| N=16 {coarse:.3e}, N=32 {fine:.3e}, ratio {:.2}", coarse / fine))
}

fn ac3_cancellation() -> Result<Outcome> {
    let m = standard_maxwellian(VelocityGrid::new(3, 6.0, 32)?)?;
    let v = cancellation_check(&m, None, &kernel3(16, 4), &PolarRule::default(), 0.01)?;
    outcome(v.pass, format!("relative error {:.3e} (tolerance 1e-2)", v.lhs))
}

fn ac4_elementary() -> Result<Outcome> {
    let mut detail = Vec::new();
    let mut pass = true;
    for p in [1.1, 2.0, 3.0, 10.0] {
        let v = elementary_xy_check(100_000, p, 4)?;
        pass &= v.pass;
        detail.push(format!("p={p}: {} violations", v.lhs));
    }
    outcome(pass, detail.join(", "))
}

fn ac5_eps_poincare() -> Result<Outcome> {
    let grid = VelocityGrid::new(2, 2.5, 1024)?;
    let kernel = CollisionKernel::new(2, -1.95, 0.95, 1.0, 1e-2, 8, 4)?;
    let q = 8.0;
    let pairs = scaled_pairs(grid, q, (0.006, 0.3), 40, 0.03, 11)?;
    let terms = pairs.iter().map(|p| poincare_terms(&p.g.scale(45.0), &p.phi, &kernel, q)).collect::<Result<Vec<_>>>()?;
    let (fit, val) = interleave(&terms);
    let sweep = poincare_sweep(&fit, &val, &[1e-2, 1e-1, 1.0], 0.05)?;
    let held_out = sweep.verdicts.iter().all(|v| v.pass);
    let slope_ok = (sweep.slope - sweep.predicted_slope).abs() <= 0.3 * sweep.predicted_slope.abs();
    outcome(
        held_out && slope_ok,
        format!("{}/{} held-out sweeps pass; slope {:.4} vs predicted {:.4}", sweep.verdicts.iter().filter(|v| v.pass).count(), sweep.verdicts.len(), sweep.slope, sweep.predicted_slope),
    )
}

fn ac6_prodi_serrin() -> Result<Outcome> {
    let v = prodi_serrin_sweep(1000, 6, 1e-12)?;
    outcome(v.pass, format!("worst scaling defect {:.2e}", v.lhs))
}

fn ac7_ode() -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, beta) in [(1.0, 1.0), (0.5, 2.0), (2.0, 0.5)] {
        let c = ode_comparison(k, beta, 1e6, 1e-3, 10.0, 40)?;
        pass &= c.max_rel_asymptotic <= 0.01;
        detail.push(format!("(K={k}, beta={beta}) {:.2e}", c.max_rel_asymptotic));
    }
    outcome(pass, format!("max relative gap to the asymptotic profile: {}", detail.join(", ")))
}

fn ac8_lp_evolution() -> Result<Outcome> {
    let grid = VelocityGrid::new(2, 6.0, 64)?;
    let kernel = CollisionKernel::new(2, -1.5, 0.5, 1.0, 1e-2, 4, 1)?;
    let mut f0 = make_maxwellian(grid, 0.5, &[1.5, 0.0], 0.4)?.add(&make_maxwellian(grid, 0.5, &[-1.5, 0.0], 0.4)?)?;
    f0.nonnegative = true;
    let mut pass = true;
    let mut detail = Vec::new();
    for k in [0.0, 4.0] {
        let traj = evolve(&f0, &SolverConfig::new(kernel, grid, 0.1, 3.0, 2.0, k, 2.0)?)?;
        let lp = lp_evolution_check(&traj, None, 0.05)?;
        let gw = gronwall_envelope(&traj, None, 0.05)?;
        pass &= lp.verdict.pass && gw.verdict.pass;
        detail.push(format!("k={k}: evolution {} (c_p {:.3e}), envelope {}", lp.verdict.pass, lp.constants.c_p, gw.verdict.pass));
    }
    outcome(pass, detail.join("; "))
}

fn ac9_commutator() -> Result<Outcome> {
    let grid = VelocityGrid::new(3, 6.0, 16)?;
    let kernel = kernel3(4, 2);
    let items = Corpus::generate(grid, CorpusSpec::new(1, 20))?.items;
    let n = items.len();
    let triples: Vec<(&GridFunction, &GridFunction, &GridFunction, String)> = (0..n)
        .map(|i| (&items[i].function, &items[(i + 1) % n].function, &items[(i + 2) % n].function, items[i].id.clone()))
        .collect();
    let mut zero = 0.0f64;
    for (f, g, psi, _) in triples.iter().take(10) {
        let scale = vsboltz::collision::q_weak(f, g, psi, &kernel)?.abs();
        zero = zero.max(commutator(f, g, psi, &kernel, 0.0)?.abs() / scale);
    }
    let (f, g, psi, _) = triples[0];
    let direct = commutator(f, g, psi, &kernel, 12.0)?;
    let single = commutator_single_integral(f, g, psi, &kernel, 12.0)?;
    let dual = (direct - single).abs() / direct.abs();
    let obs = triples
        .iter()
        .map(|(f, g, psi, id)| commutator_bound_check(f, g, psi, &kernel, 13.0, Some(1.0)).map(|v| Observation::new(id.clone(), v.lhs, v.rhs)))
        .collect::<Result<Vec<_>>>()?;
    let (fit, val) = interleave(&obs);
    let split = split_validate("commutator_bound", &fit, &val, 0.05);
    outcome(
        zero <= 1e-10 && dual <= 0.01 && split.pass,
        format!("R_0 {zero:.2e}, dual-path gap {dual:.2e}, held-out bound {}", split.pass),
    )
}

fn ac10_stability() -> Result<Outcome> {
    let grid = VelocityGrid::new(3, 6.0, 16)?;
    let mut h0 = make_maxwellian(grid, 0.6, &[1.0, 0.0, 0.0], 0.6)?.add(&make_maxwellian(grid, 0.4, &[-1.0, 0.5, 0.0], 0.5)?)?;
    h0.nonnegative = true;
    let mut g0 = GridFunction::from_fn(grid, |v| 1.0 + 1e-3 * (v[0] - 0.5 * v[1]).sin()).mul(&h0)?;
    g0.nonnegative = true;
    let config = SolverConfig::new(kernel3(4, 2), grid, 0.05, 0.5, 2.0, 13.0, 2.0)?;
    let twin = stability_run(&h0, &g0, &config, 0.05)?;
    let same = stability_run(&h0, &h0, &config, 0.05)?;
    let exact_zero = same.identical && same.trace.distance.iter().all(|&x| x == 0.0);
    outcome(twin.verdict.pass && exact_zero, format!("twin inside cone {} (C {:.2e}), identical run N == 0 {}", twin.verdict.pass, twin.constant, exact_zero))
}

fn ac11_determinism() -> Result<Outcome> {
    let mut config = ExperimentConfig::default();
    config.kernel.dim = 2;
    config.kernel.gamma = -1.5;
    config.kernel.s = 0.5;
    config.kernel.n_omega = 1;
    config.grid.radius = 5.0;
    config.grid.n = 12;
    config.corpus.size = 4;
    config.functional.k = 4.0;
    config.functional.ell = 4.0;
    let dir = tempfile::tempdir().map_err(|e| vsboltz::Error::Io(e.to_string()))?;
    let read = |name: &str| std::fs::read(dir.path().join(name).join(VERDICT_FILE)).map_err(|e| vsboltz::Error::Io(e.to_string()));
    run(ExperimentKind::Verify, &config, &dir.path().join("a"), Some(1))?;
    run(ExperimentKind::Verify, &config, &dir.path().join("b"), Some(1))?;
    run(ExperimentKind::Verify, &config, &dir.path().join("c"), Some(4))?;
    let (a, b, c) = (read("a")?, read("b")?, read("c")?);
    outcome(!a.is_empty() && a == b && a == c, format!("{} bytes, reruns identical {}, thread counts identical {}", a.len(), a == b, a == c))
}

type Criterion = (&'static str, &'static str, fn() -> Result<Outcome>);

const CRITERIA: [Criterion; 11] = [
    ("AC1", "conservation", ac1_conservation),
    ("AC2", "equilibrium", ac2_equilibrium),
    ("AC3", "cancellation identity", ac3_cancellation),
    ("AC4", "elementary inequalities", ac4_elementary),
    ("AC5", "eps-Poincare", ac5_eps_poincare),
    ("AC6", "Prodi-Serrin algebra", ac6_prodi_serrin),
    ("AC7", "ODE comparison", ac7_ode),
    ("AC8", "L^p evolution and Gronwall envelope", ac8_lp_evolution),
    ("AC9", "commutator", ac9_commutator),
    ("AC10", "stability cone", ac10_stability),
    ("AC11", "determinism", ac11_determinism),
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = Vec::new();
    for (id, name, check) in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let result = check().unwrap_or_else(|e| Outcome { pass: false, detail: format!("error: {e}") });
        let known = KNOWN_FAILURES.iter().find(|(k, _)| *k == id);
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("{tag} {id} {name}: {} [{:.1} s]", result.detail, start.elapsed().as_secs_f64());
        match (result.pass, known) {
            (false, Some((_, why))) => println!("     known failure: {why}"),
            (true, Some(_)) => unexpected.push(format!("{id} is listed as a known failure but passed")),
            (false, None) => unexpected.push(format!("{id} failed")),
            (true, None) => {}
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        for u in &unexpected {
            eprintln!("unexpected: {u}");
        }
        ExitCode::FAILURE
    }
}
