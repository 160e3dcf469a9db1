//! Checkable versions of the functional inequalities, with empirical constant
//! fitting on one half of a corpus and validation on the other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::angular::CollisionKernel;
use crate::collision::{coercivity_functional, single_integral, weak_form_weighted, CollisionSettings};
use crate::engine::Outside;
use crate::error::{param, Error, Result};
use crate::functionals::{c_alpha, lp_norm, moment, prodi_serrin_from_q, sobolev_norm, ProdiSerrinParams};
use crate::grid::{bracket, ClassYBounds, GridFunction, Velocity, VelocityGrid};
use crate::verdict::{InequalityVerdict, EXACT_SLACK, FITTED_SLACK};

// ---------------------------------------------------------------------------
// Corpus

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Maxwellian,
    ShiftedGaussian,
    AnisotropicGaussian,
    TwoBump,
    SmoothedField,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Maxwellian, Family::ShiftedGaussian, Family::AnisotropicGaussian, Family::TwoBump, Family::SmoothedField];

    pub fn tag(self) -> &'static str {
        match self {
            Family::Maxwellian => "maxwellian",
            Family::ShiftedGaussian => "shifted",
            Family::AnisotropicGaussian => "anisotropic",
            Family::TwoBump => "two_bump",
            Family::SmoothedField => "smoothed_field",
        }
    }
}

/// Mass, second moment and entropy of a corpus entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassData {
    pub mass: f64,
    pub energy: f64,
    pub entropy: f64,
}

impl ClassData {
    pub fn of(f: &GridFunction) -> Self {
        let dv = f.grid().cell_volume();
        let entropy = f.values().iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>() * dv;
        Self { mass: moment(f, 0.0), energy: moment(f, 2.0), entropy }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub id: String,
    pub family: Family,
    pub function: GridFunction,
    pub class: ClassData,
}

/// Generation parameters: the seed, the number of entries and the class
/// bounds every entry must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub size: usize,
    pub bounds: ClassYBounds,
    /// Temperature range of the Gaussian building blocks.
    pub temperature: (f64, f64),
    /// Bound on each component of the Gaussian means.
    pub max_shift: f64,
}

impl CorpusSpec {
    pub fn new(seed: u64, size: usize) -> Self {
        Self { seed, size, bounds: ClassYBounds::default(), temperature: (0.6, 1.0), max_shift: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub items: Vec<CorpusItem>,
    pub spec: CorpusSpec,
}

fn gaussian(v: &Velocity, d: usize, mean: &[f64; 3], temps: &[f64; 3]) -> f64 {
    let mut e = 0.0;
    let mut norm = 1.0;
    for a in 0..d {
        e += (v[a] - mean[a]).powi(2) / (2.0 * temps[a]);
        norm *= 2.0 * std::f64::consts::PI * temps[a];
    }
    (-e).exp() / norm.sqrt()
}

impl Corpus {
    /// Cycles through the families in order, drawing shape parameters from a
    /// ChaCha stream seeded by `spec.seed`. Every entry is checked against the
    /// class bounds.
    pub fn generate(grid: VelocityGrid, spec: CorpusSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let d = grid.dim();
        let (t_lo, t_hi) = spec.temperature;
        if !(t_lo > 0.0 && t_hi >= t_lo) {
            return param(format!("temperature range ({t_lo}, {t_hi}) is invalid"));
        }
        let mut items = Vec::with_capacity(spec.size);
        for i in 0..spec.size {
            let family = Family::ALL[i % Family::ALL.len()];
            let mass = rng.random_range(0.8..1.2);
            let temp = rng.random_range(t_lo..=t_hi);
            let mut mean = [0.0; 3];
            let mut temps = [temp; 3];
            match family {
                Family::Maxwellian => {}
                Family::ShiftedGaussian => {
                    for m in mean.iter_mut().take(d) {
                        *m = rng.random_range(-spec.max_shift..=spec.max_shift);
                    }
                }
                Family::AnisotropicGaussian | Family::TwoBump | Family::SmoothedField => {
                    for a in 0..d {
                        mean[a] = rng.random_range(-spec.max_shift..=spec.max_shift);
                        temps[a] = rng.random_range(t_lo..=t_hi);
                    }
                }
            }
            let f = match family {
                Family::TwoBump => {
                    let mut dir = [0.0; 3];
                    for x in dir.iter_mut().take(d) {
                        *x = StandardNormal.sample(&mut rng);
                    }
                    let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    let sep = rng.random_range(0.8..1.5);
                    let split = rng.random_range(0.3..0.7);
                    let (mut a, mut b) = (mean, mean);
                    for k in 0..d {
                        a[k] += sep * dir[k] / n;
                        b[k] -= sep * dir[k] / n;
                    }
                    let half = temps.map(|t| 0.6 * t);
                    GridFunction::from_fn(grid, |v| mass * (split * gaussian(v, d, &a, &half) + (1.0 - split) * gaussian(v, d, &b, &half)))
                }
                Family::SmoothedField => {
                    let modes: Vec<([f64; 3], f64, f64)> = (0..6)
                        .map(|_| {
                            let mut k = [0.0; 3];
                            for x in k.iter_mut().take(d) {
                                *x = rng.random_range(-1.5..1.5);
                            }
                            let amp: f64 = StandardNormal.sample(&mut rng);
                            (k, amp / 6f64.sqrt(), rng.random_range(0.0..std::f64::consts::TAU))
                        })
                        .collect();
                    GridFunction::from_fn(grid, |v| {
                        let noise: f64 = modes.iter().map(|(k, a, ph)| a * (k[0] * v[0] + k[1] * v[1] + k[2] * v[2] + ph).cos()).sum();
                        mass * gaussian(v, d, &mean, &temps) * (1.0 + 0.7 * noise).max(0.0)
                    })
                }
                _ => GridFunction::from_fn(grid, |v| mass * gaussian(v, d, &mean, &temps)),
            };
            let mut f = f;
            f.nonnegative = true;
            spec.bounds.check(&f).map_err(|e| Error::Precondition(format!("corpus item {i}: {e}")))?;
            items.push(CorpusItem { id: format!("{}-{i:03}", family.tag()), family, class: ClassData::of(&f), function: f });
        }
        Ok(Self { items, spec })
    }

    /// Interleaved split: even positions fit, odd positions validate.
    pub fn split(&self) -> (Vec<&CorpusItem>, Vec<&CorpusItem>) {
        let fit = self.items.iter().step_by(2).collect();
        let val = self.items.iter().skip(1).step_by(2).collect();
        (fit, val)
    }
}

// ---------------------------------------------------------------------------
// Constant fitting

/// One observation for a fitted inequality `lhs ≤ C·structural`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    pub lhs: f64,
    pub structural: f64,
}

impl Observation {
    pub fn new(id: impl Into<String>, lhs: f64, structural: f64) -> Self {
        Self { id: id.into(), lhs, structural }
    }

    /// `lhs / structural`, with `0/0 = 0` and `x/0 = ∞` for `x > 0`.
    pub fn ratio(&self) -> f64 {
        if self.lhs <= 0.0 {
            0.0
        } else if self.structural > 0.0 {
            self.lhs / self.structural
        } else {
            f64::INFINITY
        }
    }
}

/// Largest ratio over the fit set.
pub fn fit_constant(fit: &[Observation]) -> f64 {
    fit.iter().map(Observation::ratio).fold(0.0, f64::max)
}

/// Fits `C` on `fit` and checks every member of `validate` against it. The
/// reported verdict is the worst validation item.
pub fn split_validate(name: &str, fit: &[Observation], validate: &[Observation], slack: f64) -> InequalityVerdict {
    let c = fit_constant(fit);
    let parts: Vec<InequalityVerdict> = validate
        .iter()
        .map(|o| InequalityVerdict::new(name, o.lhs, c * o.structural, slack).with_item(o.id.clone()))
        .collect();
    let mut v = if parts.is_empty() {
        InequalityVerdict::new(name, 0.0, 0.0, slack)
    } else {
        InequalityVerdict::all(name, &parts)
    };
    v.fitted_constants.insert("C".into(), c);
    v.provenance.notes.insert("fit_count".into(), fit.len() as f64);
    v.provenance.notes.insert("validate_count".into(), validate.len() as f64);
    v.pass = v.pass && c.is_finite();
    v
}

/// Splits observations by position (even → fit, odd → validate).
pub fn interleave<T: Clone>(all: &[T]) -> (Vec<T>, Vec<T>) {
    let fit = all.iter().step_by(2).cloned().collect();
    let val = all.iter().skip(1).step_by(2).cloned().collect();
    (fit, val)
}

fn dot(a: &GridFunction, b: &GridFunction) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum::<f64>() * a.grid().cell_volume()
}

/// `∫ c_α[χ] ψ²`.
fn conv_energy(chi: &GridFunction, psi: &GridFunction, alpha: f64) -> Result<f64> {
    let c = c_alpha(chi, alpha)?;
    Ok(dot(&c, &psi.map(|x| x * x)))
}

// ---------------------------------------------------------------------------
// ε-Poincaré

/// The quantities entering the ε-Poincaré inequality for one `(g, φ)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareTerms {
    /// `∫φ² c_γ[g]`.
    pub lhs: f64,
    /// `‖⟨·⟩^{γ/2}φ‖²_{Ḣ^s}`.
    pub sobolev: f64,
    /// `‖g‖_{L¹}`.
    pub l1: f64,
    /// `‖⟨·⟩^{|γ|}g‖_q^{s/(s-ν)}`.
    pub lq: f64,
    /// `∫φ²⟨v⟩^γ`.
    pub weighted_l2: f64,
    pub params: ProdiSerrinParams,
}

impl PoincareTerms {
    pub fn exponent(&self) -> f64 {
        self.params.nu / (self.params.s - self.params.nu)
    }

    /// `(‖g‖_{L¹} + ε^{-ν/(s-ν)}‖⟨·⟩^{|γ|}g‖_q^{s/(s-ν)})∫φ²⟨v⟩^γ`.
    pub fn bracket(&self, eps: f64) -> f64 {
        (self.l1 + eps.powf(-self.exponent()) * self.lq) * self.weighted_l2
    }

    /// Smallest `C₀` making the inequality hold for this pair.
    pub fn required_c0(&self, eps: f64) -> f64 {
        Observation::new("", (self.lhs - eps * self.sobolev).max(0.0), self.bracket(eps)).ratio()
    }

    /// Smallest coefficient `K` with `∫φ²c_γ[g] ≤ ε‖⟨·⟩^{γ/2}φ‖²_{Ḣ^s} + K∫φ²⟨v⟩^γ`.
    pub fn effective_constant(&self, eps: f64) -> f64 {
        Observation::new("", (self.lhs - eps * self.sobolev).max(0.0), self.weighted_l2).ratio()
    }

    pub fn rhs(&self, eps: f64, c0: f64) -> f64 {
        eps * self.sobolev + c0 * self.bracket(eps)
    }
}

pub fn poincare_terms(g: &GridFunction, phi: &GridFunction, kernel: &CollisionKernel, q: f64) -> Result<PoincareTerms> {
    g.grid().check_same(phi.grid())?;
    let params = prodi_serrin_from_q(g.grid().dim(), kernel.gamma, kernel.s, q)?;
    let gamma = kernel.gamma;
    let lhs = conv_energy(g, phi, gamma)?;
    let sobolev = sobolev_norm(&phi.weighted(0.5 * gamma), kernel.s, true)?.powi(2);
    let l1 = lp_norm(g, 1.0, 0.0)?;
    let lq = lp_norm(&g.weighted(gamma.abs()), q, 0.0)?.powf(params.s / (params.s - params.nu));
    let weighted_l2 = dot(&phi.map(|x| x * x), &GridFunction::from_fn(*phi.grid(), |v| bracket(v).powf(gamma)));
    Ok(PoincareTerms { lhs, sobolev, l1, lq, weighted_l2, params })
}

/// `∫φ²c_γ[g] ≤ ε‖⟨·⟩^{γ/2}φ‖²_{Ḣ^s} + C₀(‖g‖_{L¹} + ε^{-ν/(s-ν)}‖⟨·⟩^{|γ|}g‖_q^{s/(s-ν)})∫φ²⟨v⟩^γ`.
/// Without a supplied `C₀` the smallest admissible value for this pair is used.
pub fn eps_poincare(g: &GridFunction, phi: &GridFunction, kernel: &CollisionKernel, q: f64, eps: f64, c0: Option<f64>) -> Result<InequalityVerdict> {
    if !(eps > 0.0) {
        return param(format!("eps must be positive, got {eps}"));
    }
    let t = poincare_terms(g, phi, kernel, q)?;
    let c0 = c0.unwrap_or_else(|| t.required_c0(eps));
    Ok(InequalityVerdict::new("eps_poincare", t.lhs, t.rhs(eps, c0), EXACT_SLACK)
        .with_constant("C0", c0)
        .with_note("eps", eps)
        .with_note("nu", t.params.nu)
        .with_kernel(kernel)
        .with_grid(g.grid()))
}

/// A `(g, φ)` pair of a multi-scale family: `g(v) = λ^{-d/q}G(v/λ)` keeps
/// `‖g‖_q` fixed while `φ(v) = Φ(v/λ)` concentrates with it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPair {
    pub id: String,
    pub scale: f64,
    pub g: GridFunction,
    pub phi: GridFunction,
}

/// `size` pairs with scales spread geometrically over `[lo, hi]` and shapes
/// jittered by up to `jitter` (relative) from a seeded stream.
pub fn scaled_pairs(grid: VelocityGrid, q: f64, scales: (f64, f64), size: usize, jitter: f64, seed: u64) -> Result<Vec<ScaledPair>> {
    let (lo, hi) = scales;
    if !(lo > 0.0 && hi >= lo && size > 0) {
        return param(format!("invalid scale range ({lo}, {hi}) or size {size}"));
    }
    let d = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    for i in 0..size {
        let t = if size == 1 { 0.0 } else { i as f64 / (size - 1) as f64 };
        let lam = lo * (hi / lo).powf(t);
        let mut aniso = [1.0; 3];
        let mut offset = [0.0; 3];
        for a in 0..d {
            aniso[a] = 1.0 + jitter * rng.random_range(-1.0..1.0);
            offset[a] = 0.5 * jitter * rng.random_range(-1.0..1.0);
        }
        let width = 1.0 + jitter * rng.random_range(-1.0..1.0);
        let amp = lam.powf(-(d as f64) / q);
        let mut g = GridFunction::from_fn(grid, |v| {
            let r2: f64 = (0..d).map(|a| (v[a] / (lam * aniso[a])).powi(2)).sum();
            amp * (-0.5 * r2).exp()
        });
        g.nonnegative = true;
        let phi = GridFunction::from_fn(grid, |v| {
            let r2: f64 = (0..d).map(|a| (v[a] / lam - offset[a]).powi(2)).sum();
            (-0.5 * r2 / width).exp()
        });
        out.push(ScaledPair { id: format!("scale-{i:03}"), scale: lam, g, phi });
    }
    Ok(out)
}

/// Least-squares slope of `y` against `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Outcome of the ε-sweep on a split corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareSweep {
    pub eps: Vec<f64>,
    /// Fitted `C₀` per ε.
    pub fitted_c0: Vec<f64>,
    /// Fitted coefficient of `∫φ²⟨v⟩^γ` with the `ε‖·‖_{Ḣ^s}` term kept on the left.
    pub effective: Vec<f64>,
    pub slope: f64,
    pub predicted_slope: f64,
    pub verdicts: Vec<InequalityVerdict>,
}

/// Fits `C₀(ε)` on `fit` and validates on `validate` for each ε, then
/// regresses the log of the fitted effective coefficient against `log ε`.
pub fn poincare_sweep(fit: &[PoincareTerms], validate: &[PoincareTerms], eps: &[f64], slack: f64) -> Result<PoincareSweep> {
    let first = fit.first().ok_or_else(|| Error::Parameter("empty fit set".into()))?;
    let mut fitted_c0 = Vec::new();
    let mut effective = Vec::new();
    let mut verdicts = Vec::new();
    for &e in eps {
        let c0 = fit.iter().map(|t| t.required_c0(e)).fold(0.0, f64::max);
        let k = fit.iter().map(|t| t.effective_constant(e)).fold(0.0, f64::max);
        let parts: Vec<InequalityVerdict> = validate
            .iter()
            .enumerate()
            .map(|(i, t)| InequalityVerdict::new("eps_poincare", t.lhs, t.rhs(e, c0), slack).with_item(format!("validate-{i}")))
            .collect();
        let mut v = InequalityVerdict::all("eps_poincare", &parts).with_constant("C0", c0).with_note("eps", e);
        v.pass = v.pass && c0.is_finite();
        verdicts.push(v);
        fitted_c0.push(c0);
        effective.push(k);
    }
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = effective.iter().map(|k| k.ln()).collect();
    Ok(PoincareSweep {
        eps: eps.to_vec(),
        fitted_c0,
        effective,
        slope: regression_slope(&lx, &ly),
        predicted_slope: -first.exponent(),
        verdicts,
    })
}

/// Terms of the weighted ε-Poincaré inequality with `c_{γ+2s}[⟨·⟩^β g]` on the left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoincareTerms {
    pub lhs: f64,
    pub sobolev: f64,
    /// `‖⟨·⟩^a g‖_{L¹} + ‖⟨·⟩^{|γ|}g‖_q^{s/(s-ν)}`.
    pub moments: f64,
    /// `‖φ‖²_{L²}`.
    pub l2: f64,
}

impl WeightedPoincareTerms {
    pub fn required_constant(&self, eps: f64) -> f64 {
        Observation::new("", (self.lhs - eps * self.sobolev).max(0.0), self.moments * self.l2).ratio()
    }
}

pub fn weighted_poincare_terms(g: &GridFunction, phi: &GridFunction, kernel: &CollisionKernel, q: f64, beta: f64, a_exp: f64) -> Result<WeightedPoincareTerms> {
    g.grid().check_same(phi.grid())?;
    let gamma = kernel.gamma;
    if !(beta > 0.0) {
        return param(format!("beta must be positive, got {beta}"));
    }
    if !(a_exp > beta + gamma.abs()) {
        return param(format!("moment exponent a = {a_exp} must exceed beta + |gamma| = {}", beta + gamma.abs()));
    }
    if !(gamma + 2.0 * kernel.s < 0.0) {
        return param(format!("need gamma + 2s < 0, got {}", gamma + 2.0 * kernel.s));
    }
    let p = prodi_serrin_from_q(g.grid().dim(), gamma, kernel.s, q)?;
    let lhs = conv_energy(&g.weighted(beta), phi, gamma + 2.0 * kernel.s)?;
    let sobolev = sobolev_norm(&phi.weighted(0.5 * gamma), kernel.s, true)?.powi(2);
    let moments = lp_norm(&g.weighted(a_exp), 1.0, 0.0)? + lp_norm(&g.weighted(gamma.abs()), q, 0.0)?.powf(p.s / (p.s - p.nu));
    let l2 = lp_norm(phi, 2.0, 0.0)?.powi(2);
    Ok(WeightedPoincareTerms { lhs, sobolev, moments, l2 })
}

/// `∫φ²c_{γ+2s}[⟨·⟩^βg] ≤ ε‖⟨·⟩^{γ/2}φ‖²_{Ḣ^s} + C_ε(‖⟨·⟩^a g‖_{L¹} + ‖⟨·⟩^{|γ|}g‖_q^{s/(s-ν)})‖φ‖²_{L²}`.
#[allow(clippy::too_many_arguments)]
pub fn eps_poincare_weighted(g: &GridFunction, phi: &GridFunction, kernel: &CollisionKernel, q: f64, beta: f64, a_exp: f64, eps: f64, c_eps: Option<f64>) -> Result<InequalityVerdict> {
    if !(eps > 0.0) {
        return param(format!("eps must be positive, got {eps}"));
    }
    let t = weighted_poincare_terms(g, phi, kernel, q, beta, a_exp)?;
    let c = c_eps.unwrap_or_else(|| t.required_constant(eps));
    Ok(InequalityVerdict::new("eps_poincare_weighted", t.lhs, eps * t.sobolev + c * t.moments * t.l2, EXACT_SLACK)
        .with_constant("C_eps", c)
        .with_note("eps", eps)
        .with_kernel(kernel)
        .with_grid(g.grid()))
}

// ---------------------------------------------------------------------------
// Convolution bound

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvBranch {
    /// `-3/2 < α + 2s < 0`: `L²` norm of the weighted χ.
    Soft,
    /// `α + 2s > 0`: `L¹` norm of the weighted χ.
    ModeratelySoft,
}

/// Picks the branch of the convolution bound, checking its gates.
pub fn conv_branch(dim: usize, s: f64, alpha: f64, ell: f64) -> Result<ConvBranch> {
    if dim != 3 {
        return param(format!("the convolution bound is stated for d = 3, got {dim}"));
    }
    if !(alpha > -3.0 && alpha <= 1.0) {
        return param(format!("alpha must lie in (-3, 1], got {alpha}"));
    }
    let a2s = alpha + 2.0 * s;
    if a2s > 0.0 {
        return Ok(ConvBranch::ModeratelySoft);
    }
    if !(a2s > -1.5 && a2s < 0.0) {
        return param(format!("alpha + 2s = {a2s} lies outside (-3/2, 0) and is not positive"));
    }
    if !(ell > 1.5 + a2s) {
        return param(format!("ell = {ell} must exceed 3/2 + alpha + 2s = {}", 1.5 + a2s));
    }
    Ok(ConvBranch::Soft)
}

/// Structural right-hand side of the convolution bound (without the constant).
pub fn conv_bound_structural(chi: &GridFunction, psi: &GridFunction, s: f64, alpha: f64, beta: f64, ell: f64, branch: ConvBranch) -> Result<f64> {
    let norm = match branch {
        ConvBranch::Soft => lp_norm(&chi.weighted(alpha.abs() + beta + ell), 2.0, 0.0)?,
        ConvBranch::ModeratelySoft => lp_norm(&chi.weighted(alpha.abs() + beta), 1.0, 0.0)?,
    };
    let hs = sobolev_norm(&psi.weighted(0.5 * (alpha - beta)), s, false)?.powi(2);
    let l2 = lp_norm(&psi.weighted(0.5 * alpha), 2.0, 0.0)?.powi(2);
    Ok(norm * (hs + l2))
}

/// `∫c_α[χ]ψ² ≤ C_{β,ℓ}·‖⟨·⟩^{…}χ‖(‖⟨·⟩^{(α-β)/2}ψ‖²_{H^s} + ‖⟨·⟩^{α/2}ψ‖²_{L²})`.
#[allow(clippy::too_many_arguments)]
pub fn conv_bound_check(chi: &GridFunction, psi: &GridFunction, kernel: &CollisionKernel, alpha: f64, beta: f64, ell: f64, constant: Option<f64>) -> Result<InequalityVerdict> {
    chi.grid().check_same(psi.grid())?;
    let branch = conv_branch(chi.grid().dim(), kernel.s, alpha, ell)?;
    let lhs = conv_energy(&chi.abs(), psi, alpha)?;
    let structural = conv_bound_structural(chi, psi, kernel.s, alpha, beta, ell, branch)?;
    let c = constant.unwrap_or_else(|| Observation::new("", lhs, structural).ratio());
    Ok(InequalityVerdict::new("conv_bound", lhs, c * structural, EXACT_SLACK)
        .with_constant("C_beta_ell", c)
        .with_note("moderately_soft", (branch == ConvBranch::ModeratelySoft) as u8 as f64)
        .with_kernel(kernel)
        .with_grid(chi.grid()))
}

// ---------------------------------------------------------------------------
// Trilinear form and commutator

fn require_d3(kernel: &CollisionKernel, what: &str) -> Result<()> {
    if kernel.dim != 3 {
        return param(format!("{what} is stated for d = 3, got {}", kernel.dim));
    }
    if !(kernel.s > 0.0 && kernel.s < 1.0) {
        return param(format!("{what} needs 0 < s < 1, got {}", kernel.s));
    }
    Ok(())
}

/// `∫∫∫ b|u|^γ(⟨v'⟩^ℓ - ⟨v⟩^ℓ) f_* g h'`.
pub fn trilinear_form(f: &GridFunction, g: &GridFunction, h: &GridFunction, kernel: &CollisionKernel, ell: f64) -> Result<f64> {
    let factor = move |v: &Velocity, vp: &Velocity| bracket(vp).powf(ell) - bracket(v).powf(ell);
    single_integral(f, g, h, kernel, &CollisionSettings::default(), Outside::Zero, &factor)
}

/// The three structural terms bounding the trilinear form.
pub fn trilinear_structural(f: &GridFunction, g: &GridFunction, h: &GridFunction, kernel: &CollisionKernel, ell: f64) -> Result<[f64; 3]> {
    let gamma = kernel.gamma;
    let h2 = h.map(|x| x * x);
    let c_g1 = c_alpha(&g.abs().weighted(1.0), gamma)?;
    let c_f4 = c_alpha(&f.abs().weighted(4.0), gamma)?;
    let c_f1 = c_alpha(&f.abs().weighted(1.0), gamma)?;
    let t1 = (dot(&c_g1, &f.weighted(ell).map(|x| x * x)) * dot(&c_g1, &h2)).sqrt();
    let t2 = (dot(&c_f4, &g.weighted(ell).map(|x| x * x)) * dot(&c_f4, &h2)).sqrt();
    let dk = kernel.with_gamma(gamma + 2.0);
    let dis = coercivity_functional(&f.abs().weighted(1.0), &g.weighted(ell - 2.0), &dk)?;
    let t3 = (dis.max(0.0) * dot(&c_f1, &h2)).sqrt();
    Ok([t1, t2, t3])
}

pub fn trilinear_gate(kernel: &CollisionKernel, ell: f64) -> Result<()> {
    require_d3(kernel, "the trilinear bound")?;
    if !(kernel.gamma + 2.0 * kernel.s < 0.0) {
        return param(format!("the trilinear bound needs gamma + 2s < 0, got {}", kernel.gamma + 2.0 * kernel.s));
    }
    let min = 6f64.max(0.5 * (9.0 + kernel.gamma) + 2.0 * kernel.s);
    if !(ell > min) {
        return param(format!("ell = {ell} must exceed max(6, (9+gamma)/2 + 2s) = {min}"));
    }
    Ok(())
}

/// Trilinear bound with fitted or supplied `κ`.
pub fn trilinear_check(f: &GridFunction, g: &GridFunction, h: &GridFunction, kernel: &CollisionKernel, ell: f64, kappa: Option<f64>) -> Result<InequalityVerdict> {
    trilinear_gate(kernel, ell)?;
    let lhs = trilinear_form(f, g, h, kernel, ell)?;
    let t = trilinear_structural(f, g, h, kernel, ell)?;
    let structural = t.iter().sum::<f64>();
    let k = kappa.unwrap_or_else(|| Observation::new("", lhs, structural).ratio());
    Ok(InequalityVerdict::new("trilinear", lhs, k * structural, EXACT_SLACK)
        .with_constant("kappa", k)
        .with_note("term_c_gamma_g", t[0])
        .with_note("term_c_gamma_f", t[1])
        .with_note("term_dissipation", t[2])
        .with_kernel(kernel)
        .with_grid(f.grid()))
}

/// `⟨Q(f, ⟨·⟩^{k/2}g), ⟨·⟩^{k/2}ψ⟩ - ⟨Q(f, g), ψ⟩_{L²_k}`, each term by the
/// weak-form quadrature.
pub fn commutator(f: &GridFunction, g: &GridFunction, psi: &GridFunction, kernel: &CollisionKernel, k: f64) -> Result<f64> {
    f.grid().check_same(g.grid())?;
    f.grid().check_same(psi.grid())?;
    let settings = CollisionSettings::default();
    let half = 0.5 * k;
    let w = move |v: &Velocity| bracket_pow(v, half);
    let w2 = move |v: &Velocity| bracket_pow(v, k);
    let first = weak_form_weighted(f, &g.weighted(half), kernel, &settings, &w)?.apply(psi)?;
    let second = weak_form_weighted(f, g, kernel, &settings, &w2)?.apply(psi)?;
    Ok(first - second)
}

/// `⟨v⟩^k`, with integer powers of `1 + |v|²` taken exactly.
fn bracket_pow(v: &Velocity, k: f64) -> f64 {
    let b2 = 1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let half = 0.5 * k;
    if half.fract() == 0.0 && half.abs() < 32.0 {
        b2.powi(half as i32)
    } else {
        b2.powf(half)
    }
}

/// `-∫∫∫ b|u|^γ(⟨v'⟩^{k/2} - ⟨v⟩^{k/2}) f_* g ⟨v'⟩^{k/2}ψ'`, a second
/// quadrature path for the commutator.
pub fn commutator_single_integral(f: &GridFunction, g: &GridFunction, psi: &GridFunction, kernel: &CollisionKernel, k: f64) -> Result<f64> {
    let half = 0.5 * k;
    let factor = move |v: &Velocity, vp: &Velocity| {
        let wp = bracket_pow(vp, half);
        -(wp - bracket_pow(v, half)) * wp
    };
    single_integral(f, g, psi, kernel, &CollisionSettings::default(), Outside::Clamp, &factor)
}

pub fn commutator_gate(kernel: &CollisionKernel, k: f64) -> Result<()> {
    require_d3(kernel, "the commutator estimate")?;
    let a = kernel.gamma + 2.0 * kernel.s;
    if !(a > -1.5 && a < 0.0) {
        return param(format!("the commutator estimate needs -3/2 < gamma + 2s < 0, got {a}"));
    }
    if !(k > 11.0 + 4.0 * kernel.s) {
        return param(format!("k = {k} must exceed 11 + 4s = {}", 11.0 + 4.0 * kernel.s));
    }
    Ok(())
}

/// Structural right-hand side of the commutator estimate (without `C_k`).
pub fn commutator_structural(f: &GridFunction, g: &GridFunction, psi: &GridFunction, kernel: &CollisionKernel, k: f64) -> Result<f64> {
    let (gamma, s) = (kernel.gamma, kernel.s);
    let psi2k = psi.map(|x| x * x).weighted(k);
    let f_l1 = lp_norm(&f.weighted(gamma + 3.0 + 2.0 * s), 1.0, 0.0)?;
    let g_hs = sobolev_norm(&g.weighted(0.5 * (gamma + k)), s, false)?;
    let c_f1 = c_alpha(&f.abs().weighted(1.0), gamma)?;
    let mut total = f_l1.sqrt() * g_hs * dot(&c_f1, &psi2k).max(0.0).sqrt();
    for (a, b) in [(f, g), (g, f)] {
        let c = c_alpha(&a.abs().weighted(4.0), gamma)?;
        let b2k = b.map(|x| x * x).weighted(k);
        total += (dot(&c, &b2k).max(0.0) * dot(&c, &psi2k).max(0.0)).sqrt();
    }
    Ok(total)
}

/// `|ℛ_k(f, g, ψ)| ≤ C_k·(structural)` with a fitted or supplied `C_k`.
pub fn commutator_bound_check(f: &GridFunction, g: &GridFunction, psi: &GridFunction, kernel: &CollisionKernel, k: f64, c_k: Option<f64>) -> Result<InequalityVerdict> {
    commutator_gate(kernel, k)?;
    let lhs = commutator(f, g, psi, kernel, k)?.abs();
    let structural = commutator_structural(f, g, psi, kernel, k)?;
    let c = c_k.unwrap_or_else(|| Observation::new("", lhs, structural).ratio());
    Ok(InequalityVerdict::new("commutator_bound", lhs, c * structural, EXACT_SLACK)
        .with_constant("C_k", c)
        .with_note("k", k)
        .with_kernel(kernel)
        .with_grid(f.grid()))
}

// ---------------------------------------------------------------------------
// Pointwise inequalities

/// Tolerance of the exact pointwise inequalities, relative to the size of
/// the terms involved.
pub const POINTWISE_TOL: f64 = 1e-12;

/// Both sides of `Y[X^{p-1} - Y^{p-1}] ≤ (1/p')[X^p - Y^p] - (1/max(p,p'))[X^{p/2} - Y^{p/2}]²`
/// and the magnitude scale used for the relative tolerance.
pub fn xy_sides(x: f64, y: f64, p: f64) -> (f64, f64, f64) {
    let pp = p / (p - 1.0);
    let lhs = y * (x.powf(p - 1.0) - y.powf(p - 1.0));
    let rhs = (x.powf(p) - y.powf(p)) / pp - (x.powf(0.5 * p) - y.powf(0.5 * p)).powi(2) / p.max(pp);
    (lhs, rhs, y * x.powf(p - 1.0) + x.powf(p) + y.powf(p))
}

/// Both sides of `Y|X^{p-1} - Y^{p-1}| ≤ |X^{p/2} - Y^{p/2}|(X^{p/2} + Y^{p/2})`.
pub fn x2_sides(x: f64, y: f64, p: f64) -> (f64, f64, f64) {
    let lhs = y * (x.powf(p - 1.0) - y.powf(p - 1.0)).abs();
    let rhs = (x.powf(0.5 * p) - y.powf(0.5 * p)).abs() * (x.powf(0.5 * p) + y.powf(0.5 * p));
    (lhs, rhs, y * x.powf(p - 1.0) + x.powf(p) + y.powf(p))
}

/// Random nonnegative `(X, Y)`: half uniform on `[0, 10]²`, half log-uniform
/// on `[10⁻⁶, 10⁶]²`; fails on any violation beyond [`POINTWISE_TOL`].
pub fn elementary_xy_check(samples: usize, p: f64, seed: u64) -> Result<InequalityVerdict> {
    if !(p > 1.0) {
        return param(format!("p must exceed 1, got {p}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_pair = (0.0, 0.0);
    for i in 0..samples {
        let (x, y) = if i % 2 == 0 {
            (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))
        } else {
            (10f64.powf(rng.random_range(-6.0..6.0)), 10f64.powf(rng.random_range(-6.0..6.0)))
        };
        for (lhs, rhs, scale) in [xy_sides(x, y, p), x2_sides(x, y, p)] {
            let excess = (lhs - rhs) / scale.max(f64::MIN_POSITIVE);
            if excess > POINTWISE_TOL {
                violations += 1;
            }
            if excess > worst {
                worst = excess;
                worst_pair = (x, y);
            }
        }
    }
    let mut v = InequalityVerdict::new("elementary_xy", violations as f64, 0.0, 0.0)
        .with_note("p", p)
        .with_note("samples", samples as f64)
        .with_note("worst_relative_excess", worst)
        .with_note("worst_x", worst_pair.0)
        .with_note("worst_y", worst_pair.1);
    v.pass = violations == 0;
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CancellationForm {
    /// `|⟨v⟩^ℓ - ⟨v'⟩^ℓ| ≤ C sin(θ/2)|u|^α(⟨v⟩^{ℓ-α} + ⟨v_*⟩^{ℓ-α})`.
    Pointwise,
    /// The σ-integrated version with `|u|^{2α}` and `∫b sin²θ dσ`.
    Integrated,
}

/// Post-collisional velocity `v' = (v + v_*)/2 + |u|σ/2`.
pub fn post_collision(v: &Velocity, vs: &Velocity, sigma: &Velocity) -> Velocity {
    let u = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
    let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let mut out = [0.0; 3];
    for a in 0..3 {
        out[a] = 0.5 * (v[a] + vs[a]) + 0.5 * n * sigma[a];
    }
    out
}

fn random_velocity(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Velocity {
    let mut v = [0.0; 3];
    for x in v.iter_mut().take(d) {
        let z: f64 = StandardNormal.sample(rng);
        *x = scale * z;
    }
    v
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Velocity {
    loop {
        let v = random_velocity(rng, d, 1.0);
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-8 {
            return v.map(|x| x / n);
        }
    }
}

/// Observations `(|weight difference|, structural)` for random triples.
pub fn weight_cancellation_observations(kernel: &CollisionKernel, ell: f64, alpha: f64, form: CancellationForm, samples: usize, seed: u64) -> Result<Vec<Observation>> {
    match form {
        CancellationForm::Pointwise if !(ell >= 0.0 && alpha > 0.0 && alpha <= 1.0) => {
            return param(format!("pointwise form needs ell >= 0 and alpha in (0, 1], got ell={ell}, alpha={alpha}"));
        }
        CancellationForm::Integrated if !(ell >= 2.0 && alpha > 0.0 && alpha <= 1.0) => {
            return param(format!("integrated form needs ell >= 2 and 2*alpha in (0, 2], got ell={ell}, alpha={alpha}"));
        }
        _ => {}
    }
    let d = kernel.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rule = kernel.sigma_rule();
    let b_sin2 = kernel.sphere_integral(|t| t.sin().powi(2));
    let mut out = Vec::with_capacity(samples);
    for i in 0..samples {
        let spread = 10f64.powf(rng.random_range(-1.0..1.0));
        let v = random_velocity(&mut rng, d, spread);
        let vs = random_velocity(&mut rng, d, spread);
        let u = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
        let un = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        let wv = bracket(&v).powf(ell);
        let obs = match form {
            CancellationForm::Pointwise => {
                let sigma = random_unit(&mut rng, d);
                let cos_t = if un > 0.0 { (u[0] * sigma[0] + u[1] * sigma[1] + u[2] * sigma[2]) / un } else { 1.0 };
                let half = 0.5 * cos_t.clamp(-1.0, 1.0).acos();
                let vp = post_collision(&v, &vs, &sigma);
                let lhs = (wv - bracket(&vp).powf(ell)).abs();
                let rhs = half.sin() * un.powf(alpha) * (bracket(&v).powf(ell - alpha) + bracket(&vs).powf(ell - alpha));
                Observation::new(format!("triple-{i}"), lhs, rhs)
            }
            CancellationForm::Integrated => {
                let uhat = if un > 0.0 { u.map(|x| x / un) } else { [1.0, 0.0, 0.0] };
                let integral: f64 = rule.realise(&uhat).map(|(sigma, w)| w * (wv - bracket(&post_collision(&v, &vs, &sigma)).powf(ell))).sum();
                let rhs = un.powf(2.0 * alpha) * (bracket(&v).powf(ell - 2.0 * alpha) + bracket(&vs).powf(ell - 2.0 * alpha)) * b_sin2;
                Observation::new(format!("triple-{i}"), integral.abs(), rhs)
            }
        };
        out.push(obs);
    }
    Ok(out)
}

/// Fits `C_{ℓ,α}` on even-indexed triples and validates on the rest.
pub fn weight_cancellation_check(kernel: &CollisionKernel, ell: f64, alpha: f64, form: CancellationForm, samples: usize, seed: u64) -> Result<InequalityVerdict> {
    let obs = weight_cancellation_observations(kernel, ell, alpha, form, samples, seed)?;
    let (fit, val) = interleave(&obs);
    Ok(split_validate("weight_cancellation", &fit, &val, FITTED_SLACK).with_note("ell", ell).with_note("alpha", alpha).with_kernel(kernel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_maxwellian;

    #[test]
    fn corpus_is_seeded_and_in_class() {
        let grid = VelocityGrid::new(3, 6.0, 16).unwrap();
        let a = Corpus::generate(grid, CorpusSpec::new(7, 10)).unwrap();
        let b = Corpus::generate(grid, CorpusSpec::new(7, 10)).unwrap();
        assert_eq!(a, b);
        let c = Corpus::generate(grid, CorpusSpec::new(8, 10)).unwrap();
        assert_ne!(a.items[1].function, c.items[1].function);
        for it in &a.items {
            assert!(it.class.mass >= 0.5 && it.class.energy <= 10.0 && it.class.entropy <= 10.0);
            assert!(it.function.values().iter().all(|&x| x >= 0.0));
        }
        let (fit, val) = a.split();
        assert_eq!(fit.len() + val.len(), 10);
    }

    #[test]
    fn poincare_trivial_cases_and_homogeneity() {
        let grid = VelocityGrid::new(3, 6.0, 16).unwrap();
        let k = CollisionKernel::new(3, -2.0, 0.4, 1.0, 1e-2, 8, 4).unwrap();
        let m = make_maxwellian(grid, 1.0, &[0.0; 3], 1.0).unwrap();
        let z = m.scale(0.0);
        let v = eps_poincare(&z, &m, &k, 2.5, 0.1, Some(1.0)).unwrap();
        assert!(v.pass && v.lhs == 0.0);
        let v = eps_poincare(&m, &z, &k, 2.5, 0.1, Some(1.0)).unwrap();
        assert!(v.pass && v.lhs == 0.0 && v.rhs == 0.0);
        let t1 = poincare_terms(&m, &m, &k, 2.5).unwrap();
        let t2 = poincare_terms(&m, &m.scale(3.0), &k, 2.5).unwrap();
        assert!((t2.lhs / t1.lhs - 9.0).abs() < 1e-12 && (t2.rhs(0.1, 2.0) / t1.rhs(0.1, 2.0) - 9.0).abs() < 1e-12);
        assert!(eps_poincare(&m, &m, &k, 3.5, 0.1, None).is_err());
    }

    #[test]
    fn split_fit_flags_outliers() {
        let fit = vec![Observation::new("a", 1.0, 1.0), Observation::new("b", 2.0, 4.0)];
        let ok = vec![Observation::new("c", 1.04, 1.0)];
        let bad = vec![Observation::new("d", 1.2, 1.0)];
        assert!(split_validate("x", &fit, &ok, 0.05).pass);
        let v = split_validate("x", &fit, &bad, 0.05);
        assert!(!v.pass && v.fitted_constants["C"] == 1.0);
    }

    #[test]
    fn elementary_equality_cases() {
        let (l, r, _) = xy_sides(0.0, 3.0, 2.0);
        assert!((l + 9.0).abs() < 1e-12 && (r + 9.0).abs() < 1e-12);
        let (l, r, _) = xy_sides(2.5, 2.5, 3.0);
        assert_eq!((l, r), (0.0, 0.0));
        for p in [1.1, 2.0, 3.0, 10.0] {
            assert!(elementary_xy_check(2000, p, 1).unwrap().pass);
        }
        assert!(elementary_xy_check(10, 1.0, 1).is_err());
    }

    #[test]
    fn weight_cancellation_l2_grows_with_ell() {
        let k = CollisionKernel::new(3, -2.0, 0.4, 1.0, 1e-2, 8, 4).unwrap();
        let mut last = 0.0;
        for ell in [2.0, 4.0, 6.0] {
            let v = weight_cancellation_check(&k, ell, 1.0, CancellationForm::Pointwise, 2000, 3).unwrap();
            let c = v.fitted_constants["C"];
            assert!(c.is_finite() && c > last);
            last = c;
        }
        let sigma = [1.0, 0.0, 0.0];
        let v = [1.0, 0.0, 0.0];
        assert_eq!(post_collision(&v, &[-1.0, 0.0, 0.0], &sigma), v);
    }

    #[test]
    fn commutator_vanishes_for_k_zero() {
        let grid = VelocityGrid::new(3, 5.0, 8).unwrap();
        let k = CollisionKernel::new(3, -2.0, 0.4, 1.0, 1e-2, 4, 2).unwrap();
        let f = make_maxwellian(grid, 1.0, &[0.2, 0.0, 0.0], 0.8).unwrap();
        let g = make_maxwellian(grid, 1.0, &[0.0, -0.3, 0.0], 1.0).unwrap();
        let psi = make_maxwellian(grid, 1.0, &[0.0; 3], 0.6).unwrap();
        assert_eq!(commutator(&f, &g, &psi, &k, 0.0).unwrap(), 0.0);
        assert_eq!(commutator(&f, &g, &psi.scale(0.0), &k, 12.0).unwrap(), 0.0);
    }

    #[test]
    fn gates_are_named() {
        let k = CollisionKernel::new(3, -2.0, 0.4, 1.0, 1e-2, 4, 2).unwrap();
        assert!(trilinear_gate(&k, 5.0).is_err());
        assert!(trilinear_gate(&k, 6.5).is_ok());
        assert!(commutator_gate(&k, 12.0).is_err());
        assert!(commutator_gate(&k, 13.0).is_ok());
        assert_eq!(conv_branch(3, 0.7, -1.0, 2.0).unwrap(), ConvBranch::ModeratelySoft);
        assert_eq!(conv_branch(3, 0.3, -2.0, 2.0).unwrap(), ConvBranch::Soft);
        assert!(conv_branch(3, 0.2, -2.0, 2.0).is_err());
    }
}
