//! The collision operator in strong and weak form, the coercivity functional,
//! the cancellation convolution and the change-of-variable identities.
//!
//! Post-collisional values are obtained by interpolation. States are zero
//! outside the box; test functions are evaluated at the nearest point of the
//! box, which keeps the weak integrand for `φ ≡ 1` identically zero.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::angular::{CollisionKernel, SigmaRule};
use crate::engine::{self, offset_groups, reach, support, window, Layout, Offset, Outside, QPlan, Scratch};
use crate::error::{Error, Result};
use crate::functionals::{c_alpha, lp_norm, sobolev_norm};
use crate::grid::{evaluate, ClassYBounds, GridFunction, Velocity, VelocityGrid};
use crate::quad::gauss_legendre_on;
use crate::stencil::Interp;
use crate::verdict::InequalityVerdict;

/// Discretisation choices shared by all lattice quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionSettings {
    /// Nodes where `|f| ≤ prune_tol·max|f|` are skipped.
    pub prune_tol: f64,
    pub scheme: Interp,
}

impl Default for CollisionSettings {
    fn default() -> Self {
        Self { prune_tol: 1e-12, scheme: Interp::Cubic }
    }
}

/// Resolution metadata attached to every evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureInfo {
    pub dim: usize,
    pub n: usize,
    pub radius: f64,
    pub theta_min: f64,
    pub n_theta: usize,
    pub n_omega: usize,
    pub n_sigma: usize,
}

impl QuadratureInfo {
    pub fn new(grid: &VelocityGrid, kernel: &CollisionKernel) -> Self {
        Self {
            dim: grid.dim(),
            n: grid.n(),
            radius: grid.radius(),
            theta_min: kernel.theta_min,
            n_theta: kernel.n_theta,
            n_omega: kernel.n_omega,
            n_sigma: kernel.sigma_rule().nodes.len(),
        }
    }
}

/// Weak-form values `∫Q(g,f)φ` for `φ ∈ {1, v_1, …, v_d, |v|²}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationResiduals {
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
    /// `∫∫∫ B|g_*||f|`, the natural scale of the loss term.
    pub loss_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvaluation {
    pub result: GridFunction,
    pub kernel: CollisionKernel,
    pub quadrature: QuadratureInfo,
    pub residuals: Option<ConservationResiduals>,
}

/// The discrete weak form of `Q(g, f)` as a signed measure on the nodes:
/// `∫Q(g,f)φ ≈ Σ_i weights_i φ_i` for any test function φ.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakForm {
    pub weights: GridFunction,
    pub loss_scale: f64,
}

impl WeakForm {
    pub fn apply(&self, phi: &GridFunction) -> Result<f64> {
        self.weights.grid().check_same(phi.grid())?;
        Ok(self.weights.values().iter().zip(phi.values()).map(|(a, b)| a * b).sum())
    }

    pub fn residuals(&self) -> ConservationResiduals {
        let g = *self.weights.grid();
        let d = g.dim();
        let w = self.weights.values();
        let mut mass = 0.0;
        let mut momentum = vec![0.0; d];
        let mut energy = 0.0;
        for (i, &x) in w.iter().enumerate() {
            let v = g.node(i);
            mass += x;
            for a in 0..d {
                momentum[a] += x * v[a];
            }
            energy += x * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        }
        ConservationResiduals { mass, momentum, energy, loss_scale: self.loss_scale }
    }
}

fn plan(settings: &CollisionSettings, strong: bool, weak: bool) -> QPlan<'static> {
    QPlan { strong, weak, prune_tol: settings.prune_tol, scheme: settings.scheme, weight: None }
}

fn check_pair(g: &GridFunction, f: &GridFunction, kernel: &CollisionKernel) -> Result<()> {
    g.grid().check_same(f.grid())?;
    if kernel.dim != f.grid().dim() {
        return Err(Error::GridMismatch(format!("kernel dimension {} vs grid dimension {}", kernel.dim, f.grid().dim())));
    }
    Ok(())
}

fn weak_from(sums: &engine::QSums, lay: &Layout, grid: VelocityGrid) -> Result<WeakForm> {
    let meas = lay.fold(&sums.measure);
    let s = grid.cell_volume().powi(2);
    let w: Vec<f64> = meas.iter().zip(&sums.loss).map(|(a, b)| s * (a - b)).collect();
    let loss_scale = s * sums.loss.iter().map(|x| x.abs()).sum::<f64>();
    Ok(WeakForm { weights: GridFunction::new(grid, w)?, loss_scale })
}

/// Weak form of `Q(g, f)` (first argument at `v_*`).
pub fn weak_form(g: &GridFunction, f: &GridFunction, kernel: &CollisionKernel, settings: &CollisionSettings) -> Result<WeakForm> {
    check_pair(g, f, kernel)?;
    let sums = engine::q_sums(g, f, &kernel.sigma_rule(), kernel.gamma, plan(settings, false, true));
    weak_from(&sums, &Layout::new(f.grid()), *f.grid())
}

/// Weak form of `Q(g, f)` against test functions `weight·φ`, where `weight`
/// is evaluated exactly at `v'` and only `φ` is interpolated.
pub fn weak_form_weighted(
    g: &GridFunction,
    f: &GridFunction,
    kernel: &CollisionKernel,
    settings: &CollisionSettings,
    weight: &(dyn Fn(&Velocity) -> f64 + Sync),
) -> Result<WeakForm> {
    check_pair(g, f, kernel)?;
    let mut p = plan(settings, false, true);
    p.weight = Some(weight);
    let mut sums = engine::q_sums(g, f, &kernel.sigma_rule(), kernel.gamma, p);
    let grid = *f.grid();
    for (i, x) in sums.loss.iter_mut().enumerate() {
        *x *= weight(&grid.node(i));
    }
    weak_from(&sums, &Layout::new(&grid), grid)
}

/// `∫∫∫ B g_* f [φ(v') - φ(v)]`.
pub fn q_weak(g: &GridFunction, f: &GridFunction, phi: &GridFunction, kernel: &CollisionKernel) -> Result<f64> {
    check_pair(g, phi, kernel)?;
    weak_form(g, f, kernel, &CollisionSettings::default())?.apply(phi)
}

/// [`q_weak`] for several test functions sharing one pass over the lattice.
pub fn q_weak_many(g: &GridFunction, f: &GridFunction, phis: &[&GridFunction], kernel: &CollisionKernel) -> Result<Vec<f64>> {
    let w = weak_form(g, f, kernel, &CollisionSettings::default())?;
    phis.iter().map(|p| w.apply(p)).collect()
}

/// Node-wise `Q(g, f)` with conservation residuals attached.
pub fn q_strong(g: &GridFunction, f: &GridFunction, kernel: &CollisionKernel) -> Result<CollisionEvaluation> {
    q_strong_with(g, f, kernel, &CollisionSettings::default(), true)
}

pub fn q_strong_with(g: &GridFunction, f: &GridFunction, kernel: &CollisionKernel, settings: &CollisionSettings, residuals: bool) -> Result<CollisionEvaluation> {
    check_pair(g, f, kernel)?;
    let grid = *f.grid();
    let lay = Layout::new(&grid);
    let sums = engine::q_sums(g, f, &kernel.sigma_rule(), kernel.gamma, plan(settings, true, residuals));
    let dv = grid.cell_volume();
    let q: Vec<f64> = sums.gain.iter().zip(&sums.loss).map(|(a, b)| dv * (a - b)).collect();
    if q.iter().any(|x| !x.is_finite()) {
        return Err(Error::Runtime { op: "q_strong".into(), msg: "non-finite collision values".into() });
    }
    let residuals = if residuals { Some(weak_from(&sums, &lay, grid)?.residuals()) } else { None };
    Ok(CollisionEvaluation { result: GridFunction::new(grid, q)?, kernel: *kernel, quadrature: QuadratureInfo::new(&grid, kernel), residuals })
}

/// Node-wise `Q(g, f)` without the weak-form pass (the solver's right-hand side).
pub fn collision_operator(g: &GridFunction, f: &GridFunction, kernel: &CollisionKernel, settings: &CollisionSettings) -> Result<GridFunction> {
    Ok(q_strong_with(g, f, kernel, settings, false)?.result)
}

/// `𝒟[G, F] = ∫∫∫ B G_* [F(v') - F(v)]²`.
pub fn coercivity_functional(big_g: &GridFunction, big_f: &GridFunction, kernel: &CollisionKernel) -> Result<f64> {
    coercivity_with(big_g, big_f, kernel, &CollisionSettings::default())
}

pub fn coercivity_with(big_g: &GridFunction, big_f: &GridFunction, kernel: &CollisionKernel, settings: &CollisionSettings) -> Result<f64> {
    check_pair(big_g, big_f, kernel)?;
    let grid = *big_f.grid();
    let lay = Layout::new(&grid);
    let (gv, fv) = (big_g.values(), big_f.values());
    let supp_g = support(&lay, gv, settings.prune_tol);
    let fp = lay.pad(fv);
    let rule = kernel.sigma_rule();
    let groups = offset_groups(&lay, false);
    let body = |acc: &mut f64, sc: &mut Scratch, off: &Offset| {
        let reg = off.overlap.intersect(&supp_g.shifted(off.m));
        if reg.is_empty() {
            return;
        }
        let coef = off.norm.powf(kernel.gamma);
        let (mut gw, mut fw, mut fi) = (Vec::new(), Vec::new(), Vec::new());
        window(&lay, gv, &reg, off.m, &mut gw);
        window(&lay, fv, &reg, [0; 3], &mut fw);
        let mut part = 0.0;
        for (sigma, w) in rule.realise(&off.uhat) {
            let dl = off.delta(&lay, &sigma);
            sc.gather(&lay, &fp, &reg, &dl, Outside::Clamp, settings.scheme, &mut fi);
            let s: f64 = fi.iter().zip(&fw).zip(&gw).map(|((a, b), c)| c * (a - b) * (a - b)).sum();
            part += w * s;
        }
        *acc += coef * part;
    };
    let total = engine::run(&groups, || 0.0, body, |a, b| *a += b).unwrap_or(0.0);
    Ok(total * grid.cell_volume().powi(2))
}

/// The three terms of the coercivity inequality for one pair `(G, F)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityTerms {
    /// `𝒟[G, F]`.
    pub dissipation: f64,
    /// `‖⟨·⟩^{γ/2}F‖²_{Ḣ^s}`.
    pub sobolev: f64,
    /// `‖⟨·⟩^{γ/2}F‖²_{L²}`.
    pub l2: f64,
}

impl CoercivityTerms {
    pub fn rhs(&self, c0: f64, cap_c0: f64) -> f64 {
        c0 * self.sobolev - cap_c0 * self.l2
    }
}

/// Evaluates the coercivity terms after checking that `G` is in the class.
pub fn coercivity_terms(big_g: &GridFunction, big_f: &GridFunction, kernel: &CollisionKernel, bounds: &ClassYBounds) -> Result<CoercivityTerms> {
    bounds.check(big_g)?;
    let dissipation = coercivity_functional(big_g, big_f, kernel)?;
    let weighted = big_f.weighted(0.5 * kernel.gamma);
    let sobolev = sobolev_norm(&weighted, kernel.s, true)?.powi(2);
    let l2 = lp_norm(&weighted, 2.0, 0.0)?.powi(2);
    Ok(CoercivityTerms { dissipation, sobolev, l2 })
}

/// `𝒟[G, F] ≥ c₀‖⟨·⟩^{γ/2}F‖²_{Ḣ^s} − C₀‖⟨·⟩^{γ/2}F‖²_{L²}`.
pub fn coercivity_check(
    big_g: &GridFunction,
    big_f: &GridFunction,
    kernel: &CollisionKernel,
    bounds: &ClassYBounds,
    c0: f64,
    cap_c0: f64,
    slack: f64,
) -> Result<InequalityVerdict> {
    let t = coercivity_terms(big_g, big_f, kernel, bounds)?;
    Ok(coercivity_verdict(&t, c0, cap_c0, slack).with_kernel(kernel).with_grid(big_f.grid()))
}

/// The inequality reads `rhs ≤ 𝒟`, so the lower bound sits on the left.
pub fn coercivity_verdict(t: &CoercivityTerms, c0: f64, cap_c0: f64, slack: f64) -> InequalityVerdict {
    let mut v = InequalityVerdict::new("coercivity", t.rhs(c0, cap_c0), t.dissipation, 0.0);
    let scale = t.dissipation.abs().max(c0 * t.sobolev).max(cap_c0 * t.l2);
    v.pass = v.lhs.is_finite() && v.rhs.is_finite() && v.margin >= -slack * scale;
    v.slack = slack;
    v.with_constant("c0", c0).with_constant("C0", cap_c0)
}

/// Constants fitted over a corpus of coercivity terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityFit {
    pub c0: f64,
    pub cap_c0: f64,
}

/// For each candidate `C₀`, `c₀(C₀) = min_i (𝒟_i + C₀L_i)/S_i`. Uses `C₀ = 0`
/// when that already gives `c₀ > 0`, and otherwise the candidate minimising
/// `C₀/c₀`. `None` if no candidate gives a positive `c₀`.
pub fn fit_coercivity(terms: &[CoercivityTerms], candidates: &[f64]) -> Option<CoercivityFit> {
    let c0_of = |cap: f64| {
        terms
            .iter()
            .filter(|t| t.sobolev > 0.0)
            .map(|t| (t.dissipation + cap * t.l2) / t.sobolev)
            .fold(f64::INFINITY, f64::min)
    };
    let zero = c0_of(0.0);
    if zero > 0.0 && zero.is_finite() {
        return Some(CoercivityFit { c0: zero, cap_c0: 0.0 });
    }
    candidates
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| CoercivityFit { c0: c0_of(c), cap_c0: c })
        .filter(|f| f.c0 > 0.0 && f.c0.is_finite())
        .min_by(|a, b| (a.cap_c0 / a.c0).total_cmp(&(b.cap_c0 / b.c0)))
}

/// `Σ B f_*(v - u) g(v) factor(v, v') h(v')` over the lattice, with `h` read at
/// the post-collisional velocity by interpolation. Shared by the trilinear
/// form and the single-integral commutator.
#[allow(clippy::too_many_arguments)]
pub(crate) fn single_integral(
    fstar: &GridFunction,
    g: &GridFunction,
    h: &GridFunction,
    kernel: &CollisionKernel,
    settings: &CollisionSettings,
    h_outside: Outside,
    factor: &(dyn Fn(&Velocity, &Velocity) -> f64 + Sync),
) -> Result<f64> {
    check_pair(fstar, g, kernel)?;
    g.grid().check_same(h.grid())?;
    let grid = *g.grid();
    let lay = Layout::new(&grid);
    let (fsv, gv) = (fstar.values(), g.values());
    let supp_f = support(&lay, fsv, settings.prune_tol);
    let supp_g = support(&lay, gv, settings.prune_tol);
    let supp_h = support(&lay, h.values(), settings.prune_tol);
    let hp = lay.pad(h.values());
    let rule = kernel.sigma_rule();
    let groups = offset_groups(&lay, false);
    let body = |acc: &mut f64, sc: &mut Scratch, off: &Offset| {
        let nodal = off.overlap.intersect(&supp_g).intersect(&supp_f.shifted(off.m));
        if nodal.is_empty() {
            return;
        }
        let coef = off.norm.powf(kernel.gamma);
        let (mut hi, mut fw, mut gw) = (Vec::new(), Vec::new(), Vec::new());
        let mut part = 0.0;
        for (sigma, w) in rule.realise(&off.uhat) {
            let dl = off.delta(&lay, &sigma);
            let reg = match h_outside {
                Outside::Zero => nodal.intersect(&reach(&lay, &dl, &supp_h)),
                Outside::Clamp => nodal,
            };
            if reg.is_empty() {
                continue;
            }
            window(&lay, fsv, &reg, off.m, &mut fw);
            window(&lay, gv, &reg, [0; 3], &mut gw);
            sc.gather(&lay, &hp, &reg, &dl, h_outside, settings.scheme, &mut hi);
            let mut k = 0;
            let mut s = 0.0;
            for i0 in reg.lo[0]..reg.hi[0] {
                for i1 in reg.lo[1]..reg.hi[1] {
                    for i2 in reg.lo[2]..reg.hi[2] {
                        let v = Offset::prime(&lay, [i0, i1, i2], &[0.0; 3]);
                        let vp = Offset::prime(&lay, [i0, i1, i2], &dl);
                        s += fw[k] * gw[k] * hi[k] * factor(&v, &vp);
                        k += 1;
                    }
                }
            }
            part += w * s;
        }
        *acc += coef * part;
    };
    let total = engine::run(&groups, || 0.0, body, |a, b| *a += b).unwrap_or(0.0);
    Ok(total * grid.cell_volume().powi(2))
}

/// `(F ∗ S_B)(v_*) = ‖b̃‖_{L¹}·c_γ[F](v_*)`.
pub fn cancellation_convolution(big_f: &GridFunction, kernel: &CollisionKernel) -> Result<GridFunction> {
    let c = c_alpha(big_f, kernel.gamma)?;
    Ok(c.scale(kernel.b_norms().norm_b_tilde))
}

/// Product rule for integrals over `u ∈ ℝ^d` in polar coordinates: composite
/// Gauss-Legendre in `t = r^{γ+d}` (which absorbs `r^{γ+d-1}dr`) and a product
/// rule on the sphere of directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarRule {
    pub radial_panels: usize,
    pub nodes_per_panel: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
}

impl Default for PolarRule {
    fn default() -> Self {
        Self { radial_panels: 16, nodes_per_panel: 6, n_polar: 16, n_azimuth: 32 }
    }
}

impl PolarRule {
    /// Unit directions and weights (summing to `|S^{d-1}|`).
    pub fn directions(&self, d: usize) -> Vec<(Velocity, f64)> {
        let na = self.n_azimuth.max(1);
        let wa = 2.0 * PI / na as f64;
        let mut out = Vec::new();
        if d == 2 {
            for j in 0..na {
                let p = wa * (j as f64 + 0.5);
                out.push(([p.cos(), p.sin(), 0.0], wa));
            }
            return out;
        }
        let (cs, ws) = gauss_legendre_on(self.n_polar.max(1), -1.0, 1.0);
        for (c, w) in cs.iter().zip(&ws) {
            let sn = (1.0 - c * c).sqrt();
            for j in 0..na {
                let p = wa * (j as f64 + 0.5);
                out.push(([sn * p.cos(), sn * p.sin(), *c], w * wa));
            }
        }
        out
    }

    /// Radii and weights for `∫_0^{r_max} r^{γ+d-1} g(r) dr`.
    pub fn radii(&self, exponent: f64, r_max: f64) -> Vec<(f64, f64)> {
        let t_max = r_max.powf(exponent);
        let panels = self.radial_panels.max(1);
        let step = t_max / panels as f64;
        let mut out = Vec::new();
        for p in 0..panels {
            let (x, w) = gauss_legendre_on(self.nodes_per_panel.max(1), p as f64 * step, (p + 1) as f64 * step);
            for (t, w) in x.iter().zip(&w) {
                out.push((t.powf(1.0 / exponent), w / exponent));
            }
        }
        out
    }
}

/// Largest distance from `v` to a point of the box.
fn reach_radius(grid: &VelocityGrid, v: &Velocity) -> f64 {
    let r = grid.radius();
    (0..grid.dim()).map(|a| (v[a].abs() + r).powi(2)).sum::<f64>().sqrt()
}

/// Direct quadrature of `∫dv ∫dσ B(v - v_*, σ)[F(v') - F(v)]` at fixed `v_*`.
pub fn cancellation_lhs(big_f: &(dyn Fn(&Velocity) -> f64 + Sync), v_star: &Velocity, grid: &VelocityGrid, kernel: &CollisionKernel, rule: &PolarRule) -> f64 {
    let d = kernel.dim;
    let sig = kernel.sigma_rule();
    let kappa = sig.total_weight();
    let radii = rule.radii(kernel.gamma + d as f64, reach_radius(grid, v_star));
    let dirs = rule.directions(d);
    use rayon::prelude::*;
    let parts: Vec<f64> = dirs
        .par_iter()
        .map(|(w_hat, wd)| {
            let nodes: Vec<(Velocity, f64)> = sig.realise(w_hat).collect();
            let mut acc = 0.0;
            for &(r, wr) in &radii {
                let mut v = *v_star;
                for a in 0..d {
                    v[a] += r * w_hat[a];
                }
                let mut s = -kappa * big_f(&v);
                for (sigma, ws) in &nodes {
                    let mut vp = *v_star;
                    for a in 0..d {
                        vp[a] += 0.5 * r * (w_hat[a] + sigma[a]);
                    }
                    s += ws * big_f(&vp);
                }
                acc += wr * s;
            }
            wd * acc
        })
        .collect();
    parts.iter().sum()
}

/// Which change of variables to quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeOfVariable {
    /// `v_* ↦ v'` at fixed `v`.
    Singular,
    /// `v ↦ v'` at fixed `v_*`.
    Regular,
}

/// Left side `∫∫ b|v - v_*|^γ φ(v')` of a change-of-variable identity, with
/// `v` (singular) or `v_*` (regular) held at `centre`.
pub fn changevar_lhs(phi: &(dyn Fn(&Velocity) -> f64 + Sync), centre: &Velocity, grid: &VelocityGrid, kernel: &CollisionKernel, rule: &PolarRule, which: ChangeOfVariable) -> f64 {
    let d = kernel.dim;
    let sig = kernel.sigma_rule();
    let dirs = rule.directions(d);
    let r0 = reach_radius(grid, centre);
    let expo = kernel.gamma + d as f64;
    use rayon::prelude::*;
    let parts: Vec<f64> = sig
        .nodes
        .par_iter()
        .map(|node| {
            let half = 0.5 * node.cos_theta.clamp(-1.0, 1.0).acos();
            let stretch = match which {
                ChangeOfVariable::Singular => half.sin(),
                ChangeOfVariable::Regular => half.cos(),
            };
            let radii = rule.radii(expo, r0 / stretch);
            let one = SigmaRule { dim: d, nodes: vec![*node] };
            let mut acc = 0.0;
            for (w_hat, wd) in &dirs {
                let (sigma, ws) = one.realise(w_hat).next().unwrap_or(([0.0; 3], 0.0));
                let mut part = 0.0;
                for &(r, wr) in &radii {
                    let mut p = *centre;
                    for a in 0..d {
                        p[a] += match which {
                            ChangeOfVariable::Singular => -0.5 * r * (w_hat[a] - sigma[a]),
                            ChangeOfVariable::Regular => 0.5 * r * (w_hat[a] + sigma[a]),
                        };
                    }
                    part += wr * phi(&p);
                }
                acc += wd * ws * part;
            }
            acc
        })
        .collect();
    parts.iter().sum()
}

/// `∫ b(cosθ)·sin^{-γ-d}(θ/2) dσ` (singular) or with `cos` (regular).
pub fn changevar_constant(kernel: &CollisionKernel, which: ChangeOfVariable) -> f64 {
    let e = -kernel.gamma - kernel.dim as f64;
    kernel.sphere_integral(|t| match which {
        ChangeOfVariable::Singular => (0.5 * t).sin().powf(e),
        ChangeOfVariable::Regular => (0.5 * t).cos().powf(e),
    })
}

/// Node nearest the `|ψ|`-weighted barycentre.
pub fn barycentre_node(psi: &GridFunction) -> usize {
    let g = psi.grid();
    let mut c = [0.0; 3];
    let mut m = 0.0;
    for (i, &x) in psi.values().iter().enumerate() {
        let v = g.node(i);
        for a in 0..3 {
            c[a] += x.abs() * v[a];
        }
        m += x.abs();
    }
    let mut idx = [0usize; 3];
    for a in 0..g.dim() {
        let x = if m > 0.0 { c[a] / m } else { 0.0 };
        idx[a] = g.index_coord(x).round().clamp(0.0, g.n() as f64 - 1.0) as usize;
    }
    g.flat_index(idx)
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Quadratures both sides of the singular and regular change-of-variable
/// identities at the barycentre node; the verdict's `lhs` is the larger
/// relative mismatch and `rhs` the tolerance.
pub fn changevar_check(psi: &GridFunction, kernel: &CollisionKernel, rule: &PolarRule, tol: f64) -> Result<InequalityVerdict> {
    if kernel.dim != psi.grid().dim() {
        return Err(Error::GridMismatch("kernel and grid dimensions differ".into()));
    }
    let grid = *psi.grid();
    let node = barycentre_node(psi);
    let centre = grid.node(node);
    let conv = c_alpha(psi, kernel.gamma)?.values()[node];
    let interp = |v: &Velocity| evaluate(psi, &v[..grid.dim()], Interp::Cubic);
    let mut worst = 0.0f64;
    let mut v = InequalityVerdict::identity("changevar", 0.0, tol).with_kernel(kernel).with_grid(&grid);
    for (which, name) in [(ChangeOfVariable::Singular, "singular"), (ChangeOfVariable::Regular, "regular")] {
        let lhs = changevar_lhs(&interp, &centre, &grid, kernel, rule, which);
        let rhs = changevar_constant(kernel, which) * conv;
        let e = rel(lhs, rhs);
        worst = worst.max(e);
        v = v.with_note(&format!("{name}_lhs"), lhs).with_note(&format!("{name}_rhs"), rhs).with_note(&format!("{name}_mismatch"), e);
    }
    let notes = v.provenance.clone();
    let mut out = InequalityVerdict::identity("changevar", worst, tol);
    out.provenance = notes;
    Ok(out)
}

/// Compares the quadratured cancellation integral with `‖b̃‖·c_γ[F]` at the
/// barycentre node, reading `F` off the grid by cubic interpolation unless an
/// exact profile is supplied.
pub fn cancellation_check(
    big_f: &GridFunction,
    exact: Option<&(dyn Fn(&Velocity) -> f64 + Sync)>,
    kernel: &CollisionKernel,
    rule: &PolarRule,
    tol: f64,
) -> Result<InequalityVerdict> {
    let grid = *big_f.grid();
    if kernel.dim != grid.dim() {
        return Err(Error::GridMismatch("kernel and grid dimensions differ".into()));
    }
    let node = barycentre_node(big_f);
    let v_star = grid.node(node);
    let rhs = cancellation_convolution(big_f, kernel)?.values()[node];
    let interp = |v: &Velocity| evaluate(big_f, &v[..grid.dim()], Interp::Cubic);
    let lhs = match exact {
        Some(f) => cancellation_lhs(f, &v_star, &grid, kernel, rule),
        None => cancellation_lhs(&interp, &v_star, &grid, kernel, rule),
    };
    Ok(InequalityVerdict::identity("cancellation", rel(lhs, rhs), tol)
        .with_note("lhs", lhs)
        .with_note("rhs", rhs)
        .with_kernel(kernel)
        .with_grid(&grid))
}
