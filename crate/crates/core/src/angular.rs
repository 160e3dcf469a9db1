//! Non-cutoff angular profile, its cancellation-modified companion and the
//! `(θ, ω)` product quadrature on the sphere.
//!
//! The profile is the exact power law `sin^{d-2}θ·b(cosθ) = b₀θ^{-1-2s}` on
//! `[θ_min, π/2]` and zero elsewhere.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::grid::Velocity;
use crate::quad::gauss_legendre_on;

/// Upper end of the logarithmically graded part of the θ rule.
pub const GRADED_SPLIT: f64 = 0.1;

/// `B(u, σ) = |u|^γ b(cos θ)` together with its quadrature resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionKernel {
    pub dim: usize,
    pub gamma: f64,
    pub s: f64,
    pub b0: f64,
    pub theta_min: f64,
    pub n_theta: usize,
    pub n_omega: usize,
}

impl CollisionKernel {
    pub fn new(dim: usize, gamma: f64, s: f64, b0: f64, theta_min: f64, n_theta: usize, n_omega: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return param(format!("dimension must be 2 or 3, got {dim}"));
        }
        let lower = (-4.0f64).max(-(dim as f64));
        if !(gamma > lower && gamma < 0.0) {
            return param(format!("gamma must lie in ({lower}, 0), got {gamma}"));
        }
        if !(s > 0.0 && s < 1.0) {
            return param(format!("s must lie in (0, 1), got {s}"));
        }
        if !(b0 > 0.0 && b0.is_finite()) {
            return param(format!("b0 must be positive, got {b0}"));
        }
        if !(theta_min > 0.0 && theta_min <= FRAC_PI_2) {
            return param(format!("theta_min must lie in (0, pi/2], got {theta_min}"));
        }
        if n_theta == 0 {
            return param("n_theta must be positive");
        }
        if dim == 3 && (n_omega < 2 || n_omega % 2 != 0) {
            return param(format!("n_omega must be even and >= 2, got {n_omega}"));
        }
        let n_omega = if dim == 2 { 2 } else { n_omega };
        Ok(Self { dim, gamma, s, b0, theta_min, n_theta, n_omega })
    }

    /// Rejects kernels outside the very soft regime `γ + 2s < 0`.
    pub fn require_very_soft(self) -> Result<Self> {
        if self.gamma + 2.0 * self.s < 0.0 {
            Ok(self)
        } else {
            param(format!("very soft regime needs gamma + 2s < 0, got {}", self.gamma + 2.0 * self.s))
        }
    }

    pub fn is_very_soft(&self) -> bool {
        self.gamma + 2.0 * self.s < 0.0
    }

    /// Same angular profile with a different velocity exponent (used for
    /// `𝒟_{γ+2}`); the exponent range is not re-validated.
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_resolution(mut self, n_theta: usize, n_omega: usize) -> Self {
        self.n_theta = n_theta.max(1);
        if self.dim == 3 {
            self.n_omega = n_omega.max(2) + n_omega % 2;
        }
        self
    }

    pub fn with_b0(mut self, b0: f64) -> Self {
        self.b0 = b0;
        self
    }

    /// Area of the unit sphere `S^{d-2}` (2 for d = 2, 2π for d = 3).
    pub fn sphere_factor(&self) -> f64 {
        if self.dim == 2 {
            2.0
        } else {
            2.0 * PI
        }
    }

    /// `b(cos θ)`.
    pub fn b_profile(&self, theta: f64) -> Result<f64> {
        if !(theta > 0.0 && theta <= PI) {
            return param(format!("theta must lie in (0, pi], got {theta}"));
        }
        if theta < self.theta_min || theta > FRAC_PI_2 {
            return Ok(0.0);
        }
        Ok(self.b0 * theta.powf(-1.0 - 2.0 * self.s) / theta.sin().powi(self.dim as i32 - 2))
    }

    /// `b̃(cos θ) = [cos(θ/2)^{-γ-d} - 1]·b(cos θ)`.
    pub fn b_tilde(&self, theta: f64) -> Result<f64> {
        if !(theta > 0.0 && theta <= FRAC_PI_2) {
            return param(format!("theta must lie in (0, pi/2], got {theta}"));
        }
        Ok(self.tilde_factor(theta) * self.b_profile(theta)?)
    }

    /// `cos(θ/2)^{-γ-d} - 1`, evaluated without cancellation near θ = 0.
    pub fn tilde_factor(&self, theta: f64) -> f64 {
        let half_quarter = (0.25 * theta).sin();
        let ln_cos = (-2.0 * half_quarter * half_quarter).ln_1p();
        ((-self.gamma - self.dim as f64) * ln_cos).exp_m1()
    }

    /// θ nodes with weights `b₀θ^{-1-2s}dθ`, i.e. `sin^{d-2}θ·b(cosθ)dθ`.
    pub fn theta_rule(&self) -> Vec<(f64, f64)> {
        let q = AngularQuadrature::graded(self.theta_min, FRAC_PI_2, self.n_theta);
        q.thetas
            .iter()
            .zip(&q.weights)
            .map(|(&t, &w)| (t, w * self.b0 * t.powf(-1.0 - 2.0 * self.s)))
            .collect()
    }

    /// `∫_{S^{d-1}} b(cosθ)·g(θ) dσ` by the kernel's θ rule.
    pub fn sphere_integral(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.sphere_factor() * self.theta_rule().iter().map(|&(t, w)| w * g(t)).sum::<f64>()
    }

    pub fn b_norms(&self) -> BNorms {
        let rule = self.theta_rule();
        let c = self.sphere_factor();
        let sum = |g: &dyn Fn(f64) -> f64| c * rule.iter().map(|&(t, w)| w * g(t)).sum::<f64>();
        BNorms {
            norm_b_tilde: sum(&|t| self.tilde_factor(t)),
            norm_b_sin2: sum(&|t| (0.5 * t).sin().powi(2)),
            norm_b_s_minus_1: sum(&|t| t * t),
        }
    }

    /// Azimuthal directions `(cos φ, sin φ)` and their common weight.
    pub fn omega_rule(&self) -> (Vec<(f64, f64)>, f64) {
        if self.dim == 2 {
            return (vec![(1.0, 0.0), (-1.0, 0.0)], 1.0);
        }
        let n = self.n_omega;
        let dirs = (0..n)
            .map(|j| {
                let phi = 2.0 * PI * (j as f64 + 0.5) / n as f64;
                (phi.cos(), phi.sin())
            })
            .collect();
        (dirs, 2.0 * PI / n as f64)
    }

    /// Flattened σ rule: for each node, `(cos θ, sin θ, cos φ, sin φ, weight)`.
    pub fn sigma_rule(&self) -> SigmaRule {
        let (omegas, w_omega) = self.omega_rule();
        let mut nodes = Vec::new();
        for (t, wt) in self.theta_rule() {
            for &(c, s) in &omegas {
                nodes.push(SigmaNode { cos_theta: t.cos(), sin_theta: t.sin(), cos_phi: c, sin_phi: s, weight: wt * w_omega });
            }
        }
        SigmaRule { dim: self.dim, nodes }
    }
}

/// The three angular norms used throughout the estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BNorms {
    /// `‖b̃‖_{L¹(S^{d-1})}`.
    pub norm_b_tilde: f64,
    /// `∫ b sin²(θ/2) dσ`.
    pub norm_b_sin2: f64,
    /// `‖b_{s-1}‖_{L¹}` for the exact power profile `b₀θ^{1-2s}`.
    pub norm_b_s_minus_1: f64,
}

/// θ nodes and weights (plain `dθ` weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularQuadrature {
    pub thetas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AngularQuadrature {
    /// Graded composite rule on `[lo, hi]`: Gauss-Legendre in `ln θ` on
    /// `[lo, 0.1]` and in θ beyond, half of the nodes each.
    pub fn graded(lo: f64, hi: f64, n: usize) -> Self {
        let mut thetas = Vec::new();
        let mut weights = Vec::new();
        if !(lo < hi) || n == 0 {
            return Self { thetas, weights };
        }
        let split = GRADED_SPLIT.min(hi);
        let (n_log, n_uni) = if lo < split && split < hi {
            let l = (n / 2).max(1);
            (l, (n - l).max(1))
        } else if lo < split {
            (n, 0)
        } else {
            (0, n)
        };
        if n_log > 0 {
            let (x, w) = gauss_legendre_on(n_log, 0.0, (split / lo).ln());
            for (x, w) in x.iter().zip(&w) {
                let t = lo * x.exp();
                thetas.push(t);
                weights.push(w * t);
            }
        }
        if n_uni > 0 {
            let (x, w) = gauss_legendre_on(n_uni, lo.max(split), hi);
            thetas.extend(x);
            weights.extend(w);
        }
        Self { thetas, weights }
    }

    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.thetas.iter().zip(&self.weights).map(|(&t, &w)| w * g(t)).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SigmaNode {
    pub cos_theta: f64,
    pub sin_theta: f64,
    pub cos_phi: f64,
    pub sin_phi: f64,
    pub weight: f64,
}

/// σ nodes relative to the relative-velocity direction.
#[derive(Debug, Clone)]
pub struct SigmaRule {
    pub dim: usize,
    pub nodes: Vec<SigmaNode>,
}

impl SigmaRule {
    /// Realises the nodes for a unit direction `û`, yielding `(σ, weight)`.
    pub fn realise<'a>(&'a self, uhat: &Velocity) -> impl Iterator<Item = (Velocity, f64)> + 'a {
        let (e1, e2) = frame(uhat, self.dim);
        let u = *uhat;
        self.nodes.iter().map(move |n| {
            let mut s = [0.0; 3];
            for a in 0..3 {
                let w = n.cos_phi * e1[a] + n.sin_phi * e2[a];
                s[a] = n.cos_theta * u[a] + n.sin_theta * w;
            }
            (s, n.weight)
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }
}

/// Orthonormal directions spanning the complement of `û`. The construction is
/// odd in `û` for `e1` and even for `e2`, which maps the node set for `-û`
/// onto the negated node set for `û`.
pub fn frame(uhat: &Velocity, dim: usize) -> (Velocity, Velocity) {
    if dim == 2 {
        return ([-uhat[1], uhat[0], 0.0], [0.0; 3]);
    }
    let mut axis = 0;
    for a in 1..3 {
        if uhat[a].abs() < uhat[axis].abs() {
            axis = a;
        }
    }
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let mut e1 = cross(&e, uhat);
    let nrm = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    for x in e1.iter_mut() {
        *x /= nrm;
    }
    let e2 = cross(uhat, &e1);
    (e1, e2)
}

fn cross(a: &Velocity, b: &Velocity) -> Velocity {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k3() -> CollisionKernel {
        CollisionKernel::new(3, -2.0, 0.3, 1.0, 1e-3, 16, 8).unwrap()
    }

    #[test]
    fn kernel_gates() {
        assert!(CollisionKernel::new(3, -3.0, 0.3, 1.0, 1e-2, 8, 4).is_err());
        assert!(CollisionKernel::new(3, -2.0, 1.0, 1.0, 1e-2, 8, 4).is_err());
        assert!(CollisionKernel::new(3, -2.0, 0.3, 0.0, 1e-2, 8, 4).is_err());
        assert!(CollisionKernel::new(3, -2.0, 0.3, 1.0, 2.0, 8, 4).is_err());
        assert!(CollisionKernel::new(3, -2.0, 0.3, 1.0, 1e-2, 8, 3).is_err());
        assert!(CollisionKernel::new(3, -0.5, 0.3, 1.0, 1e-2, 8, 4).unwrap().require_very_soft().is_err());
    }

    #[test]
    fn profile_examples() {
        let k = CollisionKernel::new(3, -2.0, 0.5, 1.0, 1e-2, 8, 4).unwrap();
        assert_eq!(k.b_profile(5e-3).unwrap(), 0.0);
        assert_eq!(k.b_profile(2.0).unwrap(), 0.0);
        assert!(k.b_profile(0.0).is_err());
        let t = PI / 4.0;
        let expect = t.powi(-2) / t.sin();
        assert!((k.b_profile(t).unwrap() - expect).abs() < 1e-12 * expect);
        let k2 = k.with_b0(2.0);
        assert!((k2.b_profile(t).unwrap() - 2.0 * expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn b_tilde_sign_and_asymptotics() {
        let k = k3();
        for i in 1..100 {
            let t = k.theta_min + (FRAC_PI_2 - k.theta_min) * i as f64 / 100.0;
            assert!(k.b_tilde(t).unwrap() >= 0.0);
        }
        for &t in &[0.002f64, 0.01, 0.05] {
            let lhs = t.sin() * k.b_tilde(t).unwrap();
            let asym = k.b0 * (k.gamma + 3.0) / 8.0 * t.powf(1.0 - 2.0 * k.s);
            assert!((lhs / asym - 1.0).abs() < 0.1, "t={t}");
        }
    }

    #[test]
    fn zero_profile_gives_zero_norms() {
        let k = CollisionKernel::new(3, -2.0, 0.3, 1.0, FRAC_PI_2, 8, 4).unwrap();
        let n = k.b_norms();
        assert_eq!((n.norm_b_tilde, n.norm_b_sin2, n.norm_b_s_minus_1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn norms_self_converge_and_are_monotone() {
        let k = k3();
        let a = k.b_norms();
        let b = k.with_resolution(32, 8).b_norms();
        for (x, y) in [(a.norm_b_tilde, b.norm_b_tilde), (a.norm_b_sin2, b.norm_b_sin2), (a.norm_b_s_minus_1, b.norm_b_s_minus_1)] {
            assert!(x.is_finite() && ((x - y) / y).abs() < 1e-2);
        }
        let coarse = CollisionKernel { theta_min: 1e-2, ..k }.b_norms();
        assert!(coarse.norm_b_tilde < a.norm_b_tilde && coarse.norm_b_sin2 < a.norm_b_sin2);
    }

    #[test]
    fn graded_rule_integrates_sphere_measure() {
        for (d, exact) in [(2, PI - 1e-6), (3, 1.0 + (1e-6f64).cos())] {
            let q = AngularQuadrature::graded(1e-6, PI, 24);
            let v = q.integrate(|t| t.sin().powi(d - 2));
            assert!((v - exact).abs() < 1e-9, "d={d} v={v}");
            assert!(q.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn frame_is_orthonormal_and_symmetric() {
        let u = [0.36, -0.48, 0.8];
        let (e1, e2) = frame(&u, 3);
        let dot = |a: &Velocity, b: &Velocity| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        assert!(dot(&e1, &u).abs() < 1e-15 && dot(&e2, &u).abs() < 1e-15 && dot(&e1, &e2).abs() < 1e-15);
        assert!((dot(&e1, &e1) - 1.0).abs() < 1e-15 && (dot(&e2, &e2) - 1.0).abs() < 1e-15);
        let rule = k3().with_resolution(4, 4).sigma_rule();
        let neg = [-u[0], -u[1], -u[2]];
        let plus: Vec<_> = rule.realise(&u).collect();
        let minus: Vec<_> = rule.realise(&neg).collect();
        for (s, w) in &plus {
            assert!(minus.iter().any(|(t, v)| v == w && (0..3).all(|a| (t[a] + s[a]).abs() < 1e-15)));
        }
    }
}
