//! Brute-force reference implementations for the fast paths.
//!
//! Nothing here calls the FFT, the interpolation stencils or the σ rule of
//! the collision engine: kernels are integrated cell by cell, transforms are
//! summed directly and post-collisional test-function values are exact.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angular::CollisionKernel;
use crate::collision::q_weak;
use crate::error::{param, Error, Result};
use crate::functionals::{c_alpha, sobolev_norm};
use crate::grid::{GridFunction, Velocity, VelocityGrid};
use crate::quad::gauss_legendre_on;

/// One oracle-versus-fast comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub target: String,
    pub oracle: f64,
    pub fast: f64,
    pub rel_err: f64,
    pub resolutions: BTreeMap<String, f64>,
}

impl OracleReport {
    fn scalar(target: &str, oracle: f64, fast: f64, res: &[(&str, f64)]) -> Self {
        let scale = oracle.abs().max(f64::MIN_POSITIVE);
        let rel_err = if oracle == fast { 0.0 } else { (oracle - fast).abs() / scale };
        Self { target: target.into(), oracle, fast, rel_err, resolutions: res.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }
}

/// Refinement depth for the sub-cells touching the singular point.
const SINGULAR_DEPTH: usize = 8;

/// `∫_{box} |z|^α dz` over an axis-aligned box given by its lower corner and
/// side, split into `4^d` sub-cells; sub-cells with a corner at the origin are
/// split again, down to [`SINGULAR_DEPTH`].
fn box_integral(d: usize, lo: [f64; 3], side: f64, alpha: f64, depth: usize, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let touches = (0..d).all(|a| lo[a] <= 0.0 && lo[a] + side >= 0.0);
    if !touches || depth == 0 {
        return gauss_box(d, lo, side, alpha, rule);
    }
    let sub = side / 4.0;
    let mut total = 0.0;
    let n3 = if d == 3 { 4 } else { 1 };
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..n3 {
                let corner = [lo[0] + i as f64 * sub, lo[1] + j as f64 * sub, if d == 3 { lo[2] + k as f64 * sub } else { 0.0 }];
                total += box_integral(d, corner, sub, alpha, depth - 1, rule);
            }
        }
    }
    total
}

fn gauss_box(d: usize, lo: [f64; 3], side: f64, alpha: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (x, w) = rule;
    let zs: &[f64] = if d == 3 { x } else { &[0.5] };
    let wz: &[f64] = if d == 3 { w } else { &[1.0] };
    let mut s = 0.0;
    for (a, wa) in x.iter().zip(w) {
        for (b, wb) in x.iter().zip(w) {
            for (c, wc) in zs.iter().zip(wz) {
                let p = [lo[0] + side * a, lo[1] + side * b, lo[2] + side * c];
                let r2 = p[0] * p[0] + p[1] * p[1] + if d == 3 { p[2] * p[2] } else { 0.0 };
                s += wa * wb * wc * r2.powf(0.5 * alpha);
            }
        }
    }
    s * side.powi(d as i32)
}

/// `c_α[f]` at every node by a direct double loop, treating `f` as constant on
/// each cell and integrating `|v_i - w|^α` exactly over every source cell.
pub fn oracle_c_alpha(f: &GridFunction, alpha: f64) -> Result<GridFunction> {
    let g = *f.grid();
    let (d, n) = (g.dim(), g.n() as i64);
    if !(alpha > -(d as f64)) {
        return param(format!("c_alpha needs alpha > -d = {}, got {alpha}", -(d as f64)));
    }
    let h = g.spacing();
    let near = gauss_legendre_on(6, 0.0, 1.0);
    let far = gauss_legendre_on(2, 0.0, 1.0);
    // Cell integrals by offset m ∈ (-n, n)^d.
    let span = (2 * n - 1) as usize;
    let kz = if d == 3 { span } else { 1 };
    let offsets: Vec<[i64; 3]> = (0..span * span * kz)
        .map(|t| {
            let (i, rest) = (t / (span * kz), t % (span * kz));
            let (j, k) = (rest / kz, rest % kz);
            [i as i64 - n + 1, j as i64 - n + 1, if d == 3 { k as i64 - n + 1 } else { 0 }]
        })
        .collect();
    let table: Vec<f64> = offsets
        .par_iter()
        .map(|m| {
            let lo = [(m[0] as f64 - 0.5) * h, (m[1] as f64 - 0.5) * h, if d == 3 { (m[2] as f64 - 0.5) * h } else { 0.0 }];
            let close = m.iter().all(|c| c.abs() <= 2);
            box_integral(d, lo, h, alpha, SINGULAR_DEPTH, if close { &near } else { &far })
        })
        .collect();
    let lookup = |m: [i64; 3]| {
        let (i, j) = ((m[0] + n - 1) as usize, (m[1] + n - 1) as usize);
        let k = if d == 3 { (m[2] + n - 1) as usize } else { 0 };
        table[(i * span + j) * kz + k]
    };
    let vals = f.values();
    let out: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|t| {
            let a = g.multi_index(t);
            let mut s = 0.0;
            for (src, &fv) in vals.iter().enumerate() {
                if fv != 0.0 {
                    let b = g.multi_index(src);
                    let m = [b[0] as i64 - a[0] as i64, b[1] as i64 - a[1] as i64, b[2] as i64 - a[2] as i64];
                    s += fv * lookup(m);
                }
            }
            s
        })
        .collect();
    GridFunction::new(g, out)
}

/// Squared modulus of the transform `h^d Σ_j f_j e^{-iξ·v_j}` on the lattice
/// `ξ ∈ (π/2R)·[-N, N)^d`, summed axis by axis.
fn fine_power_spectrum(f: &GridFunction) -> (Vec<f64>, Vec<f64>, f64) {
    let g = f.grid();
    let (d, n) = (g.dim(), g.n());
    let m = 2 * n;
    let dxi = PI / (2.0 * g.radius());
    let freqs: Vec<f64> = (0..m).map(|k| (k as f64 - n as f64) * dxi).collect();
    // Per-axis phase tables: phase[k][j] = e^{-i ξ_k x_j}.
    let phase: Vec<Vec<(f64, f64)>> = freqs
        .iter()
        .map(|&xi| (0..n).map(|j| (-(xi * g.coord(j))).sin_cos()).map(|(s, c)| (c, s)).collect())
        .collect();
    // Contract one axis at a time: shape goes from n^d to m^d.
    let mut re: Vec<f64> = f.values().to_vec();
    let mut im = vec![0.0; re.len()];
    let mut dims = vec![n; d];
    for axis in 0..d {
        let before: usize = dims[..axis].iter().product();
        let after: usize = dims[axis + 1..].iter().product();
        let mut nre = vec![0.0; before * m * after];
        let mut nim = vec![0.0; before * m * after];
        for b in 0..before {
            for (k, row) in phase.iter().enumerate() {
                for (j, &(c, s)) in row.iter().enumerate() {
                    let src = (b * n + j) * after;
                    let dst = (b * m + k) * after;
                    for a in 0..after {
                        let (x, y) = (re[src + a], im[src + a]);
                        nre[dst + a] += c * x - s * y;
                        nim[dst + a] += c * y + s * x;
                    }
                }
            }
        }
        re = nre;
        im = nim;
        dims[axis] = m;
    }
    let hv = g.cell_volume();
    let power: Vec<f64> = re.iter().zip(&im).map(|(x, y)| (x * x + y * y) * hv * hv).collect();
    let xi2: Vec<f64> = (0..power.len())
        .map(|t| {
            let mut r = t;
            let mut s = 0.0;
            for _ in 0..d {
                s += freqs[r % m].powi(2);
                r /= m;
            }
            s
        })
        .collect();
    (power, xi2, dxi.powi(d as i32))
}

/// `‖f‖_{Ḣ^α}` (or `H^α` with the plain `L²` part) by a direct transform sum.
pub fn oracle_sobolev(f: &GridFunction, alpha: f64, homogeneous: bool) -> Result<f64> {
    if !(alpha >= 0.0) {
        return param(format!("Sobolev order must be >= 0, got {alpha}"));
    }
    let (power, xi2, cell) = fine_power_spectrum(f);
    let semi: f64 = power
        .iter()
        .zip(&xi2)
        .map(|(&p, &x2)| if alpha == 0.0 { p } else if x2 == 0.0 { 0.0 } else { p * x2.powf(alpha) })
        .sum::<f64>()
        * cell;
    let l2 = if homogeneous { 0.0 } else { f.values().iter().map(|x| x * x).sum::<f64>() * f.grid().cell_volume() };
    Ok((semi + l2).sqrt())
}

/// Resolution of the angular rule used by [`oracle_q_weak`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleAngles {
    pub n_theta: usize,
    pub n_phi: usize,
    /// Step used to read off the `θ²` coefficient of the azimuthal average.
    pub probe: f64,
}

impl Default for OracleAngles {
    fn default() -> Self {
        Self { n_theta: 400, n_phi: 16, probe: 1e-3 }
    }
}

fn unit_normals(u: &Velocity, d: usize) -> (Velocity, Velocity) {
    if d == 2 {
        return ([u[1], -u[0], 0.0], [0.0; 3]);
    }
    // Gram-Schmidt against the coordinate axis least aligned with u.
    let axis = (0..3).min_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs())).unwrap_or(0);
    let mut e1 = [0.0; 3];
    e1[axis] = 1.0;
    let dot = u[axis];
    for a in 0..3 {
        e1[a] -= dot * u[a];
    }
    let nrm = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1.iter_mut().for_each(|x| *x /= nrm);
    let e2 = [u[1] * e1[2] - u[2] * e1[1], u[2] * e1[0] - u[0] * e1[2], u[0] * e1[1] - u[1] * e1[0]];
    (e1, e2)
}

/// `∫_{S^{d-1}} b(cosθ)[φ(v') - φ(v)] dσ` for one velocity pair, by a uniform
/// midpoint rule in θ after subtracting the `θ²` term of the azimuthal average,
/// which is integrated in closed form.
fn angular_increment(v: &Velocity, vs: &Velocity, phi: &dyn Fn(&Velocity) -> f64, kernel: &CollisionKernel, angles: &OracleAngles) -> f64 {
    let d = kernel.dim;
    let u = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
    let r = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    let uhat = [u[0] / r, u[1] / r, u[2] / r];
    let (e1, e2) = unit_normals(&uhat, d);
    let centre = [0.5 * (v[0] + vs[0]), 0.5 * (v[1] + vs[1]), 0.5 * (v[2] + vs[2])];
    let base = phi(v);
    let azimuths: Vec<(f64, f64)> = if d == 2 {
        vec![(1.0, 0.0), (-1.0, 0.0)]
    } else {
        (0..angles.n_phi).map(|j| (2.0 * PI * (j as f64 + 0.5) / angles.n_phi as f64).sin_cos()).map(|(s, c)| (c, s)).collect()
    };
    let sphere = if d == 2 { 2.0 } else { 2.0 * PI };
    // Azimuthal average of φ(v') - φ(v) at polar angle θ.
    let average = |theta: f64| {
        let (st, ct) = theta.sin_cos();
        let mut s = 0.0;
        for &(c, sn) in &azimuths {
            let mut vp = [0.0; 3];
            for a in 0..3 {
                let sigma = ct * uhat[a] + st * (c * e1[a] + sn * e2[a]);
                vp[a] = centre[a] + 0.5 * r * sigma;
            }
            s += phi(&vp) - base;
        }
        s / azimuths.len() as f64
    };
    // The average is even in θ; Richardson removes the θ⁴ term.
    let lead = {
        let e = angles.probe;
        (4.0 * average(e) - average(2.0 * e) / 4.0) / (3.0 * e * e)
    };
    let (lo, hi) = (kernel.theta_min, FRAC_PI_2);
    let expo = -1.0 - 2.0 * kernel.s;
    let exact_part = lead * (hi.powf(2.0 - 2.0 * kernel.s) - lo.powf(2.0 - 2.0 * kernel.s)) / (2.0 - 2.0 * kernel.s);
    let step = (hi - lo) / angles.n_theta as f64;
    let mut rest = 0.0;
    for i in 0..angles.n_theta {
        let t = lo + (i as f64 + 0.5) * step;
        rest += t.powf(expo) * (average(t) - lead * t * t);
    }
    sphere * kernel.b0 * (exact_part + rest * step)
}

/// `∫∫ |v - v_*|^γ g(v_*) f(v) ∫ b [φ(v') - φ(v)] dσ dv_* dv` with nodal sums
/// in `(v, v_*)` and an analytic `φ` evaluated exactly at `v'`.
pub fn oracle_q_weak(
    g: &GridFunction,
    f: &GridFunction,
    phi: &(dyn Fn(&Velocity) -> f64 + Sync),
    kernel: &CollisionKernel,
    angles: &OracleAngles,
) -> Result<f64> {
    g.grid().check_same(f.grid())?;
    let grid = *f.grid();
    if kernel.dim != grid.dim() {
        return Err(Error::GridMismatch(format!("kernel dimension {} vs grid dimension {}", kernel.dim, grid.dim())));
    }
    let support = |x: &GridFunction| -> Vec<(Velocity, f64)> {
        let top = x.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        x.values().iter().enumerate().filter(|(_, v)| v.abs() > 1e-14 * top).map(|(i, &v)| (grid.node(i), v)).collect()
    };
    let (gs, fs) = (support(g), support(f));
    let dv = grid.cell_volume();
    let total: f64 = fs
        .par_iter()
        .map(|(v, fv)| {
            let mut s = 0.0;
            for (vs, gv) in &gs {
                let r2 = (0..3).map(|a| (v[a] - vs[a]).powi(2)).sum::<f64>();
                if r2 > 0.0 {
                    s += gv * r2.sqrt().powf(kernel.gamma) * angular_increment(v, vs, phi, kernel, angles);
                }
            }
            s * fv
        })
        .sum();
    Ok(total * dv * dv)
}

/// Sup-norm comparison of [`oracle_c_alpha`] against the FFT path.
pub fn report_c_alpha(f: &GridFunction, alpha: f64) -> Result<OracleReport> {
    let slow = oracle_c_alpha(f, alpha)?;
    let fast = c_alpha(f, alpha)?;
    let top = slow.max_abs();
    let diff = slow.sub(&fast)?.max_abs();
    let g = f.grid();
    Ok(OracleReport {
        target: "c_alpha".into(),
        oracle: top,
        fast: fast.max_abs(),
        rel_err: if diff == 0.0 { 0.0 } else { diff / top.max(f64::MIN_POSITIVE) },
        resolutions: [("n", g.n() as f64), ("radius", g.radius()), ("alpha", alpha), ("singular_depth", SINGULAR_DEPTH as f64)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
    })
}

pub fn report_sobolev(f: &GridFunction, alpha: f64, homogeneous: bool) -> Result<OracleReport> {
    let g = f.grid();
    Ok(OracleReport::scalar(
        "sobolev_norm",
        oracle_sobolev(f, alpha, homogeneous)?,
        sobolev_norm(f, alpha, homogeneous)?,
        &[("n", g.n() as f64), ("radius", g.radius()), ("alpha", alpha), ("frequency_refinement", 2.0)],
    ))
}

/// Compares against [`q_weak`] with `φ` sampled at the nodes.
pub fn report_q_weak(
    g: &GridFunction,
    f: &GridFunction,
    phi: &(dyn Fn(&Velocity) -> f64 + Sync),
    kernel: &CollisionKernel,
    angles: &OracleAngles,
) -> Result<OracleReport> {
    let grid = f.grid();
    let sampled = GridFunction::from_fn(*grid, phi);
    Ok(OracleReport::scalar(
        "q_weak",
        oracle_q_weak(g, f, phi, kernel, angles)?,
        q_weak(g, f, &sampled, kernel)?,
        &[
            ("n", grid.n() as f64),
            ("radius", grid.radius()),
            ("n_theta", kernel.n_theta as f64),
            ("oracle_n_theta", angles.n_theta as f64),
            ("oracle_n_phi", angles.n_phi as f64),
        ],
    ))
}

/// Names accepted by [`named_report`].
pub const NAMED_CHECKS: [&str; 3] = ["c_alpha", "sobolev_norm", "q_weak"];

/// Fixed cross-checks on Maxwellian data at reduced resolution.
pub fn named_report(name: &str) -> Result<OracleReport> {
    use crate::grid::make_maxwellian;
    match name {
        "c_alpha" => {
            let grid = VelocityGrid::new(3, 6.0, 16)?;
            report_c_alpha(&make_maxwellian(grid, 1.0, &[0.0; 3], 1.0)?, -1.0)
        }
        "sobolev_norm" => {
            let grid = VelocityGrid::new(3, 8.0, 24)?;
            report_sobolev(&make_maxwellian(grid, 1.0, &[0.0; 3], 1.0)?, 0.5, true)
        }
        "q_weak" => {
            let grid = VelocityGrid::new(2, 5.0, 24)?;
            let kernel = CollisionKernel::new(2, -1.5, 0.5, 1.0, 1e-2, 16, 1)?;
            let g = make_maxwellian(grid, 1.0, &[0.4, 0.0], 0.5)?;
            let f = make_maxwellian(grid, 1.0, &[-0.3, 0.2], 1.0)?;
            report_q_weak(&g, &f, &|v: &Velocity| v[0] * v[0] + v[1] * v[1], &kernel, &OracleAngles::default())
        }
        other => param(format!("unknown oracle check '{other}', expected one of {NAMED_CHECKS:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_maxwellian;

    fn gamma_fn(x: f64) -> f64 {
        statrs::function::gamma::gamma(x)
    }

    #[test]
    fn c_alpha_agreement_and_trivial_cases() {
        let r = named_report("c_alpha").unwrap();
        assert!(r.rel_err < 1e-2, "{r:?}");
        let grid = VelocityGrid::new(2, 4.0, 8).unwrap();
        let m = make_maxwellian(grid, 1.3, &[0.2, 0.0], 0.7).unwrap();
        let mass: f64 = m.values().iter().sum::<f64>() * grid.cell_volume();
        let c0 = oracle_c_alpha(&m, 0.0).unwrap();
        assert!(c0.values().iter().all(|x| (x - mass).abs() < 1e-12 * mass));
        assert!(oracle_c_alpha(&m.scale(0.0), -1.0).unwrap().values().iter().all(|&x| x == 0.0));
        assert!(oracle_c_alpha(&m, -2.0).is_err());
    }

    #[test]
    fn sobolev_agreement_parseval_and_closed_form() {
        let r = named_report("sobolev_norm").unwrap();
        assert!(r.rel_err < 5e-3, "{r:?}");
        let grid = VelocityGrid::new(3, 8.0, 24).unwrap();
        let m = make_maxwellian(grid, 1.0, &[0.0; 3], 1.0).unwrap();
        let l2: f64 = m.values().iter().map(|x| x * x).sum::<f64>() * grid.cell_volume();
        let parseval = oracle_sobolev(&m, 0.0, true).unwrap().powi(2);
        assert!((parseval / ((2.0 * PI).powi(3) * l2) - 1.0).abs() < 1e-12);
        for s in [0.3, 0.7] {
            let got = oracle_sobolev(&m, s, true).unwrap().powi(2);
            let want = 2.0 * PI * gamma_fn(s + 1.5);
            assert!((got / want - 1.0).abs() < 1e-2, "s={s}: {got} vs {want}");
        }
    }

    #[test]
    fn q_weak_agreement_and_trivial_cases() {
        let r = named_report("q_weak").unwrap();
        assert!(r.rel_err < 2e-2, "{r:?}");
        let grid = VelocityGrid::new(2, 4.0, 10).unwrap();
        let kernel = CollisionKernel::new(2, -1.5, 0.5, 1.0, 1e-2, 8, 1).unwrap();
        let m = make_maxwellian(grid, 1.0, &[0.0; 2], 1.0).unwrap();
        let angles = OracleAngles { n_theta: 40, ..OracleAngles::default() };
        assert_eq!(oracle_q_weak(&m, &m, &|_: &Velocity| 1.0, &kernel, &angles).unwrap(), 0.0);
        assert_eq!(oracle_q_weak(&m.scale(0.0), &m, &|v: &Velocity| v[0] * v[0], &kernel, &angles).unwrap(), 0.0);
        assert!(named_report("nope").is_err());
    }
}
