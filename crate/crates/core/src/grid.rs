//! Truncated cell-centred velocity grids, grid functions, polynomial weights and
//! off-grid evaluation.
//!
//! Node ordering is lexicographic in the axis indices with the first velocity
//! component varying slowest. Every point outside the box `[-R, R]^d` is treated
//! as carrying the value zero.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::stencil::Interp;

/// A velocity in ℝ^d stored in a fixed array; unused trailing components are 0.
pub type Velocity = [f64; 3];

/// Uniform cell-centred grid on `[-R, R]^d` with `n` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    dim: usize,
    radius: f64,
    n: usize,
}

impl VelocityGrid {
    pub fn new(dim: usize, radius: f64, n: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return param(format!("dimension must be 2 or 3, got {dim}"));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return param(format!("truncation radius must be positive, got {radius}"));
        }
        if n < 2 || n % 2 != 0 {
            return param(format!("points per axis must be even and >= 2, got {n}"));
        }
        Ok(Self { dim, radius, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / self.n as f64
    }
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of node `i` along any axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.radius + (i as f64 + 0.5) * self.spacing()
    }

    /// Axis indices of a flat index (unused trailing entries are 0).
    #[inline]
    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let n = self.n;
        match self.dim {
            2 => [flat / n, flat % n, 0],
            _ => [flat / (n * n), (flat / n) % n, flat % n],
        }
    }

    #[inline]
    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        let n = self.n;
        match self.dim {
            2 => idx[0] * n + idx[1],
            _ => (idx[0] * n + idx[1]) * n + idx[2],
        }
    }

    #[inline]
    pub fn node(&self, flat: usize) -> Velocity {
        let idx = self.multi_index(flat);
        let mut v = [0.0; 3];
        for a in 0..self.dim {
            v[a] = self.coord(idx[a]);
        }
        v
    }

    /// Flat index of the node at `-v` for the node at `v`.
    pub fn mirror(&self, flat: usize) -> usize {
        let mut idx = self.multi_index(flat);
        for a in idx.iter_mut().take(self.dim) {
            *a = self.n - 1 - *a;
        }
        self.flat_index(idx)
    }

    /// Continuous index coordinate of a velocity component (node `i` sits at `i`).
    #[inline]
    pub fn index_coord(&self, x: f64) -> f64 {
        (x + self.radius) / self.spacing() - 0.5
    }

    pub fn check_same(&self, other: &VelocityGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Real values sampled at every node of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: VelocityGrid,
    values: Vec<f64>,
    /// Set by constructors of physical (nonnegative) states.
    pub nonnegative: bool,
}

impl GridFunction {
    pub fn new(grid: VelocityGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return param(format!("expected {} values, got {}", grid.len(), values.len()));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return param(format!("non-finite value at node {i}"));
        }
        let nonnegative = values.iter().all(|&x| x >= 0.0);
        Ok(Self { grid, values, nonnegative })
    }

    pub fn zeros(grid: VelocityGrid) -> Self {
        Self { grid, values: vec![0.0; grid.len()], nonnegative: true }
    }

    pub fn constant(grid: VelocityGrid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()], nonnegative: c >= 0.0 }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: VelocityGrid, f: impl Fn(&Velocity) -> f64) -> Self {
        let values: Vec<f64> = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        let nonnegative = values.iter().all(|&x| x >= 0.0);
        Self { grid, values, nonnegative }
    }

    pub(crate) fn from_parts(grid: VelocityGrid, values: Vec<f64>) -> Self {
        let nonnegative = values.iter().all(|&x| x >= 0.0);
        Self { grid, values, nonnegative }
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.grid, self.values.iter().map(|&x| f(x)).collect())
    }

    /// Node-wise combination of two functions on the same grid.
    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self::from_parts(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|x| a * x)
    }
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a * b)
    }
    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }
    pub fn positive_part(&self) -> Self {
        self.map(|x| x.max(0.0))
    }
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
    /// Multiplies node-wise by `⟨v⟩^k`.
    pub fn weighted(&self, k: f64) -> Self {
        let g = self.grid;
        Self::from_parts(
            g,
            self.values.iter().enumerate().map(|(i, &x)| x * bracket(&g.node(i)).powf(k)).collect(),
        )
    }

    /// Binary layout: `VSGF`, u32 dim, f64 radius, u32 n, then little-endian f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * self.values.len());
        out.extend_from_slice(b"VSGF");
        out.extend_from_slice(&(self.grid.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.grid.radius.to_le_bytes());
        out.extend_from_slice(&(self.grid.n as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != b"VSGF" {
            return Err(Error::Io("not a grid function file".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let dim = u32_at(4) as usize;
        let radius = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let n = u32_at(16) as usize;
        let grid = VelocityGrid::new(dim, radius, n)?;
        let body = &bytes[20..];
        if body.len() != 8 * grid.len() {
            return Err(Error::Io(format!("expected {} values", grid.len())));
        }
        let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(grid, values)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// CSV layout: a `dim,radius,n` header row, one data row, then one value per row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().flexible(true).from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        wr.write_record(["dim", "radius", "n"]).map_err(io)?;
        wr.write_record([self.grid.dim.to_string(), format!("{:e}", self.grid.radius), self.grid.n.to_string()])
            .map_err(io)?;
        for v in &self.values {
            wr.write_record([format!("{v:e}")]).map_err(io)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(r);
        let io = |e: csv::Error| Error::Io(e.to_string());
        let bad = |s: &str| Error::Io(format!("bad csv field: {s}"));
        let mut records = rd.records();
        let head = records.next().ok_or_else(|| Error::Io("missing grid row".into()))?.map_err(io)?;
        let dim: usize = head[0].parse().map_err(|_| bad(&head[0]))?;
        let radius: f64 = head[1].parse().map_err(|_| bad(&head[1]))?;
        let n: usize = head[2].parse().map_err(|_| bad(&head[2]))?;
        let grid = VelocityGrid::new(dim, radius, n)?;
        let mut values = Vec::with_capacity(grid.len());
        for rec in records {
            let rec = rec.map_err(io)?;
            values.push(rec[0].parse().map_err(|_| bad(&rec[0]))?);
        }
        Self::new(grid, values)
    }
}

/// Japanese bracket `⟨v⟩ = sqrt(1 + |v|²)`.
#[inline]
pub fn bracket(v: &Velocity) -> f64 {
    (1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Bounds `(ρ, E, H)` defining the class of well-prepared distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassYBounds {
    pub rho: f64,
    pub energy: f64,
    pub entropy: f64,
}

impl Default for ClassYBounds {
    fn default() -> Self {
        Self { rho: 0.5, energy: 10.0, entropy: 10.0 }
    }
}

impl ClassYBounds {
    pub fn new(rho: f64, energy: f64, entropy: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return param(format!("mass lower bound must be positive, got {rho}"));
        }
        if !(energy > 0.0) {
            return param(format!("energy upper bound must be positive, got {energy}"));
        }
        Ok(Self { rho, energy, entropy })
    }

    /// Checks `m₀ ≥ ρ`, `m₂ ≤ E`, `∫ f log f ≤ H`, naming the first failed bound.
    pub fn check(&self, f: &GridFunction) -> Result<()> {
        let g = f.grid();
        let dv = g.cell_volume();
        let (mut m0, mut m2, mut ent) = (0.0, 0.0, 0.0);
        for (i, &x) in f.values().iter().enumerate() {
            let b = bracket(&g.node(i));
            m0 += x;
            m2 += x * b * b;
            if x > 0.0 {
                ent += x * x.ln();
            }
        }
        let (m0, m2, ent) = (m0 * dv, m2 * dv, ent * dv);
        if !f.nonnegative && f.values().iter().any(|&x| x < 0.0) {
            return Err(Error::Precondition("distribution has negative values".into()));
        }
        if m0 < self.rho {
            return Err(Error::Precondition(format!("mass bound rho: m0 = {m0} < {}", self.rho)));
        }
        if m2 > self.energy {
            return Err(Error::Precondition(format!("energy bound E: m2 = {m2} > {}", self.energy)));
        }
        if ent > self.entropy {
            return Err(Error::Precondition(format!("entropy bound H: {ent} > {}", self.entropy)));
        }
        Ok(())
    }
}

/// Samples `mass·(2πT)^{-d/2}·exp(-|v-mean|²/(2T))`.
///
/// `mass = 0` yields the zero function; negative mass or non-positive
/// temperature is rejected.
pub fn make_maxwellian(grid: VelocityGrid, mass: f64, mean: &[f64], temperature: f64) -> Result<GridFunction> {
    if !(mass >= 0.0 && mass.is_finite()) {
        return param(format!("mass must be nonnegative, got {mass}"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return param(format!("temperature must be positive, got {temperature}"));
    }
    if mean.len() != grid.dim() {
        return param(format!("mean has {} components, grid dimension is {}", mean.len(), grid.dim()));
    }
    let d = grid.dim();
    let norm = mass * (2.0 * std::f64::consts::PI * temperature).powf(-(d as f64) / 2.0);
    let mut f = GridFunction::from_fn(grid, |v| {
        let r2: f64 = (0..d).map(|a| (v[a] - mean[a]).powi(2)).sum();
        norm * (-r2 / (2.0 * temperature)).exp()
    });
    f.nonnegative = true;
    Ok(f)
}

/// Node-wise `⟨v⟩^k`.
pub fn weight(grid: VelocityGrid, k: f64) -> GridFunction {
    GridFunction::from_fn(grid, |v| bracket(v).powf(k))
}

/// Multilinear interpolation; zero outside the box, clamped to the boundary
/// node between the outermost node and the box face.
pub fn interpolate(f: &GridFunction, v: &[f64]) -> f64 {
    evaluate(f, v, Interp::Linear)
}

/// Off-grid evaluation with the chosen scheme. Indices beyond the outermost
/// node are clamped, so constants are reproduced everywhere inside the box.
pub fn evaluate(f: &GridFunction, v: &[f64], scheme: Interp) -> f64 {
    let g = f.grid();
    let d = g.dim();
    let n = g.n() as i64;
    let mut taps = [(0i64, [0.0f64; 4], 0usize); 3];
    for a in 0..d {
        let x = g.index_coord(v[a]);
        if !(-0.5..=n as f64 - 0.5).contains(&x) {
            return 0.0;
        }
        let base = x.floor();
        let t = scheme.taps(x - base);
        taps[a] = (base as i64 + t.first, t.w, t.len);
    }
    let vals = f.values();
    let clamp = |i: i64| i.clamp(0, n - 1) as usize;
    let mut acc = 0.0;
    let (l0, l1) = (taps[0].2, taps[1].2);
    let l2 = if d == 3 { taps[2].2 } else { 1 };
    for j0 in 0..l0 {
        let i0 = clamp(taps[0].0 + j0 as i64);
        for j1 in 0..l1 {
            let i1 = clamp(taps[1].0 + j1 as i64);
            let w01 = taps[0].1[j0] * taps[1].1[j1];
            if d == 2 {
                acc += w01 * vals[g.flat_index([i0, i1, 0])];
                continue;
            }
            for j2 in 0..l2 {
                let i2 = clamp(taps[2].0 + j2 as i64);
                acc += w01 * taps[2].1[j2] * vals[g.flat_index([i0, i1, i2])];
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g3() -> VelocityGrid {
        VelocityGrid::new(3, 4.0, 8).unwrap()
    }

    #[test]
    fn grid_gates() {
        assert!(VelocityGrid::new(4, 1.0, 8).is_err());
        assert!(VelocityGrid::new(3, 1.0, 7).is_err());
        assert!(VelocityGrid::new(3, -1.0, 8).is_err());
        let g = g3();
        assert_eq!(g.spacing() * g.n() as f64, 2.0 * g.radius());
    }

    #[test]
    fn nodes_are_symmetric_and_never_zero() {
        let g = g3();
        for i in 0..g.len() {
            let v = g.node(i);
            let w = g.node(g.mirror(i));
            for a in 0..3 {
                assert_eq!(v[a], -w[a]);
            }
            assert!(v[0] != 0.0);
        }
    }

    #[test]
    fn interpolation_reproduces_nodes_and_constants() {
        let g = g3();
        let f = GridFunction::from_fn(g, |v| v[0] * v[1] - v[2]);
        for i in [0, 17, 200, g.len() - 1] {
            let v = g.node(i);
            assert!((interpolate(&f, &v) - f.values()[i]).abs() < 1e-12);
        }
        let c = GridFunction::constant(g, 2.5);
        assert!((interpolate(&c, &[3.9, -3.9, 0.1]) - 2.5).abs() < 1e-14);
        assert!((evaluate(&c, &[3.9, -3.9, 0.1], Interp::Cubic) - 2.5).abs() < 1e-14);
        assert_eq!(interpolate(&c, &[4.1, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn maxwellian_gates() {
        let g = g3();
        assert!(make_maxwellian(g, -1.0, &[0.0; 3], 1.0).is_err());
        assert!(make_maxwellian(g, 1.0, &[0.0; 3], 0.0).is_err());
        assert_eq!(make_maxwellian(g, 0.0, &[0.0; 3], 1.0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn weight_examples() {
        let g = g3();
        assert!(weight(g, 0.0).values().iter().all(|&x| x == 1.0));
        let w = weight(g, 2.0);
        for i in 0..g.len() {
            let v = g.node(i);
            let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            assert!((w.values()[i] - (1.0 + r2)).abs() < 1e-12);
        }
        let near = weight(g, -2.0).values().iter().cloned().fold(0.0, f64::max);
        assert!(near > 0.0 && near <= 1.0);
    }

    #[test]
    fn binary_and_csv_roundtrip() {
        let g = VelocityGrid::new(2, 3.0, 6).unwrap();
        let f = GridFunction::from_fn(g, |v| v[0] - 0.25 * v[1]);
        assert_eq!(GridFunction::from_bytes(&f.to_bytes()).unwrap(), f);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert_eq!(GridFunction::read_csv(&buf[..]).unwrap(), f);
    }

    #[test]
    fn class_membership_names_failed_bound() {
        let g = VelocityGrid::new(3, 8.0, 16).unwrap();
        let m = make_maxwellian(g, 1.0, &[0.0; 3], 1.0).unwrap();
        assert!(ClassYBounds::default().check(&m).is_ok());
        let small = m.scale(0.1);
        let e = ClassYBounds::default().check(&small).unwrap_err();
        assert!(e.to_string().contains("rho"));
        let hot = make_maxwellian(g, 1.0, &[0.0; 3], 4.0).unwrap();
        assert!(ClassYBounds::default().check(&hot).unwrap_err().to_string().contains("energy"));
    }
}
