//! Lattice-offset machinery behind every collision quadrature.
//!
//! For a relative velocity `u = m·h` on the lattice and a σ node, the
//! post-collisional velocities of every pair `(v, v - m)` are the same shifts
//! `v + δ` and `v - m - δ` with `δ = (-m + |m|σ)/2` in grid units. Interpolating
//! a whole field at a constant shift is separable, so each `(u, σ)` costs three
//! one-dimensional passes over a box instead of a tensor stencil per point.
//!
//! Arrays are viewed as three-dimensional; in d = 2 the leading axis has
//! length one so the innermost axis is always a velocity axis.

use rayon::prelude::*;

use crate::angular::SigmaRule;
use crate::grid::{GridFunction, Velocity, VelocityGrid};
use crate::stencil::Interp;

const PAD: usize = Interp::GHOST;

/// How points outside the box are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outside {
    /// States: zero outside `[-R, R]^d`.
    Zero,
    /// Test functions: the coordinate is clamped onto the box, so constants and
    /// the pointwise-vanishing weak integrand survive truncation.
    Clamp,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub d: usize,
    pub n: usize,
    pub dims: [usize; 3],
    pub pdims: [usize; 3],
    pub real: [bool; 3],
    pub h: f64,
    pub radius: f64,
}

impl Layout {
    pub fn new(grid: &VelocityGrid) -> Self {
        let (d, n) = (grid.dim(), grid.n());
        let real = [d == 3, true, true];
        let mut dims = [1; 3];
        let mut pdims = [1; 3];
        for a in 0..3 {
            if real[a] {
                dims[a] = n;
                pdims[a] = n + 2 * PAD;
            }
        }
        Self { d, n, dims, pdims, real, h: grid.spacing(), radius: grid.radius() }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }
    pub fn plen(&self) -> usize {
        self.pdims.iter().product()
    }

    /// Velocity component carried by layout axis `a`.
    #[inline]
    pub fn component(&self, a: usize) -> Option<usize> {
        if self.real[a] {
            Some(a + self.d - 3)
        } else {
            None
        }
    }

    #[inline]
    pub fn flat(&self, i: [i64; 3]) -> usize {
        ((i[0] as usize) * self.dims[1] + i[1] as usize) * self.dims[2] + i[2] as usize
    }

    #[inline]
    fn pflat(&self, i: [usize; 3]) -> usize {
        (i[0] * self.pdims[1] + i[1]) * self.pdims[2] + i[2]
    }


    /// Copies node values into a padded array whose ghost layers replicate the
    /// boundary nodes.
    pub fn pad(&self, vals: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.plen()];
        let clampi = |p: usize, a: usize| -> usize {
            if !self.real[a] {
                0
            } else {
                (p as i64 - PAD as i64).clamp(0, self.n as i64 - 1) as usize
            }
        };
        for p0 in 0..self.pdims[0] {
            let i0 = clampi(p0, 0);
            for p1 in 0..self.pdims[1] {
                let i1 = clampi(p1, 1);
                let src = (i0 * self.dims[1] + i1) * self.dims[2];
                let dst = self.pflat([p0, p1, 0]);
                for p2 in 0..self.pdims[2] {
                    out[dst + p2] = vals[src + clampi(p2, 2)];
                }
            }
        }
        out
    }

    /// Transpose of [`Layout::pad`]: ghost entries are added onto the boundary
    /// nodes they replicate.
    pub fn fold(&self, padded: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let clampi = |p: usize, a: usize| -> usize {
            if !self.real[a] {
                0
            } else {
                (p as i64 - PAD as i64).clamp(0, self.n as i64 - 1) as usize
            }
        };
        for p0 in 0..self.pdims[0] {
            let i0 = clampi(p0, 0);
            for p1 in 0..self.pdims[1] {
                let i1 = clampi(p1, 1);
                let dst = (i0 * self.dims[1] + i1) * self.dims[2];
                let src = self.pflat([p0, p1, 0]);
                for p2 in 0..self.pdims[2] {
                    out[dst + clampi(p2, 2)] += padded[src + p2];
                }
            }
        }
        out
    }

    /// Layout-axis velocity of node indices (unused axes give 0).
    #[inline]
    pub fn coord(&self, i: i64) -> f64 {
        -self.radius + (i as f64 + 0.5) * self.h
    }
}

/// Half-open box of node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Region {
    pub lo: [i64; 3],
    pub hi: [i64; 3],
}

impl Region {
    pub fn full(lay: &Layout) -> Self {
        Self { lo: [0; 3], hi: [lay.dims[0] as i64, lay.dims[1] as i64, lay.dims[2] as i64] }
    }
    pub fn empty() -> Self {
        Self { lo: [0; 3], hi: [0; 3] }
    }
    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.hi[a] <= self.lo[a])
    }
    #[cfg(test)]
    pub fn lens(&self) -> [usize; 3] {
        let mut l = [0; 3];
        for a in 0..3 {
            l[a] = (self.hi[a] - self.lo[a]).max(0) as usize;
        }
        l
    }
    #[cfg(test)]
    pub fn volume(&self) -> usize {
        self.lens().iter().product()
    }
    pub fn intersect(&self, o: &Region) -> Region {
        let mut r = *self;
        for a in 0..3 {
            r.lo[a] = r.lo[a].max(o.lo[a]);
            r.hi[a] = r.hi[a].min(o.hi[a]);
        }
        r
    }
    pub fn shifted(&self, m: [i64; 3]) -> Region {
        let mut r = *self;
        for a in 0..3 {
            r.lo[a] += m[a];
            r.hi[a] += m[a];
        }
        r
    }
    /// Nodes `v` with `v - m` also on the grid.
    pub fn overlap(lay: &Layout, m: [i64; 3]) -> Region {
        let mut r = Region::full(lay);
        for a in 0..3 {
            r.lo[a] = m[a].max(0);
            r.hi[a] = (lay.dims[a] as i64).min(lay.dims[a] as i64 + m[a]);
        }
        r
    }
}

/// Bounding box of the nodes where `|f| > tol·max|f|` (empty for f ≡ 0).
pub(crate) fn support(lay: &Layout, vals: &[f64], tol: f64) -> Region {
    let mx = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if mx == 0.0 {
        return Region::empty();
    }
    let cut = tol * mx;
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for i0 in 0..lay.dims[0] {
        for i1 in 0..lay.dims[1] {
            let row = (i0 * lay.dims[1] + i1) * lay.dims[2];
            for i2 in 0..lay.dims[2] {
                if vals[row + i2].abs() > cut {
                    let idx = [i0 as i64, i1 as i64, i2 as i64];
                    for a in 0..3 {
                        lo[a] = lo[a].min(idx[a]);
                        hi[a] = hi[a].max(idx[a] + 1);
                    }
                }
            }
        }
    }
    Region { lo, hi }
}

/// Nodes `v` whose stencil around `v + shift` touches `supp` (boundary
/// supports extend into the replicated ghost layers), restricted to shifts
/// landing inside the box.
pub(crate) fn reach(lay: &Layout, shift: &[f64; 3], supp: &Region) -> Region {
    if supp.is_empty() {
        return Region::empty();
    }
    let mut r = Region::full(lay);
    let n = lay.n as f64;
    for a in 0..3 {
        if !lay.real[a] {
            continue;
        }
        let s = shift[a];
        let fl = s.floor() as i64;
        let slo = if supp.lo[a] == 0 { -(PAD as i64) } else { supp.lo[a] };
        let shi = if supp.hi[a] == lay.n as i64 { (lay.n + PAD) as i64 } else { supp.hi[a] };
        // window [i + fl - 1, i + fl + 2] meets [slo, shi - 1]
        let lo_w = slo - 2 - fl;
        let hi_w = shi - 1 + 1 - fl + 1;
        let lo_v = (-0.5 - s).ceil() as i64;
        let hi_v = (n - 0.5 - s).floor() as i64 + 1;
        r.lo[a] = lo_w.max(lo_v);
        r.hi[a] = hi_w.min(hi_v);
    }
    r
}

/// Per-axis interpolation taps for a constant shift over an index range.
#[derive(Debug, Default)]
pub(crate) struct Table {
    start: Vec<usize>,
    w: Vec<[f64; 4]>,
    ntap: usize,
    rlo: usize,
    rhi: usize,
}

impl Table {
    fn build(&mut self, lay: &Layout, a: usize, lo: i64, hi: i64, shift: f64, mode: Outside, scheme: Interp) {
        self.start.clear();
        self.w.clear();
        if !lay.real[a] {
            self.start.push(0);
            self.w.push([1.0, 0.0, 0.0, 0.0]);
            self.ntap = 1;
            self.rlo = 0;
            self.rhi = 1;
            return;
        }
        self.ntap = 4;
        let n = lay.n as f64;
        let (mut rlo, mut rhi) = (usize::MAX, 0);
        for i in lo..hi {
            let mut x = i as f64 + shift;
            let inside = (-0.5..=n - 0.5).contains(&x);
            if !inside {
                x = x.clamp(-0.5, n - 0.5);
            }
            let base = x.floor();
            let tp = scheme.taps(x - base);
            let mut w = [0.0; 4];
            if inside || mode == Outside::Clamp {
                let k0 = (tp.first + 1) as usize;
                w[k0..k0 + tp.len].copy_from_slice(&tp.w[..tp.len]);
            }
            let st = (base as i64 - 1 + PAD as i64) as usize;
            rlo = rlo.min(st);
            rhi = rhi.max(st + 4);
            self.start.push(st);
            self.w.push(w);
        }
        self.rlo = rlo;
        self.rhi = rhi;
    }
    fn len(&self) -> usize {
        self.start.len()
    }
    fn span(&self) -> usize {
        self.rhi - self.rlo
    }
}

/// Reusable buffers for the separable passes.
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    t: [Table; 3],
    buf1: Vec<f64>,
    buf2: Vec<f64>,
}

impl Scratch {
    fn tables(&mut self, lay: &Layout, reg: &Region, shift: &[f64; 3], mode: Outside, scheme: Interp) {
        for a in 0..3 {
            self.t[a].build(lay, a, reg.lo[a], reg.hi[a], shift[a], mode, scheme);
        }
    }

    /// `out[v - reg.lo] = I src (v + shift)` for `v` in `reg`; `src` is padded.
    pub fn gather(&mut self, lay: &Layout, src: &[f64], reg: &Region, shift: &[f64; 3], mode: Outside, scheme: Interp, out: &mut Vec<f64>) {
        self.tables(lay, reg, shift, mode, scheme);
        let [t0, t1, t2] = &self.t;
        let (l0, l1, l2) = (t0.len(), t1.len(), t2.len());
        let (s0, s1) = (t0.span(), t1.span());
        let (ps0, ps1) = (lay.pdims[1] * lay.pdims[2], lay.pdims[2]);

        self.buf1.clear();
        self.buf1.resize(s0 * s1 * l2, 0.0);
        for i0 in 0..s0 {
            for i1 in 0..s1 {
                let row = &src[(t0.rlo + i0) * ps0 + (t1.rlo + i1) * ps1..];
                let dst = &mut self.buf1[(i0 * s1 + i1) * l2..(i0 * s1 + i1 + 1) * l2];
                for j2 in 0..l2 {
                    let st = t2.start[j2];
                    let w = &t2.w[j2];
                    dst[j2] = w[0] * row[st] + w[1] * row[st + 1] + w[2] * row[st + 2] + w[3] * row[st + 3];
                }
            }
        }

        self.buf2.clear();
        self.buf2.resize(s0 * l1 * l2, 0.0);
        for i0 in 0..s0 {
            for j1 in 0..l1 {
                let dst = (i0 * l1 + j1) * l2;
                for t in 0..t1.ntap {
                    let w = t1.w[j1][t];
                    if w == 0.0 {
                        continue;
                    }
                    let src1 = (i0 * s1 + t1.start[j1] + t - t1.rlo) * l2;
                    let (d, s) = (&mut self.buf2[dst..dst + l2], &self.buf1[src1..src1 + l2]);
                    for (x, y) in d.iter_mut().zip(s) {
                        *x += w * y;
                    }
                }
            }
        }

        out.clear();
        if t0.ntap == 1 {
            out.extend_from_slice(&self.buf2);
            return;
        }
        out.resize(l0 * l1 * l2, 0.0);
        let plane = l1 * l2;
        for j0 in 0..l0 {
            let d = &mut out[j0 * plane..(j0 + 1) * plane];
            for t in 0..4 {
                let w = t0.w[j0][t];
                if w == 0.0 {
                    continue;
                }
                let s = &self.buf2[(t0.start[j0] + t - t0.rlo) * plane..][..plane];
                for (x, y) in d.iter_mut().zip(s) {
                    *x += w * y;
                }
            }
        }
    }

    /// Transpose of [`Scratch::gather`]: adds the point masses `vals` located at
    /// `v + shift` onto the padded accumulator `acc`.
    pub fn scatter(&mut self, lay: &Layout, vals: &[f64], reg: &Region, shift: &[f64; 3], mode: Outside, scheme: Interp, acc: &mut [f64]) {
        self.tables(lay, reg, shift, mode, scheme);
        let [t0, t1, t2] = &self.t;
        let (l0, l1, l2) = (t0.len(), t1.len(), t2.len());
        let (s0, s1) = (t0.span(), t1.span());
        let (ps0, ps1) = (lay.pdims[1] * lay.pdims[2], lay.pdims[2]);
        let plane = l1 * l2;

        let b2: &[f64] = if t0.ntap == 1 {
            vals
        } else {
            self.buf2.clear();
            self.buf2.resize(s0 * plane, 0.0);
            for j0 in 0..l0 {
                let s = &vals[j0 * plane..(j0 + 1) * plane];
                for t in 0..4 {
                    let w = t0.w[j0][t];
                    if w == 0.0 {
                        continue;
                    }
                    let d = &mut self.buf2[(t0.start[j0] + t - t0.rlo) * plane..][..plane];
                    for (x, y) in d.iter_mut().zip(s) {
                        *x += w * y;
                    }
                }
            }
            &self.buf2
        };

        self.buf1.clear();
        self.buf1.resize(s0 * s1 * l2, 0.0);
        for i0 in 0..s0 {
            for j1 in 0..l1 {
                let s = &b2[(i0 * l1 + j1) * l2..(i0 * l1 + j1 + 1) * l2];
                for t in 0..t1.ntap {
                    let w = t1.w[j1][t];
                    if w == 0.0 {
                        continue;
                    }
                    let d = &mut self.buf1[(i0 * s1 + t1.start[j1] + t - t1.rlo) * l2..][..l2];
                    for (x, y) in d.iter_mut().zip(s) {
                        *x += w * y;
                    }
                }
            }
        }

        for i0 in 0..s0 {
            for i1 in 0..s1 {
                let row = &mut acc[(t0.rlo + i0) * ps0 + (t1.rlo + i1) * ps1..];
                let src = &self.buf1[(i0 * s1 + i1) * l2..(i0 * s1 + i1 + 1) * l2];
                for j2 in 0..l2 {
                    let v = src[j2];
                    if v == 0.0 {
                        continue;
                    }
                    let st = t2.start[j2];
                    let w = &t2.w[j2];
                    row[st] += w[0] * v;
                    row[st + 1] += w[1] * v;
                    row[st + 2] += w[2] * v;
                    row[st + 3] += w[3] * v;
                }
            }
        }
    }
}

/// Copies `vals` over `reg` shifted by `-m` (i.e. `vals[v - m]` for `v` in `reg`).
pub(crate) fn window(lay: &Layout, vals: &[f64], reg: &Region, m: [i64; 3], out: &mut Vec<f64>) {
    out.clear();
    for i0 in reg.lo[0]..reg.hi[0] {
        for i1 in reg.lo[1]..reg.hi[1] {
            let s = lay.flat([i0 - m[0], i1 - m[1], reg.lo[2] - m[2]]);
            out.extend_from_slice(&vals[s..s + (reg.hi[2] - reg.lo[2]) as usize]);
        }
    }
}

/// `acc[v + m] += vals[v - reg.lo]` over `reg`.
pub(crate) fn add_window(lay: &Layout, acc: &mut [f64], vals: &[f64], reg: &Region, m: [i64; 3]) {
    let l2 = (reg.hi[2] - reg.lo[2]) as usize;
    let mut k = 0;
    for i0 in reg.lo[0]..reg.hi[0] {
        for i1 in reg.lo[1]..reg.hi[1] {
            let d = lay.flat([i0 + m[0], i1 + m[1], reg.lo[2] + m[2]]);
            for (x, y) in acc[d..d + l2].iter_mut().zip(&vals[k..k + l2]) {
                *x += y;
            }
            k += l2;
        }
    }
}

/// One lattice relative velocity `u = m·h` with its σ-independent data.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Offset {
    pub m: [i64; 3],
    /// `|u|` in velocity units.
    pub norm: f64,
    pub uhat: Velocity,
    /// `v` with `v - m` on the grid.
    pub overlap: Region,
}

impl Offset {
    /// Shift `δ = (-m + |m|σ)/2` (grid units, layout axes) for a velocity-space σ.
    #[inline]
    pub fn delta(&self, lay: &Layout, sigma: &Velocity) -> [f64; 3] {
        let mn = self.norm / lay.h;
        let mut dl = [0.0; 3];
        for a in 0..3 {
            if let Some(c) = lay.component(a) {
                dl[a] = 0.5 * (-(self.m[a] as f64) + mn * sigma[c]);
            }
        }
        dl
    }

    /// Shift `-m - δ` of the partner velocity `v_*'`.
    #[inline]
    pub fn partner(&self, dl: &[f64; 3]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = -(self.m[a] as f64) - dl[a];
        }
        p
    }

    /// Post-collisional velocity `v + δh` for node indices `i`.
    #[inline]
    pub fn prime(lay: &Layout, i: [i64; 3], dl: &[f64; 3]) -> Velocity {
        let mut v = [0.0; 3];
        for a in 0..3 {
            if let Some(c) = lay.component(a) {
                v[c] = lay.coord(i[a]) + dl[a] * lay.h;
            }
        }
        v
    }
}

/// Nonzero lattice offsets grouped by their leading velocity component. With
/// `half`, only one of `m` and `-m` is kept.
pub(crate) fn offset_groups(lay: &Layout, half: bool) -> Vec<Vec<Offset>> {
    let n = lay.n as i64;
    let lead = 3 - lay.d;
    let mut groups = Vec::new();
    for m_lead in (-(n - 1))..n {
        if half && m_lead < 0 {
            continue;
        }
        let mut g = Vec::new();
        let range = |a: usize| if lay.real[a] && a != lead { -(n - 1)..n } else { 0..1 };
        for m1 in range(1) {
            for m2 in range(2) {
                let m = if lay.d == 3 { [m_lead, m1, m2] } else { [0, m_lead, m2] };
                if m == [0, 0, 0] {
                    continue;
                }
                if half && !positive(m) {
                    continue;
                }
                let mut u = [0.0; 3];
                for a in 0..3 {
                    if let Some(c) = lay.component(a) {
                        u[c] = m[a] as f64 * lay.h;
                    }
                }
                let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
                let uhat = [u[0] / norm, u[1] / norm, u[2] / norm];
                g.push(Offset { m, norm, uhat, overlap: Region::overlap(lay, m) });
            }
        }
        groups.push(g);
    }
    groups
}

fn positive(m: [i64; 3]) -> bool {
    for &x in &m {
        if x != 0 {
            return x > 0;
        }
    }
    false
}

/// Runs `body` over all offsets in parallel and reduces the per-group
/// accumulators in a fixed order, so results do not depend on thread count.
pub(crate) fn run<T, I, B, R>(groups: &[Vec<Offset>], init: I, body: B, mut reduce: R) -> Option<T>
where
    T: Send,
    I: Fn() -> T + Sync,
    B: Fn(&mut T, &mut Scratch, &Offset) + Sync,
    R: FnMut(&mut T, T),
{
    const BATCH: usize = 8;
    let mut total: Option<T> = None;
    for batch in groups.chunks(BATCH) {
        let parts: Vec<T> = batch
            .par_iter()
            .map(|g| {
                let mut acc = init();
                let mut sc = Scratch::default();
                for off in g {
                    body(&mut acc, &mut sc, off);
                }
                acc
            })
            .collect();
        for p in parts {
            match total.as_mut() {
                None => total = Some(p),
                Some(t) => reduce(t, p),
            }
        }
    }
    total
}

pub(crate) fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Everything a `Q(g, f)` pass can produce, before the `h^d` scalings.
#[derive(Debug, Clone)]
pub(crate) struct QSums {
    /// Σ w|u|^γ I f(v+δ) I g(v-m-δ).
    pub gain: Vec<f64>,
    /// f(v) Σ κ|u|^γ g(v-m).
    pub loss: Vec<f64>,
    /// Padded scatter of w|u|^γ f(v) g(v-m) onto `v + δ`.
    pub measure: Vec<f64>,
}

/// Exact weight applied to the post-collision point before the weak scatter.
pub(crate) type PointWeight<'a> = &'a (dyn Fn(&Velocity) -> f64 + Sync);

#[derive(Clone, Copy)]
pub(crate) struct QPlan<'a> {
    pub strong: bool,
    pub weak: bool,
    pub prune_tol: f64,
    pub scheme: Interp,
    pub weight: Option<PointWeight<'a>>,
}

/// Core double sum for `Q(g, f)`. When `g` and `f` carry identical values the
/// `(v, v_*, σ) ↔ (v_*, v, -σ)` pairing is used, halving the work and making
/// the discrete weak form exactly symmetric.
pub(crate) fn q_sums(g: &GridFunction, f: &GridFunction, rule: &SigmaRule, gamma: f64, plan: QPlan) -> QSums {
    let lay = Layout::new(f.grid());
    let paired = g.values() == f.values();
    let (gv, fv) = (g.values(), f.values());
    let kappa = rule.total_weight();
    let supp_f = support(&lay, fv, plan.prune_tol);
    let supp_g = support(&lay, gv, plan.prune_tol);
    let (fp, gp) = if plan.strong { (lay.pad(fv), lay.pad(gv)) } else { (Vec::new(), Vec::new()) };
    let groups = offset_groups(&lay, paired);
    let (len, plen) = (lay.len(), lay.plen());
    let init = || QSums {
        gain: if plan.strong { vec![0.0; len] } else { Vec::new() },
        loss: vec![0.0; len],
        measure: if plan.weak { vec![0.0; plen] } else { Vec::new() },
    };
    let body = |acc: &mut QSums, sc: &mut Scratch, off: &Offset| {
        let coef = off.norm.powf(gamma);
        let nodal = off.overlap.intersect(&supp_f).intersect(&supp_g.shifted(off.m));
        let mut pn = Vec::new();
        let mut gw = Vec::new();
        if !nodal.is_empty() {
            window(&lay, fv, &nodal, [0; 3], &mut pn);
            window(&lay, gv, &nodal, off.m, &mut gw);
            for (x, y) in pn.iter_mut().zip(&gw) {
                *x *= coef * y;
            }
            let scaled: Vec<f64> = pn.iter().map(|x| kappa * x).collect();
            add_window(&lay, &mut acc.loss, &scaled, &nodal, [0; 3]);
            if paired {
                add_window(&lay, &mut acc.loss, &scaled, &nodal, neg(off.m));
            }
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut wv = Vec::new();
        for (sigma, w) in rule.realise(&off.uhat) {
            let dl = off.delta(&lay, &sigma);
            let pd = off.partner(&dl);
            if plan.weak && !nodal.is_empty() {
                wv.clear();
                wv.extend(pn.iter().map(|x| w * x));
                if let Some(weight) = plan.weight {
                    apply_weight(&lay, &mut wv, &nodal, &dl, weight);
                }
                sc.scatter(&lay, &wv, &nodal, &dl, Outside::Clamp, plan.scheme, &mut acc.measure);
                if paired {
                    if let Some(weight) = plan.weight {
                        wv.clear();
                        wv.extend(pn.iter().map(|x| w * x));
                        apply_weight(&lay, &mut wv, &nodal, &pd, weight);
                    }
                    sc.scatter(&lay, &wv, &nodal, &pd, Outside::Clamp, plan.scheme, &mut acc.measure);
                }
            }
            if plan.strong {
                let reg = off.overlap.intersect(&reach(&lay, &dl, &supp_f)).intersect(&reach(&lay, &pd, &supp_g));
                if reg.is_empty() {
                    continue;
                }
                sc.gather(&lay, &fp, &reg, &dl, Outside::Zero, plan.scheme, &mut a);
                sc.gather(&lay, &gp, &reg, &pd, Outside::Zero, plan.scheme, &mut b);
                let c = w * coef;
                for (x, y) in a.iter_mut().zip(&b) {
                    *x *= c * y;
                }
                add_window(&lay, &mut acc.gain, &a, &reg, [0; 3]);
                if paired {
                    add_window(&lay, &mut acc.gain, &a, &reg, neg(off.m));
                }
            }
        }
    };
    let reduce = |t: &mut QSums, p: QSums| {
        add_into(&mut t.gain, &p.gain);
        add_into(&mut t.loss, &p.loss);
        add_into(&mut t.measure, &p.measure);
    };
    run(&groups, init, body, reduce).unwrap_or_else(init)
}

fn apply_weight(lay: &Layout, vals: &mut [f64], reg: &Region, dl: &[f64; 3], weight: PointWeight) {
    let mut k = 0;
    for i0 in reg.lo[0]..reg.hi[0] {
        for i1 in reg.lo[1]..reg.hi[1] {
            for i2 in reg.lo[2]..reg.hi[2] {
                vals[k] *= weight(&Offset::prime(lay, [i0, i1, i2], dl));
                k += 1;
            }
        }
    }
}

#[inline]
pub(crate) fn neg(m: [i64; 3]) -> [i64; 3] {
    [-m[0], -m[1], -m[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::evaluate;

    fn field(grid: VelocityGrid) -> GridFunction {
        GridFunction::from_fn(grid, |v| (0.3 * v[0] - 0.2 * v[1] + 0.1 * v[2]).sin() + 0.05 * v[0] * v[1])
    }

    #[test]
    fn gather_matches_pointwise_evaluation() {
        for (d, mode) in [(3, Outside::Zero), (2, Outside::Zero), (3, Outside::Clamp)] {
            let grid = VelocityGrid::new(d, 3.0, 8).unwrap();
            let f = field(grid);
            let lay = Layout::new(&grid);
            let fp = lay.pad(f.values());
            let shift = [if d == 3 { 1.3 } else { 0.0 }, -2.7, 0.45];
            let reg = Region::full(&lay);
            let mut sc = Scratch::default();
            let mut out = Vec::new();
            sc.gather(&lay, &fp, &reg, &shift, mode, Interp::Cubic, &mut out);
            let h = grid.spacing();
            let mut k = 0;
            for i0 in 0..lay.dims[0] as i64 {
                for i1 in 0..lay.dims[1] as i64 {
                    for i2 in 0..lay.dims[2] as i64 {
                        let p = Offset::prime(&lay, [i0, i1, i2], &shift);
                        let mut q = p;
                        if mode == Outside::Clamp {
                            let r = grid.radius() - 1e-12;
                            for c in 0..d {
                                q[c] = q[c].clamp(-r, r);
                            }
                        }
                        let want = evaluate(&f, &q[..d], Interp::Cubic);
                        assert!((out[k] - want).abs() < 1e-9, "d={d} {i0} {i1} {i2}: {} vs {want} h={h}", out[k]);
                        k += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn scatter_is_the_transpose_of_gather() {
        let grid = VelocityGrid::new(3, 3.0, 8).unwrap();
        let lay = Layout::new(&grid);
        let phi = field(grid);
        let reg = Region { lo: [1, 0, 2], hi: [7, 5, 8] };
        let vals: Vec<f64> = (0..reg.volume()).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let shift = [-0.8, 2.35, -4.1];
        let mut sc = Scratch::default();
        let mut out = Vec::new();
        sc.gather(&lay, &lay.pad(phi.values()), &reg, &shift, Outside::Clamp, Interp::Cubic, &mut out);
        let direct: f64 = out.iter().zip(&vals).map(|(a, b)| a * b).sum();
        let mut acc = vec![0.0; lay.plen()];
        sc.scatter(&lay, &vals, &reg, &shift, Outside::Clamp, Interp::Cubic, &mut acc);
        let meas = lay.fold(&acc);
        let dual: f64 = meas.iter().zip(phi.values()).map(|(a, b)| a * b).sum();
        assert!((direct - dual).abs() < 1e-10 * direct.abs().max(1.0));
        let mass: f64 = meas.iter().sum();
        assert!((mass - vals.iter().sum::<f64>()).abs() < 1e-10);
    }

    #[test]
    fn reach_keeps_every_contributing_node() {
        let grid = VelocityGrid::new(3, 3.0, 10).unwrap();
        let lay = Layout::new(&grid);
        let mut vals = vec![0.0; lay.len()];
        let supp = Region { lo: [3, 4, 0], hi: [6, 7, 2] };
        for i0 in 3..6 {
            for i1 in 4..7 {
                for i2 in 0..2 {
                    vals[lay.flat([i0, i1, i2])] = 1.0 + i0 as f64;
                }
            }
        }
        assert_eq!(support(&lay, &vals, 0.0), supp);
        let fp = lay.pad(&vals);
        let shift = [1.7, -0.3, -2.6];
        let full = Region::full(&lay);
        let mut sc = Scratch::default();
        let mut out = Vec::new();
        sc.gather(&lay, &fp, &full, &shift, Outside::Zero, Interp::Cubic, &mut out);
        let r = reach(&lay, &shift, &supp);
        let mut k = 0;
        for i0 in 0..10 {
            for i1 in 0..10 {
                for i2 in 0..10 {
                    let inside = (0..3).all(|a| [i0, i1, i2][a] >= r.lo[a] && [i0, i1, i2][a] < r.hi[a]);
                    if !inside {
                        assert_eq!(out[k], 0.0);
                    }
                    k += 1;
                }
            }
        }
    }
}
