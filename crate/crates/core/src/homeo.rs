//! Evaluable homeomorphisms: the annulus transfer, the Cantor maps g_k and
//! the tower map L_K.
//!
//! Every map is piecewise smooth with closed-form value, derivative and
//! jacobian per cell; cells are found by descent through the dyadic cube
//! hierarchy, never by search over a flat list.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{CantorSystem, Family, Index, MultiIndex, TowerIndex};
use crate::linalg::{self, Matrix, Vector, MAXN};

/// Value, derivative and jacobian at a point.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub value: Vector,
    pub d: Matrix,
    pub j: f64,
}

impl Jet {
    pub fn identity(n: usize, x: &Vector) -> Self {
        Jet { value: *x, d: linalg::identity(n), j: 1.0 }
    }

    /// `outer ∘ inner`, where `outer` was evaluated at `inner.value`.
    pub fn then(&self, n: usize, outer: &Jet) -> Jet {
        Jet { value: outer.value, d: linalg::matmul(n, &outer.d, &self.d), j: outer.j * self.j }
    }

    pub fn frobenius(&self, n: usize) -> f64 {
        linalg::frobenius(n, &self.d)
    }

    /// Jet of the inverse map at `self.value`.
    pub fn inverse(&self, n: usize, preimage: &Vector) -> Jet {
        let d = linalg::inverse(n, &self.d).expect("jacobian positive");
        Jet { value: *preimage, d, j: 1.0 / self.j }
    }
}

/// An orientation-preserving homeomorphism with closed-form jets.
pub trait Homeo {
    fn dim(&self) -> usize;
    fn label(&self) -> String;
    fn eval(&self, x: &Vector) -> Result<Jet>;
    fn invert(&self, y: &Vector) -> Result<Vector>;

    fn apply(&self, x: &Vector) -> Result<Vector> {
        Ok(self.eval(x)?.value)
    }

    fn eval_inverse(&self, y: &Vector) -> Result<Jet> {
        let x = self.invert(y)?;
        Ok(self.eval(&x)?.inverse(self.dim(), &x))
    }
}

#[derive(Clone, Debug)]
pub struct Identity {
    pub n: usize,
}

impl Homeo for Identity {
    fn dim(&self) -> usize {
        self.n
    }
    fn label(&self) -> String {
        "identity".into()
    }
    fn eval(&self, x: &Vector) -> Result<Jet> {
        Ok(Jet::identity(self.n, x))
    }
    fn invert(&self, y: &Vector) -> Result<Vector> {
        Ok(*y)
    }
}

/// x ↦ c·x.
#[derive(Clone, Debug)]
pub struct Scaling {
    pub n: usize,
    pub c: f64,
}

impl Homeo for Scaling {
    fn dim(&self) -> usize {
        self.n
    }
    fn label(&self) -> String {
        format!("scaling {}", self.c)
    }
    fn eval(&self, x: &Vector) -> Result<Jet> {
        let mut v = *x;
        v.iter_mut().for_each(|c| *c *= self.c);
        Ok(Jet { value: v, d: linalg::scalar(self.n, self.c), j: self.c.powi(self.n as i32) })
    }
    fn invert(&self, y: &Vector) -> Result<Vector> {
        let mut v = *y;
        v.iter_mut().for_each(|c| *c /= self.c);
        Ok(v)
    }
}

/// Float cube Q(c, r) for evaluation paths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CubeF {
    pub c: Vector,
    pub r: f64,
}

/// Radial sup-norm transfer of Q(z,r') \ Q(z,r) onto Q(z̃,r̃') \ Q(z̃,r̃),
/// linear on the inner cube.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AnnulusTransfer {
    pub n: usize,
    pub src_outer: CubeF,
    pub src_inner: CubeF,
    pub dst_outer: CubeF,
    pub dst_inner: CubeF,
}

const SLACK: f64 = 1e-12;

impl AnnulusTransfer {
    pub fn new(n: usize, src_outer: CubeF, src_inner: CubeF, dst_outer: CubeF, dst_inner: CubeF) -> Result<Self> {
        if src_inner.c != src_outer.c || dst_inner.c != dst_outer.c {
            return Err(Error::InvalidArgument("annulus pairs must be concentric".into()));
        }
        if !(0.0 < src_inner.r && src_inner.r < src_outer.r && 0.0 < dst_inner.r && dst_inner.r < dst_outer.r) {
            return Err(Error::InvalidArgument("annulus radii must satisfy 0 < inner < outer".into()));
        }
        Ok(AnnulusTransfer { n, src_outer, src_inner, dst_outer, dst_inner })
    }

    /// Same-geometry transfer, i.e. the identity.
    pub fn identity(n: usize, c: Vector, r_in: f64, r_out: f64) -> Self {
        let o = CubeF { c, r: r_out };
        let i = CubeF { c, r: r_in };
        AnnulusTransfer { n, src_outer: o, src_inner: i, dst_outer: o, dst_inner: i }
    }

    fn slope(&self) -> f64 {
        (self.dst_outer.r - self.dst_inner.r) / (self.src_outer.r - self.src_inner.r)
    }

    pub fn eval(&self, x: &Vector) -> Result<Jet> {
        let n = self.n;
        let z = &self.src_inner.c;
        let zt = &self.dst_inner.c;
        let u = linalg::sub(n, x, z);
        let t = linalg::sup_norm(n, &u);
        if t > self.src_outer.r * (1.0 + SLACK) {
            return Err(Error::OutsideDomain("annulus transfer"));
        }
        let (r, rt) = (self.src_inner.r, self.dst_inner.r);
        if t <= r {
            let s = rt / r;
            let mut y = *zt;
            for i in 0..n {
                y[i] += s * u[i];
            }
            return Ok(Jet { value: y, d: linalg::scalar(n, s), j: s.powi(n as i32) });
        }
        let slope = self.slope();
        let rho = rt + (t - r) * slope;
        let a = rho / t;
        let m = (0..n).max_by(|&i, &j| u[i].abs().total_cmp(&u[j].abs())).unwrap();
        let b = (slope * t - rho) / (t * t) * u[m].signum();
        let mut y = *zt;
        let mut d = linalg::scalar(n, a);
        for i in 0..n {
            y[i] += a * u[i];
            d[i][m] += b * u[i];
        }
        Ok(Jet { value: y, d, j: slope * a.powi(n as i32 - 1) })
    }

    pub fn invert(&self, y: &Vector) -> Result<Vector> {
        let n = self.n;
        let v = linalg::sub(n, y, &self.dst_inner.c);
        let tp = linalg::sup_norm(n, &v);
        if tp > self.dst_outer.r * (1.0 + SLACK) {
            return Err(Error::OutsideImage("annulus transfer"));
        }
        let (r, rt) = (self.src_inner.r, self.dst_inner.r);
        let s = if tp <= rt { r / rt } else { (r + (tp - rt) / self.slope()) / tp };
        let mut x = self.src_inner.c;
        for i in 0..n {
            x[i] += s * v[i];
        }
        Ok(x)
    }
}

impl Homeo for AnnulusTransfer {
    fn dim(&self) -> usize {
        self.n
    }
    fn label(&self) -> String {
        "annulus transfer".into()
    }
    fn eval(&self, x: &Vector) -> Result<Jet> {
        AnnulusTransfer::eval(self, x)
    }
    fn invert(&self, y: &Vector) -> Result<Vector> {
        AnnulusTransfer::invert(self, y)
    }
}

/// Per-generation float radii shared by g_k and L_K.
#[derive(Clone, Debug)]
pub(crate) struct Radii {
    /// r_j for j = 0..=k
    pub r: Vec<f64>,
    /// r̃_j = r̂_j for j = 0..=k
    pub rt: Vec<f64>,
}

impl Radii {
    pub fn new(sys: &CantorSystem, k: usize) -> Self {
        Radii { r: (0..=k).map(|j| sys.radius_f(Family::A, j, false)).collect(), rt: (0..=k).map(|j| sys.r_hat_f(j)).collect() }
    }
}

pub(crate) fn sup_dist(n: usize, a: &Vector, b: &Vector) -> f64 {
    (0..n).fold(0.0, |m, i| m.max((a[i] - b[i]).abs()))
}

/// Which piece of g_k owns a point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GCell {
    /// Frame of generation `j` (1 ≤ j ≤ k) in Q'_{v(j)} \ Q_{v(j)}.
    Frame(MultiIndex),
    /// Linear part on Q_{v(k)}.
    Core(MultiIndex),
}

/// g_k: C_A-side cubes onto C_B-side cubes.
#[derive(Clone, Debug)]
pub struct GMap {
    pub sys: CantorSystem,
    pub k: usize,
    radii: Radii,
}

pub fn build_g(k: usize, sys: &CantorSystem) -> Result<GMap> {
    sys.check_k(k)?;
    Ok(GMap { sys: *sys, k, radii: Radii::new(sys, k) })
}

impl GMap {
    fn n(&self) -> usize {
        self.sys.n
    }

    /// Descend through the tiling Q'_{v(j)} ⊆ Q_{v(j-1)}; returns the
    /// owning cell and the annulus (or linear map) to apply.
    fn descend(&self, x: &Vector, forward: bool) -> Result<(GCell, AnnulusTransfer)> {
        let n = self.n();
        if linalg::sup_norm(n, x) > 1.0 + SLACK {
            return Err(if forward { Error::OutsideDomain("g_k") } else { Error::OutsideImage("g_k") });
        }
        let (r, rt) = (&self.radii.r, &self.radii.rt);
        let mut z = linalg::zero_vec();
        let mut zt = linalg::zero_vec();
        let mut idx = MultiIndex::root(Family::A);
        if self.k == 0 {
            let id = AnnulusTransfer::identity(n, z, 0.5, 1.0);
            return Ok((GCell::Core(idx), id));
        }
        for j in 1..=self.k {
            let here = if forward { &z } else { &zt };
            let code = (0..n).fold(0u32, |c, i| (c << 1) | u32::from(x[i] > here[i]));
            let v = self.sys.vertex(code);
            for i in 0..n {
                z[i] += 0.5 * r[j - 1] * v[i] as f64;
                zt[i] += 0.5 * rt[j - 1] * v[i] as f64;
            }
            idx = idx.child(code);
            let t = AnnulusTransfer {
                n,
                src_outer: CubeF { c: z, r: 0.5 * r[j - 1] },
                src_inner: CubeF { c: z, r: r[j] },
                dst_outer: CubeF { c: zt, r: 0.5 * rt[j - 1] },
                dst_inner: CubeF { c: zt, r: rt[j] },
            };
            let (c, inner) = if forward { (&z, r[j]) } else { (&zt, rt[j]) };
            if sup_dist(n, x, c) > inner {
                return Ok((GCell::Frame(idx), t));
            }
            if j == self.k {
                return Ok((GCell::Core(idx), t));
            }
        }
        unreachable!("loop returns at j = k")
    }

    pub fn cell(&self, x: &Vector) -> Result<GCell> {
        Ok(self.descend(x, true)?.0)
    }

    /// The annulus transfer owning the frame of a generation-j index.
    pub fn frame_transfer(&self, idx: &MultiIndex) -> Result<AnnulusTransfer> {
        let j = idx.generation();
        if j == 0 {
            return Err(Error::PrimedAtZero);
        }
        self.sys.check_k(j)?;
        let z = self.sys.center(&Index::Multi(MultiIndex { family: Family::A, codes: idx.codes.clone() }))?;
        let zt = self.sys.center(&Index::Multi(MultiIndex { family: Family::B, codes: idx.codes.clone() }))?;
        let rad = Radii::new(&self.sys, j);
        AnnulusTransfer::new(
            self.n(),
            CubeF { c: z.to_vector(), r: 0.5 * rad.r[j - 1] },
            CubeF { c: z.to_vector(), r: rad.r[j] },
            CubeF { c: zt.to_vector(), r: 0.5 * rad.rt[j - 1] },
            CubeF { c: zt.to_vector(), r: rad.rt[j] },
        )
    }
}

impl Homeo for GMap {
    fn dim(&self) -> usize {
        self.sys.n
    }
    fn label(&self) -> String {
        format!("g_{}", self.k)
    }
    fn eval(&self, x: &Vector) -> Result<Jet> {
        if self.k == 0 {
            if linalg::sup_norm(self.n(), x) > 1.0 + SLACK {
                return Err(Error::OutsideDomain("g_0"));
            }
            return Ok(Jet::identity(self.n(), x));
        }
        let (_, t) = self.descend(x, true)?;
        t.eval(x)
    }
    fn invert(&self, y: &Vector) -> Result<Vector> {
        if self.k == 0 {
            if linalg::sup_norm(self.n(), y) > 1.0 + SLACK {
                return Err(Error::OutsideImage("g_0"));
            }
            return Ok(*y);
        }
        let (_, t) = self.descend(y, false)?;
        t.invert(y)
    }
}

/// Box push: inside the box centered `c` with half-widths `half`, moves the
/// cube Q(c+p, eps) rigidly onto Q(c+q, eps), decaying linearly in the box
/// gauge to the identity on the box boundary.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Push {
    pub n: usize,
    pub c: Vector,
    pub half: Vector,
    pub p: Vector,
    pub q: Vector,
    pub eps: f64,
}

impl Push {
    /// Box with margin `margin` around the swept path of the cube.
    pub fn around(n: usize, from: Vector, to: Vector, eps: f64, margin: f64) -> Self {
        let mut c = linalg::zero_vec();
        let mut half = linalg::zero_vec();
        let mut p = linalg::zero_vec();
        let mut q = linalg::zero_vec();
        for i in 0..n {
            c[i] = 0.5 * (from[i] + to[i]);
            half[i] = 0.5 * (to[i] - from[i]).abs() + eps + margin;
            p[i] = from[i] - c[i];
            q[i] = to[i] - c[i];
        }
        Push { n, c, half, p, q, eps }
    }

    fn inside_box(&self, x: &Vector) -> bool {
        (0..self.n).all(|i| (x[i] - self.c[i]).abs() < self.half[i])
    }

    /// Gauge s ∈ [0,1] with respect to inner center `inner`, and the active (axis, sign).
    fn gauge(&self, xr: &Vector, inner: &Vector) -> (f64, usize, f64) {
        let mut best = (f64::NEG_INFINITY, 0, 1.0);
        for i in 0..self.n {
            for sigma in [-1.0, 1.0] {
                let den = self.half[i] - self.eps - sigma * inner[i];
                let s = (sigma * (xr[i] - inner[i]) - self.eps) / den;
                if s > best.0 {
                    best = (s, i, sigma);
                }
            }
        }
        best
    }

    pub fn eval(&self, x: &Vector) -> Jet {
        let n = self.n;
        if !self.inside_box(x) {
            return Jet::identity(n, x);
        }
        let xr = linalg::sub(n, x, &self.c);
        let (s, i, sigma) = self.gauge(&xr, &self.p);
        let mut y = *x;
        let delta = linalg::sub(n, &self.q, &self.p);
        if s <= 0.0 {
            for a in 0..n {
                y[a] += delta[a];
            }
            return Jet { value: y, d: linalg::identity(n), j: 1.0 };
        }
        let den = self.half[i] - self.eps - sigma * self.p[i];
        let mut d = linalg::identity(n);
        for a in 0..n {
            y[a] += (1.0 - s) * delta[a];
            d[a][i] -= delta[a] * sigma / den;
        }
        Jet { value: y, d, j: 1.0 - sigma * delta[i] / den }
    }

    pub fn invert(&self, y: &Vector) -> Vector {
        let n = self.n;
        if !self.inside_box(y) {
            return *y;
        }
        let yr = linalg::sub(n, y, &self.c);
        let (s, _, _) = self.gauge(&yr, &self.q);
        let s = s.max(0.0);
        let mut x = *y;
        for a in 0..n {
            x[a] -= (1.0 - s) * (self.q[a] - self.p[a]);
        }
        x
    }

    /// Both inner cubes strictly inside the box: the jacobian stays positive.
    pub fn is_admissible(&self) -> bool {
        (0..self.n).all(|i| self.p[i].abs() + self.eps < self.half[i] && self.q[i].abs() + self.eps < self.half[i])
    }

    pub fn bbox(&self) -> (Vector, Vector) {
        let mut lo = self.c;
        let mut hi = self.c;
        for i in 0..self.n {
            lo[i] -= self.half[i];
            hi[i] += self.half[i];
        }
        (lo, hi)
    }
}

/// Rearrangement of the 2^n corner children of Q(0,1) into the vertical
/// stack of the tower, as a sequence of box pushes. Children have half-side
/// `eps`; child with vertex code c ends centered at (0,…,0,t_{c+1}).
#[derive(Clone, Debug, Serialize)]
pub struct StackTemplate {
    pub n: usize,
    pub eps: f64,
    pub pushes: Vec<Push>,
}

impl StackTemplate {
    pub fn new(sys: &CantorSystem) -> Result<Self> {
        let n = sys.n;
        let eps = sys.r_hat_f(1);
        let margin = eps;
        let t = |slot: u32| sys.slot_offset(slot).to_f64();
        let corner = |code: u32| {
            let v = sys.vertex(code);
            let mut x = linalg::zero_vec();
            for i in 0..n {
                x[i] = 0.5 * v[i] as f64;
            }
            x
        };
        let mut pushes = Vec::new();
        // stage 1: vertical moves inside each column of two cubes
        for col in 0..(1u32 << (n - 1)) {
            let (lo, hi) = (2 * col, 2 * col + 1);
            let (t_lo, t_hi) = (t(lo + 1), t(hi + 1));
            let mv = |code: u32, target: f64| {
                let from = corner(code);
                let mut to = from;
                to[n - 1] = target;
                Push::around(n, from, to, eps, margin)
            };
            if t_lo < 0.5 - 3.0 * eps {
                pushes.push(mv(lo, t_lo));
                pushes.push(mv(hi, t_hi));
            } else {
                pushes.push(mv(hi, t_hi));
                pushes.push(mv(lo, t_lo));
            }
        }
        // stage 2: slide every cube to the axis at its own height
        for code in 0..sys.vertex_count() {
            let mut from = corner(code);
            from[n - 1] = t(code + 1);
            let mut to = linalg::zero_vec();
            to[n - 1] = from[n - 1];
            pushes.push(Push::around(n, from, to, eps, margin));
        }
        let tpl = StackTemplate { n, eps, pushes };
        tpl.check()?;
        Ok(tpl)
    }

    /// Glue boxes stay inside the parent and avoid every cube that is not being moved.
    fn check(&self) -> Result<()> {
        for (i, p) in self.pushes.iter().enumerate() {
            if !p.is_admissible() {
                return Err(Error::Constraint(format!("push {i} moves its cube outside its box")));
            }
            let (lo, hi) = p.bbox();
            if (0..self.n).any(|a| lo[a] <= -1.0 || hi[a] >= 1.0) {
                return Err(Error::Constraint(format!("push {i} box leaves the parent cube")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &Vector) -> Jet {
        let mut jet = Jet::identity(self.n, x);
        for p in &self.pushes {
            let step = p.eval(&jet.value);
            jet = jet.then(self.n, &step);
        }
        jet
    }

    pub fn invert(&self, y: &Vector) -> Vector {
        self.pushes.iter().rev().fold(*y, |x, p| p.invert(&x))
    }
}

/// L_K: C_B-side cubes onto tower cubes, Q̃_{v(i)} → Q̂_{w(v(i))} for i ≤ K.
#[derive(Clone, Debug)]
pub struct LMap {
    pub sys: CantorSystem,
    pub k: usize,
    pub template: StackTemplate,
    rt: Vec<f64>,
}

pub fn build_l(k: usize, sys: &CantorSystem) -> Result<LMap> {
    sys.check_k(k)?;
    Ok(LMap { sys: *sys, k, template: StackTemplate::new(sys)?, rt: Radii::new(sys, k).rt })
}

impl LMap {
    fn n(&self) -> usize {
        self.sys.n
    }

    /// Depth m of the B-side chain containing x, with centers z̃_{v(m)} and ẑ_{w(v(m))}.
    fn b_chain(&self, x: &Vector) -> (usize, Vector, Vector) {
        let n = self.n();
        let mut zt = linalg::zero_vec();
        let mut zh = linalg::zero_vec();
        let mut m = 0;
        for j in 1..=self.k {
            let code = (0..n).fold(0u32, |c, i| (c << 1) | u32::from(x[i] > zt[i]));
            let v = self.sys.vertex(code);
            let mut cand = zt;
            for i in 0..n {
                cand[i] += 0.5 * self.rt[j - 1] * v[i] as f64;
            }
            if sup_dist(n, x, &cand) > self.rt[j] {
                break;
            }
            zt = cand;
            zh[n - 1] += self.rt[j - 1] * self.sys.slot_offset(code + 1).to_f64();
            m = j;
        }
        (m, zt, zh)
    }

    /// Depth m of the tower chain containing y, with centers ẑ_{v̂(m)} and z̃_{w^{-1}(v̂(m))}.
    fn tower_chain(&self, y: &Vector) -> (usize, Vector, Vector) {
        let n = self.n();
        let mut zt = linalg::zero_vec();
        let mut zh = linalg::zero_vec();
        let mut m = 0;
        'gen: for j in 1..=self.k {
            let s = self.rt[j - 1];
            // slot from height: centers are spaced 2s/2^n apart
            let rel = (y[n - 1] - zh[n - 1]) / s;
            let guess = ((rel + 1.0) * (1u64 << n) as f64 / 2.0 + 0.5).floor() as i64;
            for slot in [guess, guess - 1, guess + 1] {
                if slot < 1 || slot > self.sys.vertex_count() as i64 {
                    continue;
                }
                let slot = slot as u32;
                let mut cand = zh;
                cand[n - 1] += s * self.sys.slot_offset(slot).to_f64();
                if sup_dist(n, y, &cand) <= self.rt[j] {
                    zh = cand;
                    let v = self.sys.vertex(slot - 1);
                    for i in 0..n {
                        zt[i] += 0.5 * s * v[i] as f64;
                    }
                    m = j;
                    continue 'gen;
                }
            }
            break;
        }
        (m, zh, zt)
    }

    pub fn tower_index_of(&self, y: &Vector) -> TowerIndex {
        let n = self.n();
        let mut t = TowerIndex::root();
        let mut zh = linalg::zero_vec();
        for j in 1..=self.k {
            let s = self.rt[j - 1];
            let mut found = None;
            for slot in 1..=self.sys.vertex_count() {
                let mut cand = zh;
                cand[n - 1] += s * self.sys.slot_offset(slot).to_f64();
                if sup_dist(n, y, &cand) <= self.rt[j] {
                    found = Some((slot, cand));
                    break;
                }
            }
            match found {
                Some((slot, c)) => {
                    t = t.child(slot);
                    zh = c;
                }
                None => break,
            }
        }
        t
    }
}

impl Homeo for LMap {
    fn dim(&self) -> usize {
        self.sys.n
    }
    fn label(&self) -> String {
        format!("L_{}", self.k)
    }
    fn eval(&self, x: &Vector) -> Result<Jet> {
        let n = self.n();
        if linalg::sup_norm(n, x) > 1.0 + SLACK {
            return Err(Error::OutsideDomain("L_K"));
        }
        let (m, zt, zh) = self.b_chain(x);
        if m == self.k {
            let mut y = *x;
            for i in 0..n {
                y[i] += zh[i] - zt[i];
            }
            return Ok(Jet { value: y, d: linalg::identity(n), j: 1.0 });
        }
        let s = self.rt[m];
        let mut u = linalg::zero_vec();
        for i in 0..n {
            u[i] = (x[i] - zt[i]) / s;
        }
        let tj = self.template.eval(&u);
        let mut y = zh;
        for i in 0..n {
            y[i] += s * tj.value[i];
        }
        Ok(Jet { value: y, d: tj.d, j: tj.j })
    }
    fn invert(&self, y: &Vector) -> Result<Vector> {
        let n = self.n();
        if linalg::sup_norm(n, y) > 1.0 + SLACK {
            return Err(Error::OutsideImage("L_K"));
        }
        let (m, zh, zt) = self.tower_chain(y);
        if m == self.k {
            let mut x = *y;
            for i in 0..n {
                x[i] += zt[i] - zh[i];
            }
            return Ok(x);
        }
        let s = self.rt[m];
        let mut u = linalg::zero_vec();
        for i in 0..n {
            u[i] = (y[i] - zh[i]) / s;
        }
        let v = self.template.invert(&u);
        let mut x = zt;
        for i in 0..n {
            x[i] += s * v[i];
        }
        Ok(x)
    }
}

/// Measured derivative sizes of g_k on the generation-k frames against the
/// frame expressions max{β_k/α_k, Δβ/Δα} and (Δβ/Δα)(β_k/α_k)^{n−1}, and
/// their reciprocals for g_k^{-1}. Each factor is the worst two-sided ratio
/// max(m/e, e/m) over all samples.
#[derive(Clone, Debug, Serialize)]
pub struct FrameComparability {
    pub k: usize,
    pub frames: usize,
    pub samples: usize,
    pub norm_expr: f64,
    pub jac_expr: f64,
    pub inv_norm_expr: f64,
    pub inv_jac_expr: f64,
    pub norm_factor: f64,
    pub jac_factor: f64,
    pub inv_norm_factor: f64,
    pub inv_jac_factor: f64,
    pub min_jacobian: f64,
}

impl FrameComparability {
    pub fn worst(&self) -> f64 {
        self.norm_factor.max(self.jac_factor).max(self.inv_norm_factor).max(self.inv_jac_factor)
    }
}

pub fn frame_comparability(sys: &CantorSystem, k: usize, per_frame: usize, seed: u64) -> Result<FrameComparability> {
    if k == 0 {
        return Err(Error::PrimedAtZero);
    }
    let n = sys.n;
    let g = build_g(k, sys)?;
    let (a0, a1) = (sys.alpha(k - 1).to_f64(), sys.alpha(k).to_f64());
    let (b0, b1) = (sys.beta_seq(k - 1).to_f64(), sys.beta_seq(k).to_f64());
    let (inner, slope) = (b1 / a1, (b0 - b1) / (a0 - a1));
    let norm_expr = inner.max(slope);
    let jac_expr = slope * inner.powi(n as i32 - 1);
    let inv_norm_expr = (1.0 / inner).max(1.0 / slope);
    let inv_jac_expr = 1.0 / jac_expr;
    let (r, rp) = (sys.radius_f(Family::A, k, false), sys.radius_f(Family::A, k, true));
    let two_sided = |m: f64, e: f64| (m / e).max(e / m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FrameComparability {
        k,
        frames: 0,
        samples: 0,
        norm_expr,
        jac_expr,
        inv_norm_expr,
        inv_jac_expr,
        norm_factor: 1.0,
        jac_factor: 1.0,
        inv_norm_factor: 1.0,
        inv_jac_factor: 1.0,
        min_jacobian: f64::INFINITY,
    };
    for m in sys.all_multi(k, Family::A) {
        let z = sys.center(&Index::Multi(m))?.to_vector();
        out.frames += 1;
        for _ in 0..per_frame {
            // a point at sup-distance t from z, on a random face of the shell
            let t = rng.gen_range(r..rp);
            let mut x = z;
            for c in x.iter_mut().take(n) {
                *c += rng.gen_range(-t..t);
            }
            let axis = rng.gen_range(0..n);
            x[axis] = z[axis] + if rng.gen_bool(0.5) { t } else { -t };
            let jet = g.eval(&x)?;
            let inv = linalg::inverse(n, &jet.d).ok_or(Error::NonPositiveJacobian(jet.j))?;
            out.norm_factor = out.norm_factor.max(two_sided(linalg::op_norm(n, &jet.d), norm_expr));
            out.jac_factor = out.jac_factor.max(two_sided(jet.j, jac_expr));
            out.inv_norm_factor = out.inv_norm_factor.max(two_sided(linalg::op_norm(n, &inv), inv_norm_expr));
            out.inv_jac_factor = out.inv_jac_factor.max(two_sided(1.0 / jet.j, inv_jac_expr));
            out.min_jacobian = out.min_jacobian.min(jet.j);
            out.samples += 1;
        }
    }
    Ok(out)
}

/// Round trips both ways, jacobian sign, and jumps across cell faces.
#[derive(Clone, Debug, Serialize)]
pub struct RoundTripReport {
    pub label: String,
    pub samples: usize,
    /// max |f⁻¹(f(x)) − x|∞
    pub forward_error: f64,
    /// max |f(f⁻¹(y)) − y|∞
    pub backward_error: f64,
    pub min_jacobian: f64,
    pub face_points: usize,
    /// faces where |f(x+ηe) − f(x−ηe)| exceeds 2η·|Df| + 1e-10
    pub jumps: usize,
}

impl RoundTripReport {
    pub fn max_error(&self) -> f64 {
        self.forward_error.max(self.backward_error)
    }
}

/// Points on the boundaries of Q, Q′ (both families) and of the tower
/// cubes, generations 1..=k.
pub fn face_points(sys: &CantorSystem, k: usize, count: usize, seed: u64) -> Result<Vec<Vector>> {
    let n = sys.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let j = rng.gen_range(1..=k.max(1));
        let (idx, family) = match rng.gen_range(0..3) {
            0 => (Index::Multi(random_multi(sys, j, Family::A, &mut rng)), Family::A),
            1 => (Index::Multi(random_multi(sys, j, Family::B, &mut rng)), Family::B),
            _ => {
                let mut t = TowerIndex::root();
                for _ in 0..j {
                    t = t.child(rng.gen_range(1..=sys.vertex_count()));
                }
                (Index::Tower(t), Family::Tower)
            }
        };
        let r = sys.radius_f(family, j, rng.gen_bool(0.5));
        let mut x = sys.center(&idx)?.to_vector();
        let face = rng.gen_range(0..n);
        for (i, c) in x.iter_mut().enumerate().take(n) {
            *c += if i == face {
                if rng.gen_bool(0.5) {
                    r
                } else {
                    -r
                }
            } else {
                rng.gen_range(-r..r)
            };
            *c = c.clamp(-1.0, 1.0);
        }
        out.push(x);
    }
    Ok(out)
}

fn random_multi(sys: &CantorSystem, k: usize, family: Family, rng: &mut ChaCha8Rng) -> MultiIndex {
    let mut m = MultiIndex::root(family);
    for _ in 0..k {
        m = m.child(rng.gen_range(0..sys.vertex_count()));
    }
    m
}

pub fn round_trip_check(map: &dyn Homeo, samples: &[Vector], faces: &[Vector], eta: f64) -> Result<RoundTripReport> {
    let n = map.dim();
    let mut rep = RoundTripReport {
        label: map.label(),
        samples: samples.len(),
        forward_error: 0.0,
        backward_error: 0.0,
        min_jacobian: f64::INFINITY,
        face_points: faces.len(),
        jumps: 0,
    };
    for x in samples {
        let jet = map.eval(x)?;
        rep.min_jacobian = rep.min_jacobian.min(jet.j);
        let back = map.invert(&jet.value)?;
        rep.forward_error = rep.forward_error.max(linalg::sup_norm(n, &linalg::sub(n, &back, x)));
        // x doubles as a target point
        let pre = map.invert(x)?;
        let again = map.apply(&pre)?;
        rep.backward_error = rep.backward_error.max(linalg::sup_norm(n, &linalg::sub(n, &again, x)));
    }
    for x in faces {
        for a in 0..n {
            let (mut lo, mut hi) = (*x, *x);
            lo[a] = (lo[a] - eta).max(-1.0);
            hi[a] = (hi[a] + eta).min(1.0);
            let (jl, jh) = (map.eval(&lo)?, map.eval(&hi)?);
            rep.min_jacobian = rep.min_jacobian.min(jl.j).min(jh.j);
            let lip = linalg::op_norm(n, &jl.d).max(linalg::op_norm(n, &jh.d));
            let jump = linalg::sup_norm(n, &linalg::sub(n, &jh.value, &jl.value));
            if jump > 2.0 * eta * lip * (1.0 + 1e-6) + 1e-10 {
                rep.jumps += 1;
            }
        }
    }
    Ok(rep)
}

/// Empirical Lipschitz bounds from sampled pairs.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BilipBounds {
    pub lower: f64,
    pub upper: f64,
}

impl BilipBounds {
    pub fn ratio(&self) -> f64 {
        self.upper / self.lower
    }
}

/// Min/max of |f(x)−f(x′)|/|x−x′| over `samples` pairs: half global pairs,
/// half local pairs at scales down to 1e-6 so that every cell's own
/// derivative is seen.
pub fn bilip_estimate(map: &dyn Homeo, samples: usize, seed: u64) -> Result<BilipBounds> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    let n = map.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lower = f64::INFINITY;
    let mut upper = 0.0f64;
    let mut done = 0;
    while done < samples {
        let x = uniform_point(n, &mut rng);
        let xp = if done % 2 == 0 {
            uniform_point(n, &mut rng)
        } else {
            let scale = 10f64.powf(-rng.gen_range(1.0..6.0));
            let mut p = x;
            for c in p.iter_mut().take(n) {
                *c = (*c + scale * rng.gen_range(-1.0..1.0)).clamp(-1.0, 1.0);
            }
            p
        };
        let dx = linalg::euclid(n, &linalg::sub(n, &x, &xp));
        if dx < 1e-9 {
            continue;
        }
        let fy = map.apply(&x)?;
        let fyp = map.apply(&xp)?;
        let q = linalg::euclid(n, &linalg::sub(n, &fy, &fyp)) / dx;
        lower = lower.min(q);
        upper = upper.max(q);
        done += 1;
    }
    Ok(BilipBounds { lower, upper })
}

pub fn uniform_point(n: usize, rng: &mut impl Rng) -> Vector {
    let mut x = [0.0; MAXN];
    for c in x.iter_mut().take(n) {
        *c = rng.gen_range(-1.0..1.0);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_slice;

    fn fd_derivative(map: &dyn Homeo, x: &Vector, h: f64) -> Matrix {
        let n = map.dim();
        let mut d = [[0.0; MAXN]; MAXN];
        for j in 0..n {
            let mut a = *x;
            let mut b = *x;
            a[j] += h;
            b[j] -= h;
            let fa = map.apply(&a).unwrap();
            let fb = map.apply(&b).unwrap();
            for i in 0..n {
                d[i][j] = (fa[i] - fb[i]) / (2.0 * h);
            }
        }
        d
    }

    #[test]
    fn annulus_hand_value() {
        let o = |r| CubeF { c: linalg::zero_vec(), r };
        let t = AnnulusTransfer::new(3, o(1.0), o(0.5), o(1.0), o(0.25)).unwrap();
        let y = t.eval(&from_slice(&[0.75, 0.0, 0.0])).unwrap().value;
        assert!((y[0] - 0.625).abs() < 1e-15 && y[1] == 0.0);
        let b = t.eval(&from_slice(&[0.5, 0.3, -0.1])).unwrap().value;
        assert!((linalg::sup_norm(3, &b) - 0.25).abs() < 1e-15);
        let id = AnnulusTransfer::identity(3, linalg::zero_vec(), 0.5, 1.0);
        let j = id.eval(&from_slice(&[0.7, -0.2, 0.6])).unwrap();
        assert!((j.value[0] - 0.7).abs() < 1e-15 && (j.j - 1.0).abs() < 1e-15);
        assert!(t.eval(&from_slice(&[1.5, 0.0, 0.0])).is_err());
    }

    #[test]
    fn g1_examples() {
        let sys = CantorSystem::new(3, 4).unwrap();
        let g = build_g(1, &sys).unwrap();
        let z = from_slice(&[0.5, 0.5, 0.5]);
        let j = g.eval(&z).unwrap();
        assert_eq!(j.value, z);
        assert!((j.d[0][0] - 2.0 / 17.0).abs() < 1e-15);
        assert!((j.j - (2.0f64 / 17.0).powi(3)).abs() < 1e-15);
        let fd = fd_derivative(&g, &from_slice(&[0.51, 0.49, 0.52]), 1e-6);
        assert!((fd[0][0] - 2.0 / 17.0).abs() < 1e-6);
    }

    #[test]
    fn jets_match_finite_differences_and_determinants() {
        let sys = CantorSystem::new(3, 4).unwrap();
        let maps: Vec<Box<dyn Homeo>> = vec![Box::new(build_g(2, &sys).unwrap()), Box::new(build_l(2, &sys).unwrap())];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for map in &maps {
            for _ in 0..2000 {
                let x = uniform_point(3, &mut rng);
                let jet = map.eval(&x).unwrap();
                assert!(jet.j > 0.0);
                assert!((linalg::det(3, &jet.d) - jet.j).abs() <= 1e-12 * jet.j.abs().max(1e-300) * 10.0);
                let fd = fd_derivative(map.as_ref(), &x, 1e-7);
                // skip points within a step of a cell face
                let fd2 = fd_derivative(map.as_ref(), &x, 5e-8);
                let agree = (0..3).all(|i| (0..3).all(|j| (fd[i][j] - fd2[i][j]).abs() < 1e-5));
                if agree {
                    for i in 0..3 {
                        for j in 0..3 {
                            let scale = linalg::frobenius(3, &jet.d).max(1.0);
                            assert!((fd[i][j] - jet.d[i][j]).abs() <= 1e-4 * scale, "{} at {:?}", map.label(), x);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn round_trips() {
        let sys = CantorSystem::new(2, 3).unwrap();
        let g = build_g(3, &sys).unwrap();
        let l = build_l(3, &sys).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20000 {
            let y = uniform_point(2, &mut rng);
            for map in [&g as &dyn Homeo, &l] {
                let x = map.invert(&y).unwrap();
                let back = map.apply(&x).unwrap();
                assert!(linalg::sup_norm(2, &linalg::sub(2, &back, &y)) < 1e-12);
            }
        }
    }

    #[test]
    fn l_moves_b_cubes_onto_tower_cubes() {
        for (n, beta) in [(2, 3), (3, 4)] {
            let sys = CantorSystem::new(n, beta).unwrap();
            let l = build_l(2, &sys).unwrap();
            for m in sys.all_multi(2, Family::B) {
                let b = sys.cube(&Index::Multi(m.clone()), false).unwrap();
                let t = sys.cube(&Index::Tower(crate::geometry::index_map_w(&m)), false).unwrap();
                let (bc, tc) = (b.center_f(), t.center_f());
                let r = b.half.to_f64();
                // corners of the B cube land on corners of the tower cube
                for corner in 0..(1u32 << n) {
                    let mut x = bc;
                    let mut want = tc;
                    for i in 0..n {
                        let s = if corner >> i & 1 == 1 { r } else { -r };
                        x[i] += s;
                        want[i] += s;
                    }
                    let y = l.apply(&x).unwrap();
                    assert!(sup_dist(n, &y, &want) < 1e-14);
                }
            }
        }
    }

    #[test]
    fn push_is_identity_on_its_box_boundary() {
        let p = Push::around(2, from_slice(&[0.5, -0.5]), from_slice(&[0.5, 0.25]), 0.05, 0.05);
        assert!(p.is_admissible());
        let (lo, hi) = p.bbox();
        for t in [0.0, 0.3, 0.77, 1.0] {
            let x = from_slice(&[lo[0] + t * (hi[0] - lo[0]), hi[1] - 1e-15]);
            let y = p.eval(&x).value;
            assert!(sup_dist(2, &x, &y) < 1e-12);
        }
        let inside = p.eval(&from_slice(&[0.52, -0.48])).value;
        assert!(sup_dist(2, &inside, &from_slice(&[0.52, 0.27])) < 1e-15);
    }

    #[test]
    fn frame_factors_at_generation_one() {
        // n = 2, β = 3: the tangential stretch runs from β_0/α_0 = 1 at the
        // outer face to β_1/α_1 = 2/9 at the inner one, so the jacobian is
        // off by exactly 9/2 at the outer face.
        let sys = CantorSystem::new(2, 3).unwrap();
        let rep = frame_comparability(&sys, 1, 2000, 5).unwrap();
        assert_eq!(rep.frames, 4);
        assert!(rep.min_jacobian > 0.0);
        assert!(rep.norm_factor <= 4.0, "{rep:?}");
        assert!((rep.jac_factor - 4.5).abs() < 0.05, "{rep:?}");
    }

    /// Shifts the half x_0 > 0 by 1e-6: invertible but torn along x_0 = 0.
    struct Torn;

    impl Homeo for Torn {
        fn dim(&self) -> usize {
            2
        }
        fn label(&self) -> String {
            "torn".into()
        }
        fn eval(&self, x: &Vector) -> Result<Jet> {
            let mut j = Jet::identity(2, x);
            if x[0] > 0.0 {
                j.value[1] += 1e-6;
            }
            Ok(j)
        }
        fn invert(&self, y: &Vector) -> Result<Vector> {
            let mut x = *y;
            if y[0] > 0.0 {
                x[1] -= 1e-6;
            }
            Ok(x)
        }
    }

    #[test]
    fn round_trip_check_sees_tears() {
        let sys = CantorSystem::new(2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vector> = (0..2000).map(|_| uniform_point(2, &mut rng)).collect();
        let faces = face_points(&sys, 2, 400, 3).unwrap();
        let rep = round_trip_check(&build_g(2, &sys).unwrap(), &pts, &faces, 1e-12).unwrap();
        assert!(rep.max_error() < 1e-12 && rep.jumps == 0 && rep.min_jacobian > 0.0, "{rep:?}");
        let seam: Vec<Vector> = (0..10).map(|i| from_slice(&[0.0, -0.9 + 0.2 * i as f64])).collect();
        assert_eq!(round_trip_check(&Torn, &pts, &seam, 1e-12).unwrap().jumps, 10);
    }
}
