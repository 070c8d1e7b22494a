//! Cantor set C_A, null Cantor set C_B and the Cantor tower: sequences,
//! addresses, centers, cubes and exact volumes.
//!
//! A generation-k cell of C_A or C_B is addressed by k vertices of
//! {-1,1}^n. Vertices are stored as lexicographic codes (coordinate 0 most
//! significant, -1 before +1), so the bijection w onto tower slots is
//! simply `code + 1`.

use serde::Serialize;

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::linalg::{Vector, MAXN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CantorSystem {
    pub n: usize,
    pub beta: u32,
    pub k_max: usize,
}

impl CantorSystem {
    pub fn new(n: usize, beta: u32) -> Result<Self> {
        Self::with_k_max(n, beta, 8)
    }

    pub fn with_k_max(n: usize, beta: u32, k_max: usize) -> Result<Self> {
        if !(2..=MAXN).contains(&n) {
            return Err(Error::InvalidSystem(format!("dimension n = {n} must lie in 2..={MAXN}")));
        }
        if (beta as usize) < n + 1 {
            return Err(Error::InvalidSystem(format!("beta = {beta} violates beta >= n+1 = {}", n + 1)));
        }
        Ok(CantorSystem { n, beta, k_max })
    }

    pub fn check_k(&self, k: usize) -> Result<()> {
        if k > self.k_max {
            Err(Error::GenerationCap { k, k_max: self.k_max })
        } else {
            Ok(())
        }
    }

    /// α_k = ½(1 + 2^{-kβ}).
    pub fn alpha(&self, k: usize) -> Dyadic {
        (Dyadic::one() + Dyadic::pow2(-(k as i64) * self.beta as i64)).half()
    }

    /// β_k = 2^{-kβ}.
    pub fn beta_seq(&self, k: usize) -> Dyadic {
        Dyadic::pow2(-(k as i64) * self.beta as i64)
    }

    /// r_k = 2^{-k} α_k.
    pub fn r(&self, k: usize) -> Dyadic {
        self.alpha(k).shl(-(k as i64))
    }

    /// r̃_k = r̂_k = 2^{-k} β_k.
    pub fn r_hat(&self, k: usize) -> Dyadic {
        self.beta_seq(k).shl(-(k as i64))
    }

    pub fn r_hat_f(&self, k: usize) -> f64 {
        self.r_hat(k).to_f64()
    }

    pub fn sequences(&self, k: usize) -> Result<SequenceValues> {
        self.check_k(k)?;
        let primed = |s: Dyadic| if k == 0 { None } else { Some(s) };
        let kk = k as i64;
        let prev = k.saturating_sub(1);
        Ok(SequenceValues {
            k,
            alpha: self.alpha(k),
            beta: self.beta_seq(k),
            r: self.r(k),
            r_prime: primed(self.alpha(prev).shl(-kk)),
            r_tilde: self.r_hat(k),
            r_tilde_prime: primed(self.beta_seq(prev).shl(-kk)),
            r_hat: self.r_hat(k),
            r_hat_prime: primed(self.beta_seq(prev).shl(-kk)),
        })
    }

    /// Radius of the generation-k cube of a family.
    pub fn radius(&self, family: Family, k: usize, primed: bool) -> Result<Dyadic> {
        let s = self.sequences(k)?;
        let pick = |u: Dyadic, p: Option<Dyadic>| if primed { p.ok_or(Error::PrimedAtZero) } else { Ok(u) };
        match family {
            Family::A => pick(s.r, s.r_prime),
            Family::B => pick(s.r_tilde, s.r_tilde_prime),
            Family::Tower => pick(s.r_hat, s.r_hat_prime),
        }
    }

    pub fn radius_f(&self, family: Family, k: usize, primed: bool) -> f64 {
        self.radius(family, k, primed).expect("radius within cap").to_f64()
    }

    /// Σ over generation-k cubes of (2r_k)^n, which equals 2^n α_k^n.
    pub fn generation_volume(&self, k: usize, family: Family) -> Result<Dyadic> {
        self.check_k(k)?;
        let side = self.radius(family, k, false)?.shl(1);
        Ok(side.powi(self.n as u32).shl((self.n * k) as i64))
    }

    /// |Q'_{v(k)} \ Q_{v(k)}| = (2r'_k)^n − (2r_k)^n for one frame.
    pub fn frame_volume(&self, k: usize, family: Family) -> Result<Dyadic> {
        let outer = self.radius(family, k, true)?.shl(1).powi(self.n as u32);
        let inner = self.radius(family, k, false)?.shl(1).powi(self.n as u32);
        Ok(outer - inner)
    }

    /// The comparison quantity 2^{-nk}(α_{k-1} − α_k) α_k^{n-1} for frames of C_A.
    pub fn frame_comparison(&self, k: usize) -> Result<Dyadic> {
        if k == 0 {
            return Err(Error::PrimedAtZero);
        }
        self.check_k(k)?;
        let a = self.alpha(k);
        let d = self.alpha(k - 1) - &a;
        Ok((d * a.powi(self.n as u32 - 1)).shl(-((self.n * k) as i64)))
    }

    pub fn vertex_count(&self) -> u32 {
        1 << self.n
    }

    /// Sign vector of a lexicographic vertex code.
    pub fn vertex(&self, code: u32) -> [i32; MAXN] {
        let mut v = [0; MAXN];
        for (i, vi) in v.iter_mut().enumerate().take(self.n) {
            *vi = if code >> (self.n - 1 - i) & 1 == 1 { 1 } else { -1 };
        }
        v
    }

    pub fn vertex_code(&self, signs: &[i32]) -> u32 {
        signs.iter().take(self.n).fold(0, |c, &s| (c << 1) | u32::from(s > 0))
    }

    /// Tower step coefficient t_j = −1 + (2j−1)/2^n of slot j (1-based).
    pub fn slot_offset(&self, slot: u32) -> Dyadic {
        Dyadic::new(2 * slot as i64 - 1, -(self.n as i64)) - Dyadic::one()
    }

    pub fn center(&self, idx: &Index) -> Result<Point> {
        self.check_k(idx.generation())?;
        let mut c = vec![Dyadic::zero(); self.n];
        match idx {
            Index::Multi(m) => {
                let fam = m.family;
                for (j, &code) in m.codes.iter().enumerate() {
                    let r = match fam {
                        Family::A => self.r(j),
                        Family::B => self.r_hat(j),
                        Family::Tower => return Err(Error::FamilyMismatch("vertex index used for the tower")),
                    };
                    let step = r.half();
                    let v = self.vertex(code);
                    for (i, ci) in c.iter_mut().enumerate() {
                        *ci = if v[i] > 0 { &*ci + &step } else { &*ci - &step };
                    }
                }
            }
            Index::Tower(t) => {
                for (j, &slot) in t.slots.iter().enumerate() {
                    let step = self.r_hat(j) * self.slot_offset(slot);
                    c[self.n - 1] = &c[self.n - 1] + &step;
                }
            }
        }
        Ok(Point(c))
    }

    pub fn cube(&self, idx: &Index, primed: bool) -> Result<Cube> {
        let k = idx.generation();
        if primed && k == 0 {
            return Err(Error::PrimedAtZero);
        }
        let center = self.center(idx)?;
        let half = self.radius(idx.family(), k, primed)?;
        Ok(Cube { center, half })
    }

    /// Deepest index of generation ≤ max_k whose closed unprimed cube
    /// contains x; `None` if x is in no generation-1 cube.
    pub fn locate(&self, x: &Point, family: Family, max_k: usize) -> Option<Index> {
        let max_k = max_k.min(self.k_max);
        let mut idx = match family {
            Family::Tower => Index::Tower(TowerIndex::root()),
            f => Index::Multi(MultiIndex::root(f)),
        };
        for k in 1..=max_k {
            let parent = self.center(&idx).ok()?;
            let child = match &idx {
                Index::Multi(m) => {
                    let signs: Vec<i32> = (0..self.n).map(|i| if x.0[i] > parent.0[i] { 1 } else { -1 }).collect();
                    Index::Multi(m.child(self.vertex_code(&signs)))
                }
                Index::Tower(t) => {
                    // slots are increasing in x_n; the first closed match is the smallest index
                    let r = self.r_hat(k);
                    let mut found = None;
                    for slot in 1..=self.vertex_count() {
                        let cand = Index::Tower(t.child(slot));
                        let c = self.center(&cand).ok()?;
                        if (Cube { center: c, half: r.clone() }).contains(x) {
                            found = Some(cand);
                            break;
                        }
                    }
                    match found {
                        Some(f) => f,
                        None => break,
                    }
                }
            };
            let cube = self.cube(&child, false).ok()?;
            if !cube.contains(x) {
                break;
            }
            idx = child;
        }
        if idx.generation() == 0 {
            None
        } else {
            Some(idx)
        }
    }

    /// All generation-k vertex indices of a family in lexicographic order.
    pub fn all_multi(&self, k: usize, family: Family) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex::root(family)];
        for _ in 0..k {
            out = out.iter().flat_map(|m| (0..self.vertex_count()).map(move |c| m.child(c))).collect();
        }
        out
    }

    pub fn all_tower(&self, k: usize) -> Vec<TowerIndex> {
        let mut out = vec![TowerIndex::root()];
        for _ in 0..k {
            out = out.iter().flat_map(|t| (1..=self.vertex_count()).map(move |s| t.child(s))).collect();
        }
        out
    }

    pub fn path_string(&self, m: &MultiIndex) -> String {
        m.codes.iter().map(|&c| self.vertex(c)[..self.n].iter().map(|&s| if s > 0 { '+' } else { '-' }).collect::<String>()).collect::<Vec<_>>().join("/")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SequenceValues {
    pub k: usize,
    pub alpha: Dyadic,
    pub beta: Dyadic,
    pub r: Dyadic,
    pub r_prime: Option<Dyadic>,
    pub r_tilde: Dyadic,
    pub r_tilde_prime: Option<Dyadic>,
    pub r_hat: Dyadic,
    pub r_hat_prime: Option<Dyadic>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Family {
    /// C_A, positive measure.
    A,
    /// C_B, null.
    B,
    /// The tower C_B^T.
    Tower,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    pub family: Family,
    pub codes: Vec<u32>,
}

impl MultiIndex {
    pub fn root(family: Family) -> Self {
        MultiIndex { family, codes: Vec::new() }
    }

    pub fn child(&self, code: u32) -> Self {
        let mut codes = self.codes.clone();
        codes.push(code);
        MultiIndex { family: self.family, codes }
    }

    pub fn prefix(&self, k: usize) -> Self {
        MultiIndex { family: self.family, codes: self.codes[..k].to_vec() }
    }

    pub fn generation(&self) -> usize {
        self.codes.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TowerIndex {
    pub slots: Vec<u32>,
}

impl TowerIndex {
    pub fn root() -> Self {
        TowerIndex { slots: Vec::new() }
    }

    pub fn child(&self, slot: u32) -> Self {
        let mut slots = self.slots.clone();
        slots.push(slot);
        TowerIndex { slots }
    }

    pub fn prefix(&self, k: usize) -> Self {
        TowerIndex { slots: self.slots[..k].to_vec() }
    }

    pub fn parent(&self) -> Self {
        self.prefix(self.slots.len().saturating_sub(1))
    }

    pub fn generation(&self) -> usize {
        self.slots.len()
    }

    pub fn last(&self) -> u32 {
        *self.slots.last().expect("non-root tower index")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Index {
    Multi(MultiIndex),
    Tower(TowerIndex),
}

impl Index {
    pub fn generation(&self) -> usize {
        match self {
            Index::Multi(m) => m.generation(),
            Index::Tower(t) => t.generation(),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Index::Multi(m) => m.family,
            Index::Tower(_) => Family::Tower,
        }
    }
}

/// The bijection w: vertex code → slot, applied component-wise.
pub fn index_map_w(m: &MultiIndex) -> TowerIndex {
    TowerIndex { slots: m.codes.iter().map(|c| c + 1).collect() }
}

pub fn index_map_w_inv(t: &TowerIndex, family: Family) -> MultiIndex {
    MultiIndex { family, codes: t.slots.iter().map(|s| s - 1).collect() }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Point(pub Vec<Dyadic>);

impl Point {
    pub fn origin(n: usize) -> Self {
        Point(vec![Dyadic::zero(); n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_vector(&self) -> Vector {
        let mut v = [0.0; MAXN];
        for (vi, c) in v.iter_mut().zip(&self.0) {
            *vi = c.to_f64();
        }
        v
    }

    pub fn from_f64(x: &[f64]) -> Self {
        Point(x.iter().map(|&v| Dyadic::from_f64(v)).collect())
    }

    pub fn sup_dist(&self, other: &Point) -> Dyadic {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(Dyadic::zero(), Ord::max)
    }
}

/// Closed sup-norm ball Q(center, half).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cube {
    pub center: Point,
    pub half: Dyadic,
}

impl Cube {
    pub fn contains(&self, x: &Point) -> bool {
        self.center.sup_dist(x) <= self.half
    }

    pub fn contains_cube(&self, other: &Cube) -> bool {
        let slack = &self.half - &other.half;
        !slack.is_negative() && self.center.sup_dist(&other.center) <= slack
    }

    /// Interiors disjoint iff some axis separates the cubes.
    pub fn interiors_disjoint(&self, other: &Cube) -> bool {
        let reach = &self.half + &other.half;
        self.center.0.iter().zip(&other.center.0).any(|(a, b)| (a - b).abs() >= reach)
    }

    pub fn volume(&self) -> Dyadic {
        self.half.shl(1).powi(self.center.dim() as u32)
    }

    pub fn center_f(&self) -> Vector {
        self.center.to_vector()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(n: usize, beta: u32) -> CantorSystem {
        CantorSystem::with_k_max(n, beta, 10).unwrap()
    }

    #[test]
    fn sequence_examples() {
        let s = sys(3, 4);
        let v0 = s.sequences(0).unwrap();
        assert_eq!(v0.alpha, Dyadic::one());
        assert_eq!(v0.r, Dyadic::one());
        assert!(v0.r_prime.is_none());
        let v1 = s.sequences(1).unwrap();
        assert_eq!(v1.alpha, Dyadic::frac(17, 5));
        assert_eq!(v1.r, Dyadic::frac(17, 6));
        assert_eq!(v1.r_hat, Dyadic::pow2(-5));
        assert_eq!(s.beta_seq(2), Dyadic::pow2(-8));
        assert!(s.beta_seq(1) > Dyadic::pow2(3) * s.beta_seq(2));
        assert_eq!(s.sequences(11).unwrap_err(), Error::GenerationCap { k: 11, k_max: 10 });
    }

    #[test]
    fn centers_match_direct_sum() {
        let s = sys(3, 4);
        let v1 = MultiIndex::root(Family::A).child(7);
        assert_eq!(s.center(&Index::Multi(v1.clone())).unwrap(), Point(vec![Dyadic::frac(1, 1); 3]));
        let t1 = Index::Tower(TowerIndex::root().child(1));
        let c = s.center(&t1).unwrap();
        assert_eq!(c.0[2], Dyadic::frac(-7, 3));
        // two-step example: ½ − ½·r_1 = ½ − 17/128 = 47/128
        let v2 = Index::Multi(v1.child(0));
        let direct = Dyadic::frac(1, 1) - s.r(1).half();
        assert_eq!(direct, Dyadic::frac(47, 7));
        assert_eq!(s.center(&v2).unwrap(), Point(vec![direct; 3]));
    }

    #[test]
    fn children_nest_and_tile() {
        for (n, beta) in [(2, 3), (3, 4)] {
            let s = sys(n, beta);
            for fam in [Family::A, Family::B] {
                for m in s.all_multi(2, fam) {
                    let child = s.cube(&Index::Multi(m.clone()), false).unwrap();
                    let parent = s.cube(&Index::Multi(m.prefix(1)), false).unwrap();
                    let primed = s.cube(&Index::Multi(m.clone()), true).unwrap();
                    assert!(parent.contains_cube(&primed));
                    assert!(primed.contains_cube(&child));
                }
            }
            // primed generation-k cubes tile their parent's unprimed cube
            for k in 1..=3 {
                let total: Dyadic = s.all_multi(k, Family::A).iter().map(|m| s.cube(&Index::Multi(m.clone()), true).unwrap().volume()).sum();
                let parent_total = s.generation_volume(k - 1, Family::A).unwrap();
                assert_eq!(total, parent_total);
            }
        }
    }

    #[test]
    fn locate_follows_the_positive_branch() {
        let s = sys(3, 4);
        // the center of Q_{v(1)} sits between its children, at sup-distance ½r_1 > r_2
        let x = Point(vec![Dyadic::frac(1, 1); 3]);
        let idx = s.locate(&x, Family::A, 5).unwrap();
        assert_eq!(idx, Index::Multi(MultiIndex { family: Family::A, codes: vec![7] }));
        let deep = MultiIndex { family: Family::A, codes: vec![7; 5] };
        let z5 = s.center(&Index::Multi(deep.clone())).unwrap();
        assert_eq!(s.locate(&z5, Family::A, 5).unwrap(), Index::Multi(deep));
        let t = TowerIndex { slots: vec![3, 8, 1] };
        let zt = s.center(&Index::Tower(t.clone())).unwrap();
        assert_eq!(s.locate(&zt, Family::Tower, 3).unwrap(), Index::Tower(t));
        assert!(s.locate(&Point::origin(3), Family::A, 5).is_none());
        // closed cube boundary
        let edge = Point(vec![Dyadic::frac(1, 1) + s.r(1); 3]);
        assert_eq!(s.locate(&edge, Family::A, 1).unwrap().generation(), 1);
    }

    #[test]
    fn w_is_a_bijection() {
        let s = sys(3, 4);
        let mut seen = std::collections::HashSet::new();
        for m in s.all_multi(2, Family::A) {
            let t = index_map_w(&m);
            assert_eq!(index_map_w_inv(&t, Family::A), m);
            assert!(seen.insert(t));
        }
        assert_eq!(seen.len(), 64);
        assert_eq!(s.vertex_code(&[-1, -1, -1]) + 1, 1);
        assert_eq!(s.path_string(&MultiIndex { family: Family::A, codes: vec![7, 2] }), "+++/-+-");
    }

    #[test]
    fn rejects_small_beta() {
        assert!(CantorSystem::new(3, 3).is_err());
        assert!(CantorSystem::new(2, 3).is_ok());
    }
}
