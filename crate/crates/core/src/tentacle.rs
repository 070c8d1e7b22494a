//! Tentacle parameters, exact routed tentacles and the nesting relation.
//!
//! Every tentacle lives in the (x_1, x_n) plane times a transverse box: all
//! tower heads sit on the x_n axis and bodies leave their head through the
//! face x_1 = r̂_k. A generation-k route runs right from its head, jogs
//! vertically onto its lane inside the parent head (lane offset
//! o = b_{k−1}·t_slot from the parent centerline), then follows the parent
//! route at that offset. S-jogs have opposite turns, so the offset lane has
//! the parent's length, and the child ends one jog-length before the parent.

use std::collections::HashMap;

use serde::Serialize;

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::geometry::{CantorSystem, Index, TowerIndex};
use crate::tube::Tube;

#[derive(Clone, Debug, Serialize)]
pub struct GenParams {
    pub k: usize,
    pub a: Dyadic,
    pub c: Dyadic,
    pub b: Dyadic,
    pub d: Dyadic,
    pub a_tilde: Dyadic,
    pub c_tilde: Dyadic,
    pub delta: f64,
    pub measured_energy: Option<f64>,
    pub energy_error: Option<f64>,
    pub budget_met: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TentacleParams {
    pub sys: CantorSystem,
    pub gens: Vec<GenParams>,
}

/// (a_k, c_k, ã_k, c̃_k) with a_k = 1 − Σ_{0≤i≤k} r̂_{i+2}, c_k = 1 − Σ_{0≤i≤k−1} r̂_{i+2}.
pub fn default_axis_params(k: usize, sys: &CantorSystem) -> Result<(Dyadic, Dyadic, Dyadic, Dyadic)> {
    if k == 0 {
        return Err(Error::InvalidArgument("tentacles start at generation 1".into()));
    }
    // sums run from i = 0, so c_1 = 1 − r̂_2 already
    let tail = |m: usize| -> Dyadic { (0..=m).map(|i| sys.r_hat(i + 2)).sum() };
    let a = Dyadic::one() - tail(k);
    let c = Dyadic::one() - tail(k - 1);
    Ok((a, c, sys.r_hat(k).shl(1), sys.r_hat(k - 1).shl(1)))
}

/// δ_k = 2^{−kβ(2n−1)}/k².
pub fn energy_budget(k: usize, sys: &CantorSystem) -> f64 {
    let e = -((k as i64) * sys.beta as i64 * (2 * sys.n as i64 - 1));
    crate::dyadic::ldexp(1.0, e) / (k * k) as f64
}

impl TentacleParams {
    /// Widths d_k given per generation, b_k = d_k/2.
    pub fn from_widths(sys: &CantorSystem, d: &[Dyadic]) -> Result<Self> {
        let mut gens = Vec::new();
        for (i, dk) in d.iter().enumerate() {
            let k = i + 1;
            sys.check_k(k)?;
            let (a, c, a_tilde, c_tilde) = default_axis_params(k, sys)?;
            gens.push(GenParams {
                k,
                a,
                c,
                b: dk.half(),
                d: dk.clone(),
                a_tilde,
                c_tilde,
                delta: energy_budget(k, sys),
                measured_energy: None,
                energy_error: None,
                budget_met: None,
            });
        }
        Ok(TentacleParams { sys: *sys, gens })
    }

    /// Seed widths d_k = min(r̂_k, 8^{−k})/4, shrunk to the lane fit of the previous generation.
    pub fn seeded(sys: &CantorSystem, k_top: usize) -> Result<Self> {
        let mut d = Vec::new();
        for k in 1..=k_top {
            let mut dk = sys.r_hat(k).min(Dyadic::pow2(-3 * k as i64)).shl(-2);
            if k > 1 {
                let cap = lane_cap(sys, &d[k - 2]);
                dk = dk.min(cap);
            }
            d.push(dk);
        }
        Self::from_widths(sys, &d)
    }

    pub fn k_top(&self) -> usize {
        self.gens.len()
    }

    pub fn gen(&self, k: usize) -> &GenParams {
        &self.gens[k - 1]
    }

    /// Hard constraints of the construction, decided exactly. Empty means valid.
    pub fn violations(&self) -> Vec<String> {
        let n = self.sys.n;
        let mut out = Vec::new();
        for g in &self.gens {
            let k = g.k;
            if !(g.b.is_positive() && g.b < g.d && g.d < g.a && g.a < g.c) {
                out.push(format!("k={k}: need 0 < b < d < a < c"));
            }
            if g.d >= self.sys.r_hat(k) {
                out.push(format!("k={k}: d_k = {} is not below r̂_k", g.d));
            }
            if g.b >= Dyadic::pow2(-3 * k as i64) {
                out.push(format!("k={k}: b_k = {} is not below 8^-k", g.b));
            }
            if k > 1 {
                let prev = self.gen(k - 1);
                if g.d >= prev.b.shl(2 * n as i64) {
                    out.push(format!("k={k}: d_k = {} is not below 4^n b_(k-1)", g.d));
                }
            }
        }
        out
    }

    /// Lanes of 2^n children must fit side by side inside the parent body.
    pub fn routing_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for k in 2..=self.k_top() {
            let cap = lane_cap(&self.sys, &self.gen(k - 1).d);
            if self.gen(k).d > cap {
                out.push(format!("k={k}: d_k = {} exceeds the lane width b_(k-1)/2^(n+1) = {}", self.gen(k).d, cap));
            }
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(Error::Constraint(v.join("; ")));
        }
        let r = self.routing_violations();
        if !r.is_empty() {
            return Err(Error::Routing(format!("{}; re-tune the widths", r.join("; "))));
        }
        Ok(())
    }
}

/// b_{k−1}/2^{n+1} expressed through d_{k−1} (b = d/2).
fn lane_cap(sys: &CantorSystem, d_prev: &Dyadic) -> Dyadic {
    d_prev.shl(-(sys.n as i64) - 2)
}

pub type P2D = [Dyadic; 2];

/// Axis-aligned box with exact bounds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BoxD {
    pub lo: Vec<Dyadic>,
    pub hi: Vec<Dyadic>,
}

impl BoxD {
    pub fn volume(&self) -> Dyadic {
        self.lo.iter().zip(&self.hi).fold(Dyadic::one(), |v, (l, h)| v * (h - l))
    }

    pub fn interiors_disjoint(&self, other: &BoxD) -> bool {
        (0..self.lo.len()).any(|i| self.hi[i] <= other.lo[i] || other.hi[i] <= self.lo[i])
    }

    fn contains_point(&self, x: &[Dyadic]) -> bool {
        (0..self.lo.len()).all(|i| self.lo[i] <= x[i] && x[i] <= self.hi[i])
    }
}

/// Is the union of `inner` boxes covered by the union of `outer` boxes?
/// Exact, by coordinate compression inside each inner box.
pub fn union_contains(outer: &[BoxD], inner: &[BoxD]) -> bool {
    inner.iter().all(|b| {
        let relevant: Vec<&BoxD> = outer.iter().filter(|o| !o.interiors_disjoint(b)).collect();
        let dim = b.lo.len();
        let mut cuts: Vec<Vec<Dyadic>> = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut c = vec![b.lo[i].clone(), b.hi[i].clone()];
            for o in &relevant {
                for v in [&o.lo[i], &o.hi[i]] {
                    if *v > b.lo[i] && *v < b.hi[i] {
                        c.push(v.clone());
                    }
                }
            }
            c.sort();
            c.dedup();
            cuts.push(c);
        }
        // midpoints of every compressed cell
        let mids: Vec<Vec<Dyadic>> = cuts.iter().map(|c| c.windows(2).map(|w| (&w[0] + &w[1]).half()).collect()).collect();
        let mut idx = vec![0usize; dim];
        loop {
            let p: Vec<Dyadic> = (0..dim).map(|i| mids[i][idx[i]].clone()).collect();
            if !relevant.iter().any(|o| o.contains_point(&p)) {
                return false;
            }
            let mut a = 0;
            loop {
                if a == dim {
                    return true;
                }
                idx[a] += 1;
                if idx[a] < mids[a].len() {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    })
}

/// Exact volume of a union of boxes.
pub fn union_volume(boxes: &[BoxD]) -> Dyadic {
    if boxes.is_empty() {
        return Dyadic::zero();
    }
    let dim = boxes[0].lo.len();
    let mut cuts: Vec<Vec<Dyadic>> = Vec::new();
    for i in 0..dim {
        let mut c: Vec<Dyadic> = boxes.iter().flat_map(|b| [b.lo[i].clone(), b.hi[i].clone()]).collect();
        c.sort();
        c.dedup();
        cuts.push(c);
    }
    let mut total = Dyadic::zero();
    let mut idx = vec![0usize; dim];
    if cuts.iter().any(|c| c.len() < 2) {
        return total;
    }
    loop {
        let mid: Vec<Dyadic> = (0..dim).map(|i| (&cuts[i][idx[i]] + &cuts[i][idx[i] + 1]).half()).collect();
        if boxes.iter().any(|b| b.contains_point(&mid)) {
            total = total + (0..dim).fold(Dyadic::one(), |v, i| v * (&cuts[i][idx[i] + 1] - &cuts[i][idx[i]]));
        }
        let mut a = 0;
        loop {
            if a == dim {
                return total;
            }
            idx[a] += 1;
            if idx[a] + 1 < cuts[a].len() {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TentacleRegion {
    pub k: usize,
    pub slots: Vec<u32>,
    pub head: BoxD,
    pub body: Vec<BoxD>,
    /// centerline in (x_1, x_n)
    pub centerline: Vec<P2D>,
    pub half_width: Dyadic,
    pub length: Dyadic,
    pub squeezed: bool,
    pub primed: bool,
}

impl TentacleRegion {
    pub fn boxes(&self) -> Vec<BoxD> {
        let mut v = vec![self.head.clone()];
        v.extend(self.body.iter().cloned());
        v
    }

    pub fn body_volume(&self) -> Dyadic {
        union_volume(&self.body)
    }

    /// Extent of the region along x_1.
    pub fn axis_extent(&self) -> (Dyadic, Dyadic) {
        let bs = self.boxes();
        let lo = bs.iter().map(|b| b.lo[0].clone()).min().unwrap();
        let hi = bs.iter().map(|b| b.hi[0].clone()).max().unwrap();
        (lo, hi)
    }
}

fn seg_len(a: &P2D, b: &P2D) -> Dyadic {
    (&b[0] - &a[0]).abs() + (&b[1] - &a[1]).abs()
}

fn sgn(d: &Dyadic) -> i32 {
    if d.is_positive() {
        1
    } else if d.is_negative() {
        -1
    } else {
        0
    }
}

/// Unit direction of a segment as integer signs.
fn dir(a: &P2D, b: &P2D) -> [i32; 2] {
    [sgn(&(&b[0] - &a[0])), sgn(&(&b[1] - &a[1]))]
}

fn left(d: [i32; 2]) -> [i32; 2] {
    [-d[1], d[0]]
}

fn scaled(o: &Dyadic, s: i32) -> Dyadic {
    match s {
        1 => o.clone(),
        -1 => -o,
        _ => Dyadic::zero(),
    }
}

/// Polyline truncated at arc length `len`.
fn truncate(verts: &[P2D], len: &Dyadic) -> Result<Vec<P2D>> {
    let mut out = vec![verts[0].clone()];
    let mut acc = Dyadic::zero();
    for w in verts.windows(2) {
        let l = seg_len(&w[0], &w[1]);
        let next = &acc + &l;
        if next >= *len {
            let rem = len - &acc;
            let d = dir(&w[0], &w[1]);
            out.push([&w[0][0] + &scaled(&rem, d[0]), &w[0][1] + &scaled(&rem, d[1])]);
            return Ok(out);
        }
        out.push(w[1].clone());
        acc = next;
    }
    Err(Error::Routing(format!("centerline of length {acc} is shorter than the requested {len}")))
}

/// Plane boxes of a thick polyline: segments thickened by w, extended by w at interior joints.
fn polyline_boxes(n: usize, verts: &[P2D], w: &Dyadic) -> Vec<BoxD> {
    let m = verts.len() - 1;
    let mut out = Vec::new();
    for i in 0..m {
        let (a, b) = (&verts[i], &verts[i + 1]);
        let d = dir(a, b);
        let ext_a = if i > 0 { w.clone() } else { Dyadic::zero() };
        let ext_b = if i + 1 < m { w.clone() } else { Dyadic::zero() };
        let mut lo2 = [Dyadic::zero(), Dyadic::zero()];
        let mut hi2 = [Dyadic::zero(), Dyadic::zero()];
        for ax in 0..2 {
            if d[ax] == 0 {
                lo2[ax] = &a[ax] - w;
                hi2[ax] = &a[ax] + w;
            } else {
                let (s, e) = (&a[ax] - &scaled(&ext_a, d[ax]), &b[ax] + &scaled(&ext_b, d[ax]));
                lo2[ax] = s.clone().min(e.clone());
                hi2[ax] = s.max(e);
            }
        }
        out.push(plane_box(n, &lo2, &hi2, w));
    }
    out
}

fn plane_box(n: usize, lo2: &[Dyadic; 2], hi2: &[Dyadic; 2], w: &Dyadic) -> BoxD {
    let mut lo = vec![-w; n];
    let mut hi = vec![w.clone(); n];
    lo[0] = lo2[0].clone();
    hi[0] = hi2[0].clone();
    lo[n - 1] = lo2[1].clone();
    hi[n - 1] = hi2[1].clone();
    BoxD { lo, hi }
}

/// All routes up to a generation, built exactly.
#[derive(Clone, Debug)]
pub struct TentacleForest {
    pub params: TentacleParams,
    /// full centerline at the primed length c_k − r̂_k
    routes: HashMap<TowerIndex, Vec<P2D>>,
    heights: HashMap<TowerIndex, Dyadic>,
}

impl TentacleForest {
    pub fn build(params: &TentacleParams) -> Result<Self> {
        params.check()?;
        let sys = params.sys;
        let mut f = TentacleForest { params: params.clone(), routes: HashMap::new(), heights: HashMap::new() };
        f.heights.insert(TowerIndex::root(), Dyadic::zero());
        for k in 1..=params.k_top() {
            for t in sys.all_tower(k) {
                let h = sys.center(&Index::Tower(t.clone()))?.0[sys.n - 1].clone();
                f.heights.insert(t.clone(), h);
                let r = f.route_for(&t)?;
                f.routes.insert(t, r);
            }
        }
        Ok(f)
    }

    pub fn sys(&self) -> &CantorSystem {
        &self.params.sys
    }

    pub fn height(&self, t: &TowerIndex) -> &Dyadic {
        &self.heights[t]
    }

    /// Jog abscissa of a child: outer children (larger |t|) jog further right.
    pub fn jog_x(&self, t: &TowerIndex) -> Dyadic {
        let sys = self.sys();
        let k = t.generation();
        let slot = t.last();
        let tj = sys.slot_offset(slot);
        let rank = (1..=sys.vertex_count())
            .filter(|&s| {
                let ts = sys.slot_offset(s);
                ts.is_positive() == tj.is_positive() && ts.abs() < tj.abs()
            })
            .count() as i64;
        let (rk, rp) = (sys.r_hat(k), sys.r_hat(k - 1));
        &rk + &((&rp - &rk) * Dyadic::new(1 + rank, -(sys.n as i64)))
    }

    pub fn lane_offset(&self, t: &TowerIndex) -> Dyadic {
        let k = t.generation();
        &self.params.gen(k - 1).b * self.sys().slot_offset(t.last())
    }

    fn route_for(&self, t: &TowerIndex) -> Result<Vec<P2D>> {
        let sys = self.sys();
        let k = t.generation();
        let g = self.params.gen(k);
        let rk = sys.r_hat(k);
        let hc = self.heights[t].clone();
        let total = &g.c - &rk;
        if k == 1 {
            return Ok(vec![[rk.clone(), hc.clone()], [g.c.clone(), hc]]);
        }
        let parent = t.parent();
        let pr = &self.routes[&parent];
        let o = self.lane_offset(t);
        let x = self.jog_x(t);
        let hp = &self.heights[&parent];
        let mut v = vec![[rk, hc.clone()], [x.clone(), hc], [x, hp + &o]];
        let m = pr.len();
        for i in 1..m {
            let din = dir(&pr[i - 1], &pr[i]);
            let nin = left(din);
            let (ox, oy) = if i + 1 < m {
                let nout = left(dir(&pr[i], &pr[i + 1]));
                (nin[0] + nout[0], nin[1] + nout[1])
            } else {
                (nin[0], nin[1])
            };
            v.push([&pr[i][0] + &scaled(&o, ox), &pr[i][1] + &scaled(&o, oy)]);
        }
        truncate(&v, &total)
    }

    /// Centerline truncated to the primed or unprimed length.
    pub fn centerline(&self, t: &TowerIndex, primed: bool) -> Result<Vec<P2D>> {
        let k = t.generation();
        let g = self.params.gen(k);
        let rk = self.sys().r_hat(k);
        let route = self.routes.get(t).ok_or_else(|| Error::InvalidArgument(format!("no route for {:?}", t.slots)))?;
        if primed {
            Ok(route.clone())
        } else {
            truncate(route, &(&g.a - &rk))
        }
    }

    pub fn head_box(&self, t: &TowerIndex) -> BoxD {
        let n = self.sys().n;
        let r = self.sys().r_hat(t.generation());
        let h = &self.heights[t];
        plane_box(n, &[-&r, h - &r], &[r.clone(), h + &r], &r)
    }

    pub fn region(&self, t: &TowerIndex, squeezed: bool, primed: bool) -> Result<TentacleRegion> {
        let sys = self.sys();
        let n = sys.n;
        let k = t.generation();
        if k == 0 {
            return Err(Error::InvalidArgument("tentacles start at generation 1".into()));
        }
        let g = self.params.gen(k);
        let rk = sys.r_hat(k);
        let w = if primed { g.d.clone() } else { g.b.clone() };
        let head = self.head_box(t);
        let h = self.heights[t].clone();
        let (centerline, body) = if squeezed {
            let end = if primed { g.c_tilde.clone() } else { g.a_tilde.clone() };
            let cl = vec![[rk.clone(), h.clone()], [end.clone(), h.clone()]];
            let b = plane_box(n, &[rk.clone(), &h - &w], &[end, &h + &w], &w);
            (cl, vec![b])
        } else {
            let cl = self.centerline(t, primed)?;
            let b = polyline_boxes(n, &cl, &w);
            (cl, b)
        };
        let length = centerline.windows(2).map(|p| seg_len(&p[0], &p[1])).sum();
        Ok(TentacleRegion { k, slots: t.slots.clone(), head, body, centerline, half_width: w, length, squeezed, primed })
    }

    /// Float thick polyline of the body.
    pub fn tube(&self, t: &TowerIndex, primed: bool) -> Result<Tube> {
        let g = self.params.gen(t.generation());
        let w = if primed { &g.d } else { &g.b };
        let cl = self.centerline(t, primed)?;
        Ok(Tube::new(self.sys().n, cl.iter().map(|p| [p[0].to_f64(), p[1].to_f64()]).collect(), w.to_f64()))
    }

    /// Route vertices in float, full primed length.
    pub fn route_f(&self, t: &TowerIndex) -> Vec<[f64; 2]> {
        self.routes[t].iter().map(|p| [p[0].to_f64(), p[1].to_f64()]).collect()
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct NestingReport {
    pub checked_pairs: usize,
    pub checked_sibling_pairs: usize,
    pub violations: Vec<String>,
}

/// T'_{v̂(k+1)} ⊆ T_{v̂(k)} for every child, T'_{v̂(1)} inside the cube, and
/// sibling primed tentacles with disjoint interiors up to `sibling_depth`.
pub fn verify_nesting(forest: &TentacleForest, sibling_depth: usize) -> Result<NestingReport> {
    let sys = *forest.sys();
    let n = sys.n;
    let mut rep = NestingReport::default();
    let cube = BoxD { lo: vec![-Dyadic::one(); n], hi: vec![Dyadic::one(); n] };
    for k in 1..=forest.params.k_top() {
        for t in sys.all_tower(k) {
            let child = forest.region(&t, false, true)?;
            let outer = if k == 1 { vec![cube.clone()] } else { forest.region(&t.parent(), false, false)?.boxes() };
            rep.checked_pairs += 1;
            if !union_contains(&outer, &child.boxes()) {
                rep.violations.push(format!("T'{:?} is not inside its parent", t.slots));
            }
        }
        if k <= sibling_depth {
            for p in sys.all_tower(k - 1) {
                let kids: Vec<Vec<BoxD>> =
                    (1..=sys.vertex_count()).map(|s| forest.region(&p.child(s), false, true).map(|r| r.boxes())).collect::<Result<_>>()?;
                for i in 0..kids.len() {
                    for j in i + 1..kids.len() {
                        rep.checked_sibling_pairs += 1;
                        let disjoint = kids[i].iter().all(|a| kids[j].iter().all(|b| a.interiors_disjoint(b)));
                        if !disjoint {
                            rep.violations.push(format!("siblings {} and {} of {:?} overlap", i + 1, j + 1, p.slots));
                        }
                    }
                }
            }
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_params_examples() {
        let sys = CantorSystem::new(3, 4).unwrap();
        let (a, c, at, ct) = default_axis_params(1, &sys).unwrap();
        assert_eq!(c, Dyadic::one() - Dyadic::pow2(-10));
        assert_eq!(a, Dyadic::one() - Dyadic::pow2(-10) - Dyadic::pow2(-15));
        assert_eq!(at, Dyadic::pow2(-4));
        assert_eq!(ct, Dyadic::int(2));
        let mut prev = Dyadic::int(2);
        for k in 1..=8 {
            let (a, c, _, _) = default_axis_params(k, &sys).unwrap();
            assert!(a < prev && a < c);
            assert!(a.to_f64() > 0.99);
            prev = a;
        }
        assert_eq!(energy_budget(1, &sys), 2f64.powi(-20));
    }

    #[test]
    fn constraint_gate_catches_wide_children() {
        let sys = CantorSystem::new(2, 3).unwrap();
        let p = TentacleParams::seeded(&sys, 2).unwrap();
        assert!(p.violations().is_empty());
        let too_wide = p.gen(1).b.shl(2 * 2).shl(1);
        let bad = TentacleParams::from_widths(&sys, &[p.gen(1).d.clone(), too_wide]).unwrap();
        assert!(bad.violations().iter().any(|v| v.contains("4^n")));
        assert!(TentacleForest::build(&bad).is_err());
    }

    #[test]
    fn routes_nest_and_preserve_length() {
        for (n, beta, k) in [(2, 3, 3), (3, 4, 2)] {
            let sys = CantorSystem::new(n, beta).unwrap();
            let p = TentacleParams::seeded(&sys, k).unwrap();
            let f = TentacleForest::build(&p).unwrap();
            let rep = verify_nesting(&f, 2).unwrap();
            assert!(rep.violations.is_empty(), "{:?}", rep.violations);
            for t in sys.all_tower(k) {
                let r = f.region(&t, false, true).unwrap();
                let g = p.gen(k);
                assert_eq!(r.length, &g.c - &sys.r_hat(k));
                let section = r.half_width.shl(1).powi(n as u32 - 1);
                assert_eq!(r.body_volume(), &r.length * &section);
            }
        }
    }
}
