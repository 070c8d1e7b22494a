//! The squeeze maps h_k, their derivative energy and the width tuner.
//!
//! h_k = φ_k ∘ h_{k−1}, where φ_k acts inside each tube U = h_{k−1}(P'_{v̂(k)})
//! and is the identity elsewhere. U is again a thick polyline: the part of
//! the child route inside the parent head is fixed by h_{k−1}, and the lane
//! is carried onto a straight band of the squeezed parent body. In the
//! unbent coordinates (s, τ) of U only s moves:
//!
//!   σ = λ·σ_core(s) + (1 − λ)·s,   λ = clamp((d − |τ|∞)/(d − b), 0, 1),
//!
//! with σ_core affine from [0, Lc] onto [0, ℓ] and from [Lc, L'] onto [ℓ, L'].
//! The core |τ| < b, s < Lc (the image of P) lands on the straight box of
//! length ℓ = ã_k − r̂_k next to the head, and φ_k fixes ∂U.

use std::ops::Range;

use serde::Serialize;

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::geometry::{CantorSystem, TowerIndex};
use crate::homeo::{Homeo, Jet};
use crate::linalg::{self, Matrix, Vector};
use crate::quad::{rule_on, ParamBox};
use crate::tentacle::{TentacleForest, TentacleParams};
use crate::tube::Tube;

/// One generation-k tentacle: its tube in original coordinates and the
/// squeeze acting on its image.
#[derive(Clone, Debug)]
pub struct SqueezeNode {
    pub slots: Vec<u32>,
    pub height: f64,
    /// head half-width r̂_k
    pub r: f64,
    pub b: f64,
    pub d: f64,
    /// P' and P before squeezing
    pub primed: Tube,
    pub unprimed: Tube,
    /// U = h_{k−1}(P')
    pub image: Tube,
    pub lc: f64,
    pub ell: f64,
    rho_c: f64,
    mu: f64,
}

impl SqueezeNode {
    fn new(slots: Vec<u32>, height: f64, r: f64, b: f64, d: f64, primed: Tube, unprimed: Tube, image: Tube, core_cut: f64) -> Result<Self> {
        let lp = image.length();
        let lc = lp - core_cut;
        let ell = r;
        if !(ell < lc && lc < lp) {
            return Err(Error::Constraint(format!("squeeze of {slots:?} needs ℓ < Lc < L', got {ell}, {lc}, {lp}")));
        }
        Ok(SqueezeNode { slots, height, r, b, d, primed, unprimed, image, lc, ell, rho_c: ell / lc, mu: (lp - ell) / (lp - lc) })
    }

    fn n(&self) -> usize {
        self.image.n
    }

    /// Slope μ of the axis profile between the core end and the tube end.
    pub fn stretch(&self) -> f64 {
        self.mu
    }

    /// Slope of the axis profile on the core, ℓ/Lc.
    pub fn compression(&self) -> f64 {
        self.rho_c
    }

    /// λ, the axis achieving |τ|∞ and its sign.
    fn profile(&self, l: &Vector) -> (f64, usize, f64) {
        let n = self.n();
        let (mut m, mut t) = (1, 0.0);
        for i in 1..n {
            if l[i].abs() > t {
                t = l[i].abs();
                m = i;
            }
        }
        let lam = ((self.d - t) / (self.d - self.b)).clamp(0.0, 1.0);
        (lam, m, l[m].signum())
    }

    fn sigma_core(&self, s: f64) -> (f64, f64) {
        if s <= self.lc {
            (self.rho_c * s, self.rho_c)
        } else {
            (self.ell + self.mu * (s - self.lc), self.mu)
        }
    }

    /// The unbent map S and its derivative.
    fn local(&self, l: &Vector) -> (Vector, Matrix) {
        let n = self.n();
        let s = l[0];
        let (lam, m, sg) = self.profile(l);
        let (sc, dsc) = self.sigma_core(s);
        let mut out = *l;
        out[0] = lam * sc + (1.0 - lam) * s;
        let mut ds = linalg::identity(n);
        ds[0][0] = lam * dsc + 1.0 - lam;
        if lam > 0.0 && lam < 1.0 {
            ds[0][m] = (sc - s) * (-sg / (self.d - self.b));
        }
        (out, ds)
    }

    fn local_inv(&self, l: &Vector) -> Vector {
        let (lam, _, _) = self.profile(l);
        let sp = l[0];
        let s = sp / (lam * self.rho_c + 1.0 - lam);
        let s = if s < self.lc { s } else { (sp - lam * (self.ell - self.mu * self.lc)) / (lam * self.mu + 1.0 - lam) };
        let mut out = *l;
        out[0] = s;
        out
    }

    /// φ on U, `None` outside.
    pub fn eval(&self, x: &Vector) -> Option<Jet> {
        let n = self.n();
        let l = self.image.to_local(x)?;
        let (l2, ds) = self.local(&l);
        let (y, d2) = self.image.to_world(&l2);
        let (_, d1) = self.image.to_world(&l);
        let d1i = linalg::inverse(n, &d1).expect("unbending is regular inside the tube");
        let d = linalg::matmul(n, &linalg::matmul(n, &d2, &ds), &d1i);
        let j = ds[0][0] * self.image.volume_factor(&l2) / self.image.volume_factor(&l);
        Some(Jet { value: y, d, j })
    }

    pub fn invert(&self, y: &Vector) -> Option<Vector> {
        let l = self.image.to_local(y)?;
        Some(self.image.to_world(&self.local_inv(&l)).0)
    }

    /// Closed squeezed tentacle T̃ = head ∪ P̃.
    fn squeezed_contains(&self, x: &Vector) -> bool {
        let n = self.n();
        let dy = (x[n - 1] - self.height).abs();
        let mid = (1..n - 1).fold(0.0f64, |a, i| a.max(x[i].abs()));
        let head = x[0].abs() <= self.r && dy <= self.r && mid <= self.r;
        head || (x[0] >= self.r && x[0] <= 2.0 * self.r && dy <= self.b && mid <= self.b)
    }

    /// Closed original unsqueezed tentacle T = head ∪ P.
    fn original_contains(&self, x: &Vector) -> bool {
        let n = self.n();
        let dy = (x[n - 1] - self.height).abs();
        let mid = (1..n - 1).fold(0.0f64, |a, i| a.max(x[i].abs()));
        (x[0].abs() <= self.r && dy <= self.r && mid <= self.r) || self.unprimed.to_local(x).is_some()
    }
}

/// h_k for all tower indices of generations 1..=k.
#[derive(Clone, Debug)]
pub struct SqueezeMap {
    pub sys: CantorSystem,
    pub k: usize,
    pub params: TentacleParams,
    /// nodes[j − 1][flat index], flat = Σ (slot − 1)·2^{n(j−i)}
    nodes: Vec<Vec<SqueezeNode>>,
}

fn point(n: usize, p: [f64; 2]) -> Vector {
    let mut x = linalg::zero_vec();
    x[0] = p[0];
    x[n - 1] = p[1];
    x
}

pub fn build_squeeze(k: usize, forest: &TentacleForest) -> Result<SqueezeMap> {
    let sys = *forest.sys();
    let params = forest.params.clone();
    if k > params.k_top() {
        return Err(Error::InvalidArgument(format!("squeeze of generation {k} needs widths up to {k}, have {}", params.k_top())));
    }
    let n = sys.n;
    let mut map = SqueezeMap { sys, k: 0, params: params.clone(), nodes: Vec::new() };
    for j in 1..=k {
        let g = params.gen(j);
        let (r, b, d) = (sys.r_hat_f(j), g.b.to_f64(), g.d.to_f64());
        let mut level = Vec::with_capacity(1 << (n * j));
        for t in sys.all_tower(j) {
            let primed = forest.tube(&t, true)?;
            let unprimed = forest.tube(&t, false)?;
            let h = forest.height(&t).to_f64();
            let end = *primed.verts.last().unwrap();
            let end_core = *unprimed.verts.last().unwrap();
            let e = map.eval(&point(n, end))?.value;
            let e_core = map.eval(&point(n, end_core))?.value;
            let image = if j == 1 {
                primed.clone()
            } else {
                let x = forest.jog_x(&t).to_f64();
                let lane = forest.height(&t.parent()).to_f64() + forest.lane_offset(&t).to_f64();
                debug_assert!((e[n - 1] - lane).abs() <= 1e-12 && (e_core[n - 1] - lane).abs() <= 1e-12);
                Tube::new(n, vec![[r, h], [x, h], [x, lane], [e[0], lane]], d)
            };
            level.push(SqueezeNode::new(t.slots.clone(), h, r, b, d, primed, unprimed, image, e[0] - e_core[0])?);
        }
        map.nodes.push(level);
        map.k = j;
    }
    Ok(map)
}

impl SqueezeMap {
    pub fn n(&self) -> usize {
        self.sys.n
    }

    fn flat(&self, t: &TowerIndex) -> usize {
        t.slots.iter().fold(0, |a, &s| (a << self.n()) + (s as usize - 1))
    }

    pub fn node(&self, t: &TowerIndex) -> &SqueezeNode {
        &self.nodes[t.generation() - 1][self.flat(t)]
    }

    /// The generation-1, …, j tentacles through which `node` is routed, ending with itself.
    pub fn lineage<'a>(&'a self, node: &'a SqueezeNode) -> impl Iterator<Item = &'a SqueezeNode> + 'a {
        let n = self.n();
        (1..=node.slots.len()).map(move |j| &self.nodes[j - 1][node.slots[..j].iter().fold(0, |a, &s| (a << n) + (s as usize - 1))])
    }

    pub fn generation(&self, j: usize) -> &[SqueezeNode] {
        &self.nodes[j - 1]
    }

    fn children(&self, parent: Option<usize>) -> Range<usize> {
        let c = 1usize << self.n();
        match parent {
            None => 0..c,
            Some(p) => p * c..(p + 1) * c,
        }
    }

    /// h_depth for depth ≤ k, by descent through the squeezed tentacles.
    pub fn eval_depth(&self, x: &Vector, depth: usize) -> Jet {
        let n = self.n();
        let mut jet = Jet::identity(n, x);
        let mut parent = None;
        for j in 1..=depth.min(self.k) {
            let level = &self.nodes[j - 1];
            let kids = self.children(parent);
            if let Some(step) = kids.clone().find_map(|c| level[c].eval(&jet.value)) {
                jet = jet.then(n, &step);
            }
            match kids.into_iter().find(|&c| level[c].squeezed_contains(&jet.value)) {
                Some(c) => parent = Some(c),
                None => break,
            }
        }
        jet
    }

    /// Chain of squeezed tentacles containing y, at most `depth` long.
    fn squeezed_chain(&self, y: &Vector, depth: usize) -> Vec<usize> {
        let mut chain = Vec::new();
        for j in 1..=depth {
            let kids = self.children(chain.last().copied());
            match kids.into_iter().find(|&c| self.nodes[j - 1][c].squeezed_contains(y)) {
                Some(c) => chain.push(c),
                None => break,
            }
        }
        chain
    }

    pub fn invert_depth(&self, y: &Vector, depth: usize) -> Vector {
        let depth = depth.min(self.k);
        if depth == 0 {
            return *y;
        }
        let chain = self.squeezed_chain(y, depth - 1);
        let mut x = *y;
        for j in (1..=depth.min(chain.len() + 1)).rev() {
            let parent = if j == 1 { None } else { Some(chain[j - 2]) };
            if let Some(p) = self.children(parent).find_map(|c| self.nodes[j - 1][c].invert(&x)) {
                x = p;
            }
        }
        x
    }

    /// The generation-k tentacle whose primed body P' contains x, if any.
    pub fn support_of(&self, x: &Vector) -> Option<&SqueezeNode> {
        self.support_at(x, self.k)
    }

    /// The generation-`depth` tentacle whose P' contains x, if any.
    pub fn support_at(&self, x: &Vector, depth: usize) -> Option<&SqueezeNode> {
        let mut parent = None;
        for j in 1..=depth {
            let level = &self.nodes[j - 1];
            let kids = self.children(parent);
            if j == depth {
                return kids.into_iter().map(|c| &level[c]).find(|nd| nd.primed.to_local(x).is_some());
            }
            parent = Some(kids.into_iter().find(|&c| level[c].original_contains(x))?);
        }
        None
    }

    /// Is x in M_k = ∪ P'_{v̂(k)}?
    pub fn in_support(&self, x: &Vector) -> bool {
        self.support_of(x).is_some()
    }

    /// Is x in some M_j, j ≤ k, i.e. possibly moved by h_k?
    pub fn moves(&self, x: &Vector) -> bool {
        (1..=self.k).any(|j| self.support_at(x, j).is_some())
    }
}

impl Homeo for SqueezeMap {
    fn dim(&self) -> usize {
        self.n()
    }
    fn label(&self) -> String {
        format!("h_{}", self.k)
    }
    fn eval(&self, x: &Vector) -> Result<Jet> {
        if linalg::sup_norm(self.n(), x) > 1.0 + 1e-12 {
            return Err(Error::OutsideDomain("h_k"));
        }
        Ok(self.eval_depth(x, self.k))
    }
    fn invert(&self, y: &Vector) -> Result<Vector> {
        if linalg::sup_norm(self.n(), y) > 1.0 + 1e-12 {
            return Err(Error::OutsideImage("h_k"));
        }
        Ok(self.invert_depth(y, self.k))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    pub k: usize,
    pub q: f64,
    /// ∫_{M_k} |Dh_k|^q, Frobenius norm
    pub value: f64,
    /// part over the cores P
    pub core: f64,
    /// |value at the higher order − value at the lower order|
    pub error: f64,
    /// quadrature of |M_k| itself, a check on the cell decomposition
    pub volume: f64,
    pub tubes: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct QuadOrders {
    pub low: usize,
    pub high: usize,
}

impl Default for QuadOrders {
    fn default() -> Self {
        QuadOrders { low: 2, high: 3 }
    }
}

struct SectionNode {
    tau: Vector,
    w: f64,
    core: bool,
}

/// Cross-section (−d, d)^{n−1}: the core box plus one pyramid per face of it.
fn section_rule(n: usize, b: f64, d: f64, order: usize) -> Vec<SectionNode> {
    let m = n - 1;
    let mut out = Vec::new();
    let line: Vec<(f64, f64)> = rule_on(order, -b, b).collect();
    let unit: Vec<(f64, f64)> = rule_on(order, -1.0, 1.0).collect();
    let radial: Vec<(f64, f64)> = rule_on(order, b, d).collect();
    let mut idx = vec![0usize; m];
    loop {
        let mut tau = linalg::zero_vec();
        let mut w = 1.0;
        for i in 0..m {
            tau[i + 1] = line[idx[i]].0;
            w *= line[idx[i]].1;
        }
        out.push(SectionNode { tau, w, core: true });
        if !bump(&mut idx, order) {
            break;
        }
    }
    for axis in 0..m {
        for sg in [-1.0, 1.0] {
            for &(t, wt) in &radial {
                let mut idx = vec![0usize; m - 1];
                loop {
                    let mut tau = linalg::zero_vec();
                    let mut w = wt * t.powi(m as i32 - 1);
                    let mut o = 0;
                    for i in 0..m {
                        if i == axis {
                            tau[i + 1] = sg * t;
                        } else {
                            tau[i + 1] = t * unit[idx[o]].0;
                            w *= unit[idx[o]].1;
                            o += 1;
                        }
                    }
                    out.push(SectionNode { tau, w, core: false });
                    if !bump(&mut idx, order) {
                        break;
                    }
                }
            }
        }
    }
    out
}

/// Odometer increment; false after the last multi-index.
fn bump(idx: &mut [usize], base: usize) -> bool {
    for v in idx.iter_mut() {
        *v += 1;
        if *v < base {
            return true;
        }
        *v = 0;
    }
    false
}

/// Arc lengths along a tube where the integrand may have a kink: its own
/// pieces, the head faces of all ancestors, their corner squares and the
/// end of the core.
fn breakpoints(map: &SqueezeMap, node: &SqueezeNode) -> Vec<f64> {
    let tube = &node.primed;
    let mut cuts: Vec<f64> = tube.pieces().iter().flat_map(|p| [p.1, p.2]).collect();
    cuts.push(node.unprimed.length());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for anc in map.lineage(node).take(node.slots.len() - 1) {
        xs.push(anc.r);
        for v in anc.image.verts.iter().skip(1).take(anc.image.verts.len().saturating_sub(2)) {
            xs.extend([v[0] - anc.d, v[0] + anc.d]);
            ys.extend([v[1] - anc.d, v[1] + anc.d]);
        }
    }
    for i in 0..tube.segments() {
        let (a, b) = (tube.verts[i], tube.verts[i + 1]);
        let (lines, ax) = if a[1] == b[1] { (&xs, 0) } else { (&ys, 1) };
        for &c in lines {
            if (c - a[ax]) * (c - b[ax]) < 0.0 {
                cuts.push(tube.cum[i] + (c - a[ax]).abs());
            }
        }
    }
    let len = tube.length();
    cuts.retain(|&c| (0.0..=len).contains(&c));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * len);
    cuts
}

/// One quadrature node over M_k.
pub struct SupportNode<'a> {
    pub tentacle: &'a SqueezeNode,
    pub x: Vector,
    pub weight: f64,
    /// inside P: core cross-section and before the core end
    pub core: bool,
}

/// Gauss rule of one order over M_k = ∪ P'_{v̂(k)}, cut at every kink of h_k.
pub fn support_rule(map: &SqueezeMap, order: usize, mut f: impl FnMut(SupportNode)) {
    let k = map.k;
    if k == 0 {
        return;
    }
    let g = map.params.gen(k);
    let section = section_rule(map.n(), g.b.to_f64(), g.d.to_f64(), order);
    for node in &map.nodes[k - 1] {
        let cuts = breakpoints(map, node);
        let core_end = node.unprimed.length();
        for w in cuts.windows(2) {
            if w[1] - w[0] <= 0.0 {
                continue;
            }
            let in_core = w[1] <= core_end;
            for (s, ws) in rule_on(order, w[0], w[1]) {
                for sn in &section {
                    let mut l = sn.tau;
                    l[0] = s;
                    let (x, _) = node.primed.to_world(&l);
                    let weight = ws * sn.w * node.primed.volume_factor(&l);
                    f(SupportNode { tentacle: node, x, weight, core: sn.core && in_core });
                }
            }
        }
    }
}

/// Which piece of the cross-section a parameter box covers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sector {
    /// |τ|∞ < b, parameters τ
    Core,
    /// collar pyramid over the face τ_axis = ±|τ|∞, parameters (t, τ/t)
    Collar { axis: usize, sign: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct SupportTag {
    pub generation: usize,
    /// flat index within the generation
    pub tentacle: usize,
    pub sector: Sector,
}

/// Parameter boxes (s, section) covering M_k, with s cut at the kinks of h_k.
pub fn support_boxes(map: &SqueezeMap) -> Vec<ParamBox<SupportTag>> {
    generation_boxes(map, map.k)
}

/// Boxes covering ∪_{j≤k} M_j, the set h_k may move, without overlap: a
/// generation-j box is kept only while its centerline runs outside every
/// M_i, i < j. Past the parent head face the tube lies inside the parent's
/// P', and that face is among the s cuts, so the test is exact per box.
pub fn moved_boxes(map: &SqueezeMap) -> Vec<ParamBox<SupportTag>> {
    let mut out = Vec::new();
    for j in 1..=map.k {
        for b in generation_boxes(map, j) {
            let mut mid = linalg::zero_vec();
            mid[0] = 0.5 * (b.lo[0] + b.hi[0]);
            let x = map.nodes[j - 1][b.tag.tentacle].primed.to_world(&mid).0;
            if (1..j).all(|i| map.support_at(&x, i).is_none()) {
                out.push(b);
            }
        }
    }
    out
}

fn generation_boxes(map: &SqueezeMap, k: usize) -> Vec<ParamBox<SupportTag>> {
    let n = map.n();
    let m = n - 1;
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    let g = map.params.gen(k);
    let (b, d) = (g.b.to_f64(), g.d.to_f64());
    let mut sectors = vec![Sector::Core];
    for axis in 0..m {
        for sign in [-1.0, 1.0] {
            sectors.push(Sector::Collar { axis, sign });
        }
    }
    for (tentacle, node) in map.nodes[k - 1].iter().enumerate() {
        for w in breakpoints(map, node).windows(2) {
            if w[1] - w[0] <= 0.0 {
                continue;
            }
            for &sector in &sectors {
                let mut lo = linalg::zero_vec();
                let mut hi = linalg::zero_vec();
                lo[0] = w[0];
                hi[0] = w[1];
                for i in 1..n {
                    (lo[i], hi[i]) = match sector {
                        Sector::Core => (-b, b),
                        Sector::Collar { .. } if i == 1 => (b, d),
                        Sector::Collar { .. } => (-1.0, 1.0),
                    };
                }
                out.push(ParamBox { tag: SupportTag { generation: k, tentacle, sector }, dim: n, lo, hi });
            }
        }
    }
    out
}

/// The world point and volume weight of a parameter point of a support box.
pub fn support_point<'a>(map: &'a SqueezeMap, tag: &SupportTag, p: &Vector) -> SupportNode<'a> {
    let n = map.n();
    let node = &map.nodes[tag.generation - 1][tag.tentacle];
    let mut l = linalg::zero_vec();
    l[0] = p[0];
    let mut jac = 1.0;
    match tag.sector {
        Sector::Core => l[1..n].copy_from_slice(&p[1..n]),
        Sector::Collar { axis, sign } => {
            let t = p[1];
            jac = t.powi(n as i32 - 2);
            let mut o = 2;
            for i in 0..n - 1 {
                if i == axis {
                    l[i + 1] = sign * t;
                } else {
                    l[i + 1] = t * p[o];
                    o += 1;
                }
            }
        }
    }
    let (x, _) = node.primed.to_world(&l);
    let core = tag.sector == Sector::Core && p[0] < node.unprimed.length();
    SupportNode { tentacle: node, x, weight: jac * node.primed.volume_factor(&l), core }
}

/// ∫_{M_k} |Dh_k|^q over the primed bodies of generation k.
pub fn squeeze_energy(map: &SqueezeMap, q: f64, orders: QuadOrders) -> EnergyReport {
    let k = map.k;
    let n = map.n();
    let tubes = if k == 0 { 0 } else { map.nodes[k - 1].len() };
    let mut lo = 0.0;
    support_rule(map, orders.low, |p| lo += p.weight * map.eval_depth(&p.x, k).frobenius(n).powf(q));
    let (mut hi, mut core, mut volume) = (0.0, 0.0, 0.0);
    support_rule(map, orders.high, |p| {
        let f = p.weight * map.eval_depth(&p.x, k).frobenius(n).powf(q);
        hi += f;
        volume += p.weight;
        if p.core {
            core += f;
        }
    });
    EnergyReport { k, q, value: hi, core, error: (hi - lo).abs(), volume, tubes }
}

#[derive(Clone, Debug, Serialize)]
pub struct TuneStep {
    pub k: usize,
    pub d: Dyadic,
    pub energy: f64,
    pub error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TuneOutcome {
    pub params: TentacleParams,
    pub steps: Vec<TuneStep>,
    /// generations whose budget was not reached
    pub unmet: Vec<usize>,
}

impl TuneOutcome {
    pub fn require_budget(&self) -> Result<()> {
        if self.unmet.is_empty() {
            Ok(())
        } else {
            Err(Error::NoConvergence(format!("energy budget δ_k not reached for k in {:?}", self.unmet)))
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TuneOptions {
    pub orders: QuadOrders,
    pub max_halvings: usize,
    /// stop once halving d leaves more than this fraction of the energy
    pub stall_ratio: f64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions { orders: QuadOrders::default(), max_halvings: 30, stall_ratio: 0.9 }
    }
}

/// Sequential in k: d_k starts at the seed and is halved until
/// ∫_{M_k}|Dh_k|^{n−1} ≤ δ_k, or until halving stops paying.
pub fn autotune_widths(k_top: usize, sys: &CantorSystem, opts: TuneOptions) -> Result<TuneOutcome> {
    sys.check_k(k_top)?;
    let seeds = TentacleParams::seeded(sys, k_top)?;
    let q = (sys.n - 1) as f64;
    let mut widths: Vec<Dyadic> = Vec::new();
    let mut steps = Vec::new();
    let mut unmet = Vec::new();
    let mut results = Vec::new();
    for k in 1..=k_top {
        let mut dk = seeds.gen(k).d.clone();
        if k > 1 {
            // the seed cap follows the seeded parent; re-cap against the tuned one
            dk = dk.min(widths[k - 2].shl(-(sys.n as i64) - 2));
        }
        let mut prev: Option<f64> = None;
        let mut best: Option<(Dyadic, EnergyReport)> = None;
        for _ in 0..=opts.max_halvings {
            let mut w = widths.clone();
            w.push(dk.clone());
            let params = TentacleParams::from_widths(sys, &w)?;
            let forest = TentacleForest::build(&params)?;
            let rep = squeeze_energy(&build_squeeze(k, &forest)?, q, opts.orders);
            steps.push(TuneStep { k, d: dk.clone(), energy: rep.value, error: rep.error });
            let value = rep.value;
            best = Some((dk.clone(), rep));
            if value <= params.gen(k).delta {
                break;
            }
            if prev.is_some_and(|p| value > opts.stall_ratio * p) {
                break;
            }
            prev = Some(value);
            dk = dk.half();
        }
        let (d, rep) = best.expect("at least one step");
        widths.push(d);
        results.push(rep);
    }
    let mut params = TentacleParams::from_widths(sys, &widths)?;
    for (g, rep) in params.gens.iter_mut().zip(&results) {
        g.measured_energy = Some(rep.value);
        g.energy_error = Some(rep.error);
        let met = rep.value <= g.delta;
        g.budget_met = Some(met);
        if !met {
            unmet.push(g.k);
        }
    }
    Ok(TuneOutcome { params, steps, unmet })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, beta: u32, k: usize) -> (TentacleForest, SqueezeMap) {
        let sys = CantorSystem::new(n, beta).unwrap();
        let p = TentacleParams::seeded(&sys, k).unwrap();
        let f = TentacleForest::build(&p).unwrap();
        let m = build_squeeze(k, &f).unwrap();
        (f, m)
    }

    /// Points near the tentacles, where the map is interesting.
    fn near_tentacles(m: &SqueezeMap, rng: &mut ChaCha8Rng) -> Vector {
        let n = m.n();
        let lvl = m.generation(rng.gen_range(1..=m.k));
        let nd = &lvl[rng.gen_range(0..lvl.len())];
        let tube = if rng.gen_bool(0.5) { &nd.primed } else { &nd.image };
        let mut l = linalg::zero_vec();
        l[0] = rng.gen_range(0.0..tube.length());
        for c in l.iter_mut().take(n).skip(1) {
            *c = rng.gen_range(-1.2 * nd.d..1.2 * nd.d);
        }
        let mut x = if l[1].abs() < nd.d { tube.to_world(&l).0 } else { tube.centerline(l[0]) };
        x[1..n - 1].copy_from_slice(&l[2..n]);
        x
    }

    #[test]
    fn round_trip_and_positive_jacobian() {
        for (n, beta, k) in [(2, 3, 3), (3, 4, 2)] {
            let (_, m) = setup(n, beta, k);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..4000 {
                let x = near_tentacles(&m, &mut rng);
                let jet = m.eval(&x).unwrap();
                assert!(jet.j > 0.0);
                assert!((jet.j - linalg::det(n, &jet.d)).abs() <= 1e-9 * jet.j.max(1.0));
                let back = m.invert(&jet.value).unwrap();
                assert!(linalg::sup_norm(n, &linalg::sub(n, &back, &x)) < 1e-10, "{x:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let (_, m) = setup(3, 4, 2);
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 300 {
            let x = near_tentacles(&m, &mut rng);
            let jet = m.eval(&x).unwrap();
            let h = 1e-7 * m.generation(m.k)[0].d;
            let mut ok = true;
            let mut fd = [[0.0; linalg::MAXN]; linalg::MAXN];
            for c in 0..n {
                let (mut xp, mut xm) = (x, x);
                xp[c] += h;
                xm[c] -= h;
                let (jp, jm) = (m.eval(&xp).unwrap(), m.eval(&xm).unwrap());
                // skip stencils that straddle a kink
                ok &= linalg::frobenius(n, &linalg::mat_sub(n, &jp.d, &jm.d)) < 1e-6 * jet.frobenius(n);
                for r in 0..n {
                    fd[r][c] = (jp.value[r] - jm.value[r]) / (2.0 * h);
                }
            }
            if ok {
                let err = linalg::frobenius(n, &linalg::mat_sub(n, &fd, &jet.d));
                assert!(err < 1e-5 * jet.frobenius(n), "at {x:?}: {err}");
                checked += 1;
            }
        }
    }

    #[test]
    fn similarity_identity_and_imaging() {
        let (f, m) = setup(3, 4, 2);
        let n = 3;
        let m1 = build_squeeze(1, &f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..3000 {
            let x = near_tentacles(&m, &mut rng);
            if !m.in_support(&x) {
                let (a, b) = (m.apply(&x).unwrap(), m1.apply(&x).unwrap());
                assert!(linalg::sup_norm(n, &linalg::sub(n, &a, &b)) < 1e-12);
            }
        }
        for nd in m.generation(2) {
            let z = point(n, [0.0, nd.height]);
            for corner in [[nd.r, nd.r], [-nd.r, -nd.r], [0.5 * nd.r, -0.9 * nd.r]] {
                let mut x = z;
                x[0] += corner[0];
                x[n - 1] += corner[1];
                x[1] = 0.7 * nd.r;
                assert_eq!(m.apply(&x).unwrap(), x);
            }
            // the axis end of P goes to distance ã_k from the head center
            let end = *nd.unprimed.verts.last().unwrap();
            // the ramp beyond the core end has slope μ, which magnifies one ulp of s
            let tol = 1e-12 + nd.stretch() * 4.0 * f64::EPSILON * nd.image.length();
            let y = m.apply(&point(n, end)).unwrap();
            assert!((y[0] - 2.0 * nd.r).abs() < tol && (y[n - 1] - nd.height).abs() < 1e-12, "{y:?} {}", nd.r);
        }
    }

    #[test]
    fn core_energy_matches_affine_closed_form() {
        let (_, m) = setup(3, 4, 1);
        let q = 2.0;
        let rep = squeeze_energy(&m, q, QuadOrders::default());
        let nd = &m.generation(1)[0];
        let rho = nd.ell / nd.lc;
        let v = nd.lc * (2.0 * nd.b).powi(2);
        let want = m.generation(1).len() as f64 * v * (2.0 + rho * rho).powf(q / 2.0);
        assert!((rep.core - want).abs() < 1e-9 * want, "{} vs {want}", rep.core);
        let vol: f64 = m.generation(1).iter().map(|nd| nd.primed.length() * (2.0 * nd.d).powi(2)).sum();
        assert!((rep.volume - vol).abs() < 1e-9 * vol);
    }

    #[test]
    fn empty_squeeze_has_no_energy() {
        let (f, _) = setup(2, 3, 1);
        let m0 = build_squeeze(0, &f).unwrap();
        assert_eq!(squeeze_energy(&m0, 1.0, QuadOrders::default()).value, 0.0);
    }

    #[test]
    fn support_boxes_reproduce_the_tube_rule() {
        let (f, _) = setup(3, 4, 2);
        let m = build_squeeze(2, &f).unwrap();
        let rep = squeeze_energy(&m, 2.0, QuadOrders::default());
        let mut total = [0.0; 2];
        for c in support_boxes(&m) {
            crate::quad::tensor_rule(c.dim, &c.lo, &c.hi, 3, |p, w| {
                let node = support_point(&m, &c.tag, p);
                total[0] += w * node.weight;
                total[1] += w * node.weight * m.eval_depth(&node.x, 2).frobenius(3).powi(2);
            });
        }
        assert!((total[0] - rep.volume).abs() < 1e-12 * rep.volume);
        assert!((total[1] - rep.value).abs() < 1e-10 * rep.value);
    }

    #[test]
    fn moved_boxes_tile_the_union_of_supports() {
        let (_, m) = setup(2, 3, 3);
        let mut vol = 0.0;
        for c in moved_boxes(&m) {
            crate::quad::tensor_rule(c.dim, &c.lo, &c.hi, 3, |p, w| vol += w * support_point(&m, &c.tag, p).weight);
        }
        // sample a box around the tower strip, where all tentacles live
        let (x0, x1, y0, y1) = (0.0, 1.0, -1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let trials = 1_000_000;
        let hits = (0..trials)
            .filter(|_| {
                let x = linalg::from_slice(&[rng.gen_range(x0..x1), rng.gen_range(y0..y1)]);
                m.moves(&x)
            })
            .count();
        let p = hits as f64 / trials as f64;
        let area = (x1 - x0) * (y1 - y0);
        let sd = area * (p * (1.0 - p) / trials as f64).sqrt();
        assert!((area * p - vol).abs() < 5.0 * sd, "{} ± {sd} vs {vol}", area * p);
    }
}
