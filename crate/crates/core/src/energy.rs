//! Neohookean energies, jacobian distributions, empirical distortion
//! moduli and an Orlicz function for a family of maps.
//!
//! E(f) = ∫ |Df|^p + φ(J_f), plus a·P(A(f)) for the cavity energy E_c.
//! φ must be positive and convex with φ(0+) = ∞ and φ(t)/t → ∞.

use serde::{Deserialize, Serialize};

use crate::cavity::{perimeter, GridSet};
use crate::composite::CompositeMap;
use crate::error::{Error, Result};
use crate::homeo::Homeo;
use crate::linalg::Vector;
use crate::quad::{adaptive, tensor_rule, AdaptiveOptions, ParamBox};
use crate::squeeze::{moved_boxes, support_point};

pub trait Phi {
    fn eval(&self, t: f64) -> f64;
    fn name(&self) -> String;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BuiltinPhi {
    /// t + 1/t: blows up at 0 but only linear at ∞
    TPlusInv,
    /// t² + 1/t
    TSquaredPlusInv,
    /// t, for negative checks
    Linear,
}

impl BuiltinPhi {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "t+1/t" => Some(BuiltinPhi::TPlusInv),
            "t^2+1/t" => Some(BuiltinPhi::TSquaredPlusInv),
            "t" => Some(BuiltinPhi::Linear),
            _ => None,
        }
    }
}

impl Phi for BuiltinPhi {
    fn eval(&self, t: f64) -> f64 {
        match self {
            BuiltinPhi::TPlusInv => t + 1.0 / t,
            BuiltinPhi::TSquaredPlusInv => t * t + 1.0 / t,
            BuiltinPhi::Linear => t,
        }
    }
    fn name(&self) -> String {
        match self {
            BuiltinPhi::TPlusInv => "t+1/t",
            BuiltinPhi::TSquaredPlusInv => "t^2+1/t",
            BuiltinPhi::Linear => "t",
        }
        .into()
    }
}

/// φ(t) = 1 + λ·log⁺(1/t) + ∫_1^t θ for the increasing step-plus-log
/// θ(t) = log₂ t + #{i : t_i ≤ t}; the knots t_i carry the family's tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrliczFunction {
    pub lambda: f64,
    pub knots: Vec<f64>,
}

impl OrliczFunction {
    pub fn new(lambda: f64, knots: Vec<f64>) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("blow-up weight must be positive, got {lambda}")));
        }
        if knots.first().is_some_and(|&t| t < 1.0) || knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("knots must increase from t ≥ 1".into()));
        }
        Ok(OrliczFunction { lambda, knots })
    }

    /// Slope increment of φ at each knot.
    pub fn slopes(&self) -> Vec<f64> {
        vec![1.0; self.knots.len()]
    }

    pub fn theta(&self, t: f64) -> f64 {
        if t < 1.0 {
            return 0.0;
        }
        t.log2() + self.knots.iter().filter(|&&k| k <= t).count() as f64
    }

    /// ∫_1^t θ for t ≥ 1, zero below.
    pub fn superlinear_part(&self, t: f64) -> f64 {
        if t <= 1.0 {
            return 0.0;
        }
        let log = t * t.log2() - (t - 1.0) / std::f64::consts::LN_2;
        log + self.knots.iter().map(|&k| (t - k).max(0.0)).sum::<f64>()
    }

    pub fn blowup_part(&self, t: f64) -> f64 {
        if t < 1.0 {
            -self.lambda * t.ln()
        } else {
            0.0
        }
    }
}

impl Phi for OrliczFunction {
    fn eval(&self, t: f64) -> f64 {
        1.0 + self.blowup_part(t) + self.superlinear_part(t)
    }
    fn name(&self) -> String {
        format!("orlicz(lambda={}, {} knots)", self.lambda, self.knots.len())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OrliczCheck {
    pub positive: bool,
    pub convex: bool,
    pub blows_up: bool,
    pub superlinear: bool,
}

impl OrliczCheck {
    pub fn passed(&self) -> bool {
        self.positive && self.convex && self.blows_up && self.superlinear
    }
}

/// Convexity by slopes on a log grid over [1e-6, 1e6], blow-up by
/// φ(10^{−j}) increasing and superlinearity by φ(10^j)/10^j increasing,
/// j = 0..12.
pub fn check_orlicz(phi: &dyn Phi) -> OrliczCheck {
    let grid: Vec<f64> = (-48..=48).map(|j| 10f64.powf(j as f64 / 8.0)).collect();
    let vals: Vec<f64> = grid.iter().map(|&t| phi.eval(t)).collect();
    let slopes: Vec<f64> = (0..grid.len() - 1).map(|i| (vals[i + 1] - vals[i]) / (grid[i + 1] - grid[i])).collect();
    let convex = slopes.windows(2).all(|w| w[1] - w[0] >= -1e-12 * w[0].abs().max(1.0));
    let near: Vec<f64> = (0..=12).map(|j| phi.eval(10f64.powi(-j))).collect();
    let far: Vec<f64> = (0..=12).map(|j| phi.eval(10f64.powi(j)) / 10f64.powi(j)).collect();
    OrliczCheck {
        positive: vals.iter().all(|&v| v > 0.0),
        convex,
        blows_up: near.windows(2).all(|w| w[1] > w[0]),
        superlinear: far.windows(2).all(|w| w[1] > w[0]),
    }
}

/// Weighted distribution of J: atoms (value, domain volume).
#[derive(Clone, Debug, Serialize)]
pub struct JacobianHistogram {
    pub label: String,
    pub atoms: Vec<(f64, f64)>,
    /// quadrature error of ∫J over the refined part
    pub error: f64,
}

impl JacobianHistogram {
    pub fn volume(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// ∫ J, the image volume.
    pub fn image_volume(&self) -> f64 {
        self.atoms.iter().map(|a| a.0 * a.1).sum()
    }

    pub fn min_jacobian(&self) -> f64 {
        self.atoms.iter().filter(|a| a.1 > 0.0).map(|a| a.0).fold(f64::INFINITY, f64::min)
    }

    pub fn max_jacobian(&self) -> f64 {
        self.atoms.iter().filter(|a| a.1 > 0.0).map(|a| a.0).fold(0.0, f64::max)
    }

    fn sorted(&self) -> Vec<(f64, f64)> {
        let mut a: Vec<(f64, f64)> = self.atoms.iter().copied().filter(|a| a.1 > 0.0).collect();
        a.sort_by(|x, y| x.0.total_cmp(&y.0));
        a
    }
}

/// Histogram of a map over parameter boxes of its domain: the boxes are
/// refined adaptively on ∫1 and ∫J, then each leaf contributes its order-3
/// nodes as atoms.
pub fn histogram_on_boxes(map: &dyn Homeo, boxes: Vec<ParamBox<()>>, opts: AdaptiveOptions) -> Result<JacobianHistogram> {
    let res = adaptive(boxes, opts, |_, x| Ok([1.0, map.eval(x)?.j]))?;
    let mut atoms = Vec::new();
    let mut err = None;
    for leaf in &res.leaves {
        tensor_rule(leaf.dim, &leaf.lo, &leaf.hi, opts.high, |x, w| match map.eval(x) {
            Ok(j) => atoms.push((j.j, w)),
            Err(e) => err = Some(e),
        });
    }
    if let Some(e) = err {
        return Err(e);
    }
    Ok(JacobianHistogram { label: map.label(), atoms, error: res.error[1] })
}

/// The cube [−1,1]^n split into `cells` boxes per axis.
pub fn cube_boxes(n: usize, cells: usize) -> Vec<ParamBox<()>> {
    let h = 2.0 / cells as f64;
    (0..cells.pow(n as u32))
        .map(|code| {
            let mut b = ParamBox { tag: (), dim: n, lo: [0.0; crate::linalg::MAXN], hi: [0.0; crate::linalg::MAXN] };
            let mut c = code;
            for a in 0..n {
                b.lo[a] = -1.0 + (c % cells) as f64 * h;
                b.hi[a] = b.lo[a] + h;
                c /= cells;
            }
            b
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct MovedNode {
    pub x: Vector,
    pub weight: f64,
    pub j: f64,
    pub leaf: usize,
}

/// The refined nodes of f̃_k over (L_k g_k)⁻¹(∪ M_j), the set it may move.
#[derive(Clone, Debug)]
pub struct MovedSet {
    pub n: usize,
    pub label: String,
    pub nodes: Vec<MovedNode>,
    pub volume: f64,
    /// quadrature error of ∫1 and ∫J together
    pub error: f64,
}

pub fn moved_set(f: &CompositeMap, opts: AdaptiveOptions) -> Result<MovedSet> {
    let mut out = MovedSet { n: f.n(), label: f.label(), nodes: Vec::new(), volume: 0.0, error: 0.0 };
    if f.k == 0 {
        return Ok(out);
    }
    let res = adaptive(moved_boxes(&f.h), opts, |tag, p| {
        let node = support_point(&f.h, tag, p);
        let back = f.lg_inverse(&node.x)?;
        let jet = f.eval(&back.value)?;
        let w = node.weight * back.j;
        Ok([w, w * jet.j])
    })?;
    let mut err = None;
    for (leaf, b) in res.leaves.iter().enumerate() {
        tensor_rule(b.dim, &b.lo, &b.hi, opts.high, |p, w| {
            let node = support_point(&f.h, &b.tag, p);
            let mut step = || -> Result<()> {
                let back = f.lg_inverse(&node.x)?;
                let jet = f.eval(&back.value)?;
                out.nodes.push(MovedNode { x: back.value, weight: w * node.weight * back.j, j: jet.j, leaf });
                Ok(())
            };
            if let Err(e) = step() {
                err = Some(e);
            }
        });
    }
    if let Some(e) = err {
        return Err(e);
    }
    out.volume = res.value[0];
    out.error = res.error[0] + res.error[1];
    Ok(out)
}

impl MovedSet {
    /// J over [−1,1]^n: the nodes plus an atom at 1 for the unmoved rest.
    pub fn histogram(&self) -> JacobianHistogram {
        let mut atoms: Vec<(f64, f64)> = self.nodes.iter().map(|m| (m.j, m.weight)).collect();
        atoms.push((1.0, 2f64.powi(self.n as i32) - self.volume));
        JacobianHistogram { label: self.label.clone(), atoms, error: self.error }
    }

    /// |f̃_k(A)| = |A| + Σ_{x ∈ A} w(J − 1), and a grid error: the |J − 1|
    /// mass of leaves whose nodes fall on both sides of ∂A.
    pub fn image_measure(&self, a: &GridSet) -> Result<(f64, f64)> {
        if a.n != self.n {
            return Err(Error::GridMismatch(format!("set of dimension {} for a map of dimension {}", a.n, self.n)));
        }
        let mut value = a.measure();
        let mut grid_error = 0.0;
        let mut i = 0;
        while i < self.nodes.len() {
            let leaf = self.nodes[i].leaf;
            let (mut inside, mut outside, mut mass) = (false, false, 0.0);
            while i < self.nodes.len() && self.nodes[i].leaf == leaf {
                let m = &self.nodes[i];
                let hit = a.index_of(&m.x).is_some_and(|c| a.get(c));
                if hit {
                    value += m.weight * (m.j - 1.0);
                    inside = true;
                } else {
                    outside = true;
                }
                mass += m.weight * (m.j - 1.0).abs();
                i += 1;
            }
            if inside && outside {
                grid_error += mass;
            }
        }
        Ok((value, grid_error))
    }
}

/// J_{f̃_k} over [−1,1]^n: an atom at 1 where f̃_k is the identity, and the
/// refined nodes of the set it may move.
pub fn jacobian_histogram(f: &CompositeMap, opts: AdaptiveOptions) -> Result<JacobianHistogram> {
    Ok(moved_set(f, opts)?.histogram())
}

/// Φ̂ and Ψ̂ sampled at `s`.
#[derive(Clone, Debug, Serialize)]
pub struct DistortionModuli {
    pub s: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

/// Smallest and largest |f(A)| over |A| = s: fill A with the smallest
/// (largest) J mass first.
pub fn moduli_at(hist: &JacobianHistogram, s: f64) -> Result<(f64, f64)> {
    let sorted = hist.sorted();
    let vol: f64 = sorted.iter().map(|a| a.1).sum();
    if s > vol * (1.0 + 1e-12) || s < 0.0 {
        return Err(Error::InvalidArgument(format!("|A| = {s} outside [0, {vol}]")));
    }
    let fill = |it: &mut dyn Iterator<Item = &(f64, f64)>| {
        let (mut left, mut img) = (s, 0.0);
        for &(j, v) in it {
            if left <= 0.0 {
                break;
            }
            let take = v.min(left);
            img += j * take;
            left -= take;
        }
        img
    };
    Ok((fill(&mut sorted.iter()), fill(&mut sorted.iter().rev())))
}

pub fn distortion_moduli(hist: &JacobianHistogram, s: &[f64]) -> Result<DistortionModuli> {
    let mut phi = Vec::with_capacity(s.len());
    let mut psi = Vec::with_capacity(s.len());
    for &v in s {
        let (a, b) = moduli_at(hist, v)?;
        phi.push(a);
        psi.push(b);
    }
    Ok(DistortionModuli { s: s.to_vec(), phi, psi })
}

#[derive(Clone, Debug, Serialize)]
pub struct OrliczBuild {
    pub phi: OrliczFunction,
    /// Σ φ(J)·vol per histogram
    pub integrals: Vec<f64>,
    pub sup: f64,
    pub check: OrliczCheck,
}

/// De la Vallée-Poussin for a finite family. With G(s) = sup_h Σ_{J≥s} J·vol,
/// knots t_i ≥ 2t_{i−1} are the first points where G ≤ 2^{−i}·G(1), so the
/// step part of θ costs Σ_i G(t_i) ≤ G(1) in Σ θ(J)·J·vol, and
/// φ_∞(t) ≤ t·θ(t). λ makes the log part at most 1 on every member.
pub fn build_orlicz(hists: &[JacobianHistogram]) -> Result<OrliczBuild> {
    if hists.is_empty() {
        return Err(Error::InvalidArgument("empty histogram family".into()));
    }
    for h in hists {
        if let Some(a) = h.atoms.iter().find(|a| a.1 > 0.0 && a.0 <= 0.0) {
            return Err(Error::NonPositiveJacobian(a.0));
        }
    }
    let blow = hists.iter().map(|h| h.atoms.iter().filter(|a| a.0 < 1.0).map(|a| -a.0.ln() * a.1).sum::<f64>()).fold(0.0, f64::max);
    let lambda = if blow > 1.0 { 1.0 / blow } else { 1.0 };
    // per histogram: J ascending with the suffix sums of J·vol
    let tails: Vec<(Vec<f64>, Vec<f64>)> = hists
        .iter()
        .map(|h| {
            let s = h.sorted();
            let mut suffix = vec![0.0; s.len() + 1];
            for i in (0..s.len()).rev() {
                suffix[i] = suffix[i + 1] + s[i].0 * s[i].1;
            }
            (s.iter().map(|a| a.0).collect(), suffix)
        })
        .collect();
    let g = |t: f64| tails.iter().map(|(js, suffix)| suffix[js.partition_point(|&j| j < t)]).fold(0.0, f64::max);
    let jmax = hists.iter().map(|h| h.max_jacobian()).fold(0.0, f64::max);
    let g1 = g(1.0);
    let mut candidates: Vec<f64> = tails.iter().flat_map(|(js, _)| js.iter().copied()).filter(|&j| j > 1.0).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut knots = Vec::new();
    let mut prev = 1.0;
    while prev <= jmax {
        let target = g1 * 0.5f64.powi(knots.len() as i32 + 1);
        let start = 2.0 * prev;
        // G is left continuous and steps down just past each atom
        let t = if g(start) <= target {
            start
        } else {
            let from = candidates.partition_point(|&j| j < start);
            match candidates[from..].iter().map(|&j| j * (1.0 + 1e-12)).find(|&t| g(t) <= target) {
                Some(t) => t,
                None => jmax * (1.0 + 1e-12),
            }
        };
        knots.push(t);
        prev = t;
    }
    let phi = OrliczFunction::new(lambda, knots)?;
    let integrals: Vec<f64> = hists.iter().map(|h| h.atoms.iter().map(|a| phi.eval(a.0) * a.1).sum()).collect();
    let sup = integrals.iter().cloned().fold(0.0, f64::max);
    let check = check_orlicz(&phi);
    Ok(OrliczBuild { phi, integrals, sup, check })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    /// ∫ |Df|^p
    pub dirichlet: f64,
    /// ∫ φ(J_f)
    pub phi: f64,
    /// a·P(A)
    pub perimeter: f64,
    pub total: f64,
    pub error: f64,
    pub converged: bool,
}

fn finish(dirichlet: f64, phi: f64, perimeter: f64, error: f64, converged: bool) -> EnergyReport {
    EnergyReport { dirichlet, phi, perimeter, total: dirichlet + phi + perimeter, error, converged }
}

fn density(jet: &crate::homeo::Jet, n: usize, p: f64, phi: &dyn Phi) -> Result<[f64; 2]> {
    if !(jet.j > 0.0) {
        return Err(Error::NonPositiveJacobian(jet.j));
    }
    Ok([jet.frobenius(n).powf(p), phi.eval(jet.j)])
}

/// E over the domain covered by `boxes`, plus a·P(cavity) when a cavity set
/// is given (the cavity energy E_c).
pub fn energy(
    map: &dyn Homeo,
    boxes: Vec<ParamBox<()>>,
    p: f64,
    phi: &dyn Phi,
    a: f64,
    cavity: Option<&GridSet>,
    opts: AdaptiveOptions,
) -> Result<EnergyReport> {
    if !(p > 0.0) {
        return Err(Error::InvalidArgument(format!("exponent p must be positive, got {p}")));
    }
    let n = map.dim();
    let res = adaptive(boxes, opts, |_, x| density(&map.eval(x)?, n, p, phi))?;
    let per = cavity.map(|c| a * perimeter(c)).unwrap_or(0.0);
    Ok(finish(res.value[0], res.value[1], per, res.error[0] + res.error[1], res.converged))
}

/// E(f̃_k) over [−1,1]^n: the identity contributes (n^{p/2} + φ(1)) on the
/// part it fixes.
pub fn composite_energy(f: &CompositeMap, p: f64, phi: &dyn Phi, opts: AdaptiveOptions) -> Result<EnergyReport> {
    let n = f.n();
    let cube = 2f64.powi(n as i32);
    let still = (n as f64).powf(p / 2.0) + phi.eval(1.0);
    if f.k == 0 {
        return Ok(finish((n as f64).powf(p / 2.0) * cube, phi.eval(1.0) * cube, 0.0, 0.0, true));
    }
    let res = adaptive(moved_boxes(&f.h), opts, |tag, q| {
        let node = support_point(&f.h, tag, q);
        let back = f.lg_inverse(&node.x)?;
        let w = node.weight * back.j;
        let [d, ph] = density(&f.eval(&back.value)?, n, p, phi)?;
        Ok([w * d, w * ph, w])
    })?;
    let rest = cube - res.value[2];
    Ok(finish(
        res.value[0] + (n as f64).powf(p / 2.0) * rest,
        res.value[1] + phi.eval(1.0) * rest,
        0.0,
        res.error[0] + res.error[1] + still * res.error[2],
        res.converged,
    ))
}
