//! The composite f̃_k = g_k⁻¹ ∘ L_k⁻¹ ∘ h_k ∘ L_k ∘ g_k and its finite-stage
//! diagnostics: fixed points, the tentacle sets Υ_k, the Lusin ratio and
//! the W^{1,n−1} increments.
//!
//! f̃_k differs from f̃_{k−1} only on S_k = (L_k g_k)⁻¹(M_k), so integrals of
//! increments and jacobians are taken over M_k in tower coordinates with
//! weight J_{(Lg)⁻¹}, on the same cut tube rule as the squeeze energy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::geometry::{CantorSystem, Family, Index};
use crate::homeo::{build_g, build_l, GMap, Homeo, Jet, LMap};
use crate::linalg::{self, Vector};
use crate::quad::{adaptive, tensor_rule, AdaptiveOptions};
use crate::squeeze::{build_squeeze, support_boxes, support_point, SqueezeMap};
use crate::tentacle::{TentacleForest, TentacleParams};

#[derive(Clone, Debug)]
pub struct CompositeMap {
    pub sys: CantorSystem,
    pub k: usize,
    pub g: GMap,
    pub l: LMap,
    pub h: SqueezeMap,
}

pub fn build_f_tilde(k: usize, forest: &TentacleForest) -> Result<CompositeMap> {
    let sys = *forest.sys();
    Ok(CompositeMap { sys, k, g: build_g(k, &sys)?, l: build_l(k, &sys)?, h: build_squeeze(k, forest)? })
}

impl CompositeMap {
    pub fn n(&self) -> usize {
        self.sys.n
    }

    /// L_k ∘ g_k.
    pub fn lg(&self, x: &Vector) -> Result<Jet> {
        let n = self.n();
        let gj = self.g.eval(x)?;
        Ok(gj.then(n, &self.l.eval(&gj.value)?))
    }

    /// Jet of (L_k g_k)⁻¹ at a tower-side point.
    pub fn lg_inverse(&self, y: &Vector) -> Result<Jet> {
        let x = self.g.invert(&self.l.invert(y)?)?;
        Ok(self.lg(&x)?.inverse(self.n(), &x))
    }

    /// Is x in S_k, where f̃_k may differ from f̃_{k−1}?
    pub fn in_increment_support(&self, x: &Vector) -> Result<bool> {
        Ok(self.h.in_support(&self.lg(x)?.value))
    }
}

impl Homeo for CompositeMap {
    fn dim(&self) -> usize {
        self.n()
    }
    fn label(&self) -> String {
        format!("f~_{}", self.k)
    }
    fn eval(&self, x: &Vector) -> Result<Jet> {
        let n = self.n();
        let inner = self.lg(x)?;
        let hj = self.h.eval(&inner.value)?;
        let back = self.lg_inverse(&hj.value)?;
        Ok(inner.then(n, &hj).then(n, &back))
    }
    fn invert(&self, y: &Vector) -> Result<Vector> {
        let u = self.h.invert(&self.lg(y)?.value)?;
        self.lg_inverse(&u).map(|j| j.value)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct FixedPointReport {
    pub checked: usize,
    pub violations: usize,
    pub max_error: f64,
}

impl FixedPointReport {
    fn record(&mut self, x: &Vector, y: &Vector, n: usize) {
        let e = linalg::sup_norm(n, &linalg::sub(n, x, y));
        self.checked += 1;
        self.max_error = self.max_error.max(e);
        if e > 1e-10 {
            self.violations += 1;
        }
    }
}

/// |f̃_k(x) − x|∞ ≤ 1e-10 on ∂[−1,1]^n, at every z_{v(k)}, on the
/// boundaries of the generation-k cubes of C_A and at points whose image
/// under L_k g_k misses every M_j.
pub fn fixed_point_check(f: &CompositeMap, samples: usize, seed: u64) -> Result<FixedPointReport> {
    let n = f.n();
    let sys = f.sys;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = FixedPointReport::default();
    for _ in 0..samples {
        let mut x = linalg::zero_vec();
        for c in x.iter_mut().take(n) {
            *c = rng.gen_range(-1.0..1.0);
        }
        let face = rng.gen_range(0..n);
        x[face] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        rep.record(&x, &f.apply(&x)?, n);
    }
    let cubes = sys.all_multi(f.k, Family::A);
    let r = sys.radius_f(Family::A, f.k, false);
    for idx in &cubes {
        let z = sys.center(&Index::Multi(idx.clone()))?.to_vector();
        rep.record(&z, &f.apply(&z)?, n);
    }
    for _ in 0..samples {
        let idx = &cubes[rng.gen_range(0..cubes.len())];
        let mut x = sys.center(&Index::Multi(idx.clone()))?.to_vector();
        let face = rng.gen_range(0..n);
        for i in 0..n {
            x[i] += if i == face {
                if rng.gen_bool(0.5) {
                    r
                } else {
                    -r
                }
            } else {
                rng.gen_range(-r..r)
            };
        }
        rep.record(&x, &f.apply(&x)?, n);
    }
    // points whose tower image avoids every M_j; the full round trip is evaluated
    let mut far = 0;
    for _ in 0..samples * 20 {
        if far == samples {
            break;
        }
        let mut x = linalg::zero_vec();
        for c in x.iter_mut().take(n) {
            *c = rng.gen_range(-1.0..1.0);
        }
        if f.h.moves(&f.lg(&x)?.value) {
            continue;
        }
        far += 1;
        rep.record(&x, &f.apply(&x)?, n);
    }
    Ok(rep)
}

/// Tower-side tentacles Υ_k = ∪ T_{v̂(k)}: heads plus unprimed bodies.
#[derive(Clone, Debug, Serialize)]
pub struct TubeSet {
    pub k: usize,
    pub measure: Dyadic,
    /// 2^{kn}(r̂_k^n + b_k^{n−1})
    pub bound: f64,
}

/// |Υ_k| exactly: bodies are disjoint from heads and routing keeps body
/// volumes, so |Υ_k| = 2^{kn}[(2r̂_k)^n + (a_k − r̂_k)(2b_k)^{n−1}].
pub fn tube_set(k: usize, params: &TentacleParams) -> Result<TubeSet> {
    let sys = params.sys;
    let n = sys.n;
    if k == 0 {
        return Ok(TubeSet { k, measure: Dyadic::int(2).powi(n as u32), bound: 2f64.powi(n as i32) });
    }
    if k > params.k_top() {
        return Err(Error::InvalidArgument(format!("no widths for generation {k}")));
    }
    let g = params.gen(k);
    let r = sys.r_hat(k);
    let head = r.shl(1).powi(n as u32);
    let body = (&g.a - &r) * g.b.shl(1).powi(n as u32 - 1);
    let measure = (head + body).shl((k * n) as i64);
    let bound = 2f64.powi((k * n) as i32) * (r.to_f64().powi(n as i32) + g.b.to_f64().powi(n as i32 - 1));
    Ok(TubeSet { k, measure, bound })
}

#[derive(Clone, Debug, Serialize)]
pub struct LusinRow {
    pub k: usize,
    pub upsilon: f64,
    /// |g⁻¹L⁻¹h_k(Υ_k)| = head images + body images
    pub image: f64,
    pub head_image: f64,
    pub body_image: f64,
    pub body_error: f64,
    pub generation_volume: f64,
    pub ratio: f64,
}

/// Measure of Υ_k against the measure of its image under g_k⁻¹L_k⁻¹h_k.
///
/// h_k takes T_{v̂(k)} onto head ∪ P̃; (Lg)⁻¹ carries each head affinely onto
/// a generation-k cube of C_A, measured from its corner images, and the
/// straight boxes P̃ are integrated with `resolution` cells per axis.
pub fn lusin_report(f: &CompositeMap, resolution: usize, tol: f64) -> Result<LusinRow> {
    let n = f.n();
    let sys = f.sys;
    let k = f.k;
    let cube = 2f64.powi(n as i32);
    if k == 0 {
        return Ok(LusinRow { k, upsilon: cube, image: cube, head_image: cube, body_image: 0.0, body_error: 0.0, generation_volume: cube, ratio: 1.0 });
    }
    let upsilon = tube_set(k, &f.h.params)?.measure.to_f64();
    let g = f.h.params.gen(k);
    let b = g.b.to_f64();
    let (mut head_image, mut body, mut body_error) = (0.0, 0.0, 0.0);
    for nd in f.h.generation(k) {
        let mut c0 = linalg::zero_vec();
        let mut c1 = linalg::zero_vec();
        for i in 0..n {
            c0[i] = -nd.r;
            c1[i] = nd.r;
        }
        c0[n - 1] += nd.height;
        c1[n - 1] += nd.height;
        let (p0, p1) = (f.lg_inverse(&c0)?.value, f.lg_inverse(&c1)?.value);
        head_image += (0..n).map(|i| p1[i] - p0[i]).product::<f64>();
        let mut blo = [-b; linalg::MAXN];
        let mut bhi = [b; linalg::MAXN];
        blo[0] = nd.r;
        bhi[0] = 2.0 * nd.r;
        blo[n - 1] += nd.height;
        bhi[n - 1] += nd.height;
        let (v, e) = box_integral(n, &blo, &bhi, resolution, |y| f.lg_inverse(y).map(|j| j.j))?;
        body += v;
        body_error += e;
    }
    let image = head_image + body;
    let estimate = body_error / image;
    if estimate > tol {
        // jacobian jumps inside P̃ leave the error first order in the cell size
        let required = (resolution as f64 * estimate / tol).ceil() as usize;
        return Err(Error::TooCoarse { estimate, requested: tol, required: required.max(resolution + 1) });
    }
    Ok(LusinRow {
        k,
        upsilon,
        image,
        head_image,
        body_image: body,
        body_error,
        generation_volume: sys.generation_volume(k, Family::A)?.to_f64(),
        ratio: image / upsilon,
    })
}

/// Tensor Gauss rule on a box split into `cells` per axis: the order-3
/// value and the summed per-cell |order 3 − order 2|.
fn box_integral(n: usize, lo: &[f64], hi: &[f64], cells: usize, mut f: impl FnMut(&Vector) -> Result<f64>) -> Result<(f64, f64)> {
    let (mut value, mut error) = (0.0, 0.0);
    let mut idx = vec![0usize; n];
    loop {
        let mut clo = linalg::zero_vec();
        let mut chi = linalg::zero_vec();
        for a in 0..n {
            let h = (hi[a] - lo[a]) / cells as f64;
            clo[a] = lo[a] + idx[a] as f64 * h;
            chi[a] = clo[a] + h;
        }
        let mut q = [0.0; 2];
        for (slot, order) in [2, 3].into_iter().enumerate() {
            let mut err = None;
            tensor_rule(n, &clo, &chi, order, |y, w| match f(y) {
                Ok(v) => q[slot] += w * v,
                Err(e) => err = Some(e),
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        value += q[1];
        error += (q[1] - q[0]).abs();
        let mut a = 0;
        loop {
            if a == n {
                return Ok((value, error));
            }
            idx[a] += 1;
            if idx[a] < cells {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CauchyRow {
    pub k: usize,
    pub q: f64,
    /// ∫ |Df̃_k − Df̃_{k−1}|^q
    pub value: f64,
    pub error: f64,
    pub k2_value: f64,
    /// |S_k| = ∫_{M_k} J_{(Lg)⁻¹}
    pub support_measure: f64,
    /// ∫_{S_k} J_{f̃_k}, equal to |S_k| because f̃_k maps S_k onto itself
    pub image_measure: f64,
    /// quadrature error of the two measures together
    pub measure_error: f64,
    pub min_jacobian: f64,
    pub max_jacobian: f64,
    pub boxes: usize,
    pub converged: bool,
}

/// The increment of stage k over stage k−1, integrated over S_k only.
///
/// (Lg)⁻¹ has kinks along the pyramid faces of its annulus transfers and
/// pushes, which cut M_k obliquely, so the rule over M_k is refined adaptively.
pub fn cauchy_difference(fk: &CompositeMap, prev: &CompositeMap, q: f64, opts: AdaptiveOptions) -> Result<CauchyRow> {
    let n = fk.n();
    let k = fk.k;
    if prev.k + 1 != k {
        return Err(Error::InvalidArgument(format!("stages {} and {} are not consecutive", prev.k, k)));
    }
    let mut row = CauchyRow {
        k,
        q,
        value: 0.0,
        error: 0.0,
        k2_value: 0.0,
        support_measure: 0.0,
        image_measure: 0.0,
        measure_error: 0.0,
        min_jacobian: f64::INFINITY,
        max_jacobian: 0.0,
        boxes: 0,
        converged: true,
    };
    if k == 0 {
        return Ok(row);
    }
    let (mut jmin, mut jmax) = (f64::INFINITY, 0.0f64);
    let res = adaptive(support_boxes(&fk.h), opts, |tag, p| {
        let node = support_point(&fk.h, tag, p);
        let back = fk.lg_inverse(&node.x)?;
        let (a, b) = (fk.eval(&back.value)?, prev.eval(&back.value)?);
        let diff = linalg::frobenius(n, &linalg::mat_sub(n, &a.d, &b.d));
        jmin = jmin.min(a.j);
        jmax = jmax.max(a.j);
        let w = node.weight * back.j;
        Ok([w * diff.powf(q), w, w * a.j])
    })?;
    row.value = res.value[0];
    row.error = res.error[0];
    row.k2_value = (k * k) as f64 * row.value;
    row.support_measure = res.value[1];
    row.image_measure = res.value[2];
    row.measure_error = res.error[1] + res.error[2];
    row.min_jacobian = jmin;
    row.max_jacobian = jmax;
    row.boxes = res.boxes;
    row.converged = res.converged;
    Ok(row)
}
