//! Gauss–Legendre rules.

use std::sync::OnceLock;

use crate::error::Result;
use crate::linalg::{Vector, MAXN};

const MAX_ORDER: usize = 24;

fn table() -> &'static Vec<(Vec<f64>, Vec<f64>)> {
    static T: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    T.get_or_init(|| (0..=MAX_ORDER).map(compute).collect())
}

/// Newton iteration on P_m from the Chebyshev-like initial guess.
fn compute(m: usize) -> (Vec<f64>, Vec<f64>) {
    if m == 0 {
        return (vec![], vec![]);
    }
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (z * pm - pm1) / (z * z - 1.0);
            let dz = pm / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Nodes and weights on [-1, 1].
pub fn gauss_legendre(m: usize) -> (&'static [f64], &'static [f64]) {
    assert!((1..=MAX_ORDER).contains(&m), "order {m} outside 1..={MAX_ORDER}");
    let (x, w) = &table()[m];
    (x, w)
}

/// Nodes and weights mapped to [a, b].
pub fn rule_on(m: usize, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let (x, w) = gauss_legendre(m);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    x.iter().zip(w).map(move |(xi, wi)| (c + h * xi, h * wi))
}

/// Tensor Gauss rule of one order on the box [lo, hi] in the first `dim` axes.
pub fn tensor_rule(dim: usize, lo: &[f64], hi: &[f64], order: usize, mut f: impl FnMut(&Vector, f64)) {
    let (x, w) = gauss_legendre(order);
    let mut idx = [0usize; MAXN];
    loop {
        let mut p = [0.0; MAXN];
        let mut wt = 1.0;
        for a in 0..dim {
            let h = 0.5 * (hi[a] - lo[a]);
            p[a] = 0.5 * (lo[a] + hi[a]) + h * x[idx[a]];
            wt *= h * w[idx[a]];
        }
        f(&p, wt);
        let mut a = 0;
        loop {
            if a == dim {
                return;
            }
            idx[a] += 1;
            if idx[a] < order {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

/// A parameter box carrying a caller tag that says how to map it.
#[derive(Clone, Copy, Debug)]
pub struct ParamBox<T> {
    pub tag: T,
    pub dim: usize,
    pub lo: Vector,
    pub hi: Vector,
}

impl<T: Copy> ParamBox<T> {
    /// The 2^dim halves.
    pub fn split(&self) -> Vec<ParamBox<T>> {
        (0..1usize << self.dim)
            .map(|code| {
                let mut c = *self;
                for a in 0..self.dim {
                    let mid = 0.5 * (self.lo[a] + self.hi[a]);
                    if code >> a & 1 == 0 {
                        c.hi[a] = mid;
                    } else {
                        c.lo[a] = mid;
                    }
                }
                c
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdaptiveOptions {
    pub low: usize,
    pub high: usize,
    /// stop once every component's summed |high − low| is below rel_tol·|value|
    pub rel_tol: f64,
    /// hard cap on evaluated boxes
    pub max_boxes: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions { low: 2, high: 3, rel_tol: 1e-3, max_boxes: 100_000 }
    }
}

#[derive(Clone, Debug)]
pub struct Adaptive<T, const M: usize> {
    pub value: [f64; M],
    pub error: [f64; M],
    pub boxes: usize,
    pub converged: bool,
    /// the final partition
    pub leaves: Vec<ParamBox<T>>,
}

struct Leaf<T, const M: usize> {
    cell: ParamBox<T>,
    value: [f64; M],
    error: [f64; M],
}

struct Ranked {
    key: f64,
    seq: usize,
}

impl PartialEq for Ranked {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == std::cmp::Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Ranked {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.key.total_cmp(&o.key).then(o.seq.cmp(&self.seq))
    }
}

/// Globally adaptive cubature: the box with the largest scaled Gauss
/// low/high discrepancy is bisected in every axis until the summed
/// discrepancy meets the tolerance. `f` returns the integrand, already
/// multiplied by the jacobian of the box parametrisation.
pub fn adaptive<T: Copy, const M: usize>(
    boxes: Vec<ParamBox<T>>,
    opts: AdaptiveOptions,
    mut f: impl FnMut(&T, &Vector) -> Result<[f64; M]>,
) -> Result<Adaptive<T, M>> {
    let mut eval = |c: &ParamBox<T>| -> Result<Leaf<T, M>> {
        let mut q = [[0.0; M]; 2];
        let mut err = None;
        for (slot, order) in [opts.low, opts.high].into_iter().enumerate() {
            tensor_rule(c.dim, &c.lo, &c.hi, order, |p, w| {
                if err.is_some() {
                    return;
                }
                match f(&c.tag, p) {
                    Ok(v) => (0..M).for_each(|i| q[slot][i] += w * v[i]),
                    Err(e) => err = Some(e),
                }
            });
        }
        if let Some(e) = err {
            return Err(e);
        }
        Ok(Leaf { cell: *c, value: q[1], error: std::array::from_fn(|i| (q[1][i] - q[0][i]).abs()) })
    };
    let mut leaves = Vec::with_capacity(boxes.len());
    for c in &boxes {
        leaves.push(Some(eval(c)?));
    }
    let mut count = leaves.len();
    let total = |leaves: &[Option<Leaf<T, M>>]| {
        let mut v = [0.0; M];
        let mut e = [0.0; M];
        for l in leaves.iter().flatten() {
            (0..M).for_each(|i| {
                v[i] += l.value[i];
                e[i] += l.error[i];
            });
        }
        (v, e)
    };
    let (v0, _) = total(&leaves);
    let scale: [f64; M] = std::array::from_fn(|i| if v0[i].abs() > 0.0 { v0[i].abs() } else { 1.0 });
    let rank = |l: &Leaf<T, M>| (0..M).map(|i| l.error[i] / scale[i]).fold(0.0, f64::max);
    let mut heap: std::collections::BinaryHeap<Ranked> = leaves.iter().enumerate().map(|(seq, l)| Ranked { key: rank(l.as_ref().unwrap()), seq }).collect();
    let (mut value, mut error) = total(&leaves);
    let met = |v: &[f64; M], e: &[f64; M]| (0..M).all(|i| e[i] <= opts.rel_tol * v[i].abs());
    while !met(&value, &error) && count < opts.max_boxes {
        let Some(top) = heap.pop() else { break };
        let leaf = leaves[top.seq].take().unwrap();
        for i in 0..M {
            value[i] -= leaf.value[i];
            error[i] -= leaf.error[i];
        }
        for c in leaf.cell.split() {
            let l = eval(&c)?;
            for i in 0..M {
                value[i] += l.value[i];
                error[i] += l.error[i];
            }
            heap.push(Ranked { key: rank(&l), seq: leaves.len() });
            leaves.push(Some(l));
            count += 1;
        }
    }
    let (value, error) = total(&leaves);
    let converged = met(&value, &error);
    Ok(Adaptive { value, error, boxes: count, converged, leaves: leaves.into_iter().flatten().map(|l| l.cell).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for m in 1..=12 {
            for p in 0..2 * m {
                let got: f64 = rule_on(m, -0.5, 2.0).map(|(x, w)| w * x.powi(p as i32)).sum();
                let want = (2f64.powi(p as i32 + 1) - (-0.5f64).powi(p as i32 + 1)) / (p + 1) as f64;
                assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "m={m} p={p}");
            }
        }
    }

    fn unit_box(dim: usize) -> ParamBox<()> {
        let mut hi = [0.0; MAXN];
        hi[..dim].fill(1.0);
        ParamBox { tag: (), dim, lo: [0.0; MAXN], hi }
    }

    #[test]
    fn adaptive_is_exact_on_low_degree_and_stops_at_once() {
        let r = adaptive(vec![unit_box(3)], AdaptiveOptions::default(), |_, p| Ok([p[0] * p[1] * p[1] + p[2]])).unwrap();
        assert_eq!(r.boxes, 1);
        assert!((r.value[0] - (1.0 / 6.0 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn adaptive_resolves_an_oblique_jump() {
        let opts = AdaptiveOptions { rel_tol: 1e-3, max_boxes: 200_000, ..Default::default() };
        let r = adaptive(vec![unit_box(2)], opts, |_, p| Ok([if p[0] + 0.7 * p[1] < 0.9 { 1.0 } else { 0.0 }])).unwrap();
        // ∫_0^1 (0.9 − 0.7y) dy, the line stays inside the square
        let want = 0.55;
        assert!(r.converged);
        assert!((r.value[0] - want).abs() < 2e-3, "{} vs {want}", r.value[0]);
    }
}
