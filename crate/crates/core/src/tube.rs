//! Thick axis-aligned polylines in the (x_1, x_n) plane and their
//! unbending coordinates.
//!
//! A tube of half-width w around a polyline with 90° turns is the union of
//! the segment boxes, each extended by w at interior joints. Local
//! coordinates are (s, ν, u): arc length along the centerline, signed
//! in-plane offset (left normal positive) and the n−2 out-of-plane
//! coordinates. Straight pieces are rigid; the square at each corner is
//! parametrized by nested L-shaped fibres, so the unbent tube is exactly
//! the box [0, L) × (−w, w)^{n−1} and the volume is L·(2w)^{n−1}.

use crate::linalg::{self, Matrix, Vector};

pub type P2 = [f64; 2];

fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn left(d: P2) -> P2 {
    [-d[1], d[0]]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Piece {
    Straight(usize),
    /// Corner at interior vertex `i`; leg 0 is the incoming half.
    Corner(usize, u8),
}

#[derive(Clone, Debug)]
pub struct Tube {
    pub n: usize,
    pub verts: Vec<P2>,
    pub dirs: Vec<P2>,
    /// arc length at each vertex
    pub cum: Vec<f64>,
    pub w: f64,
    lo: P2,
    hi: P2,
}

impl Tube {
    /// Panics on degenerate or non-axis-aligned input; routes are built exactly upstream.
    pub fn new(n: usize, verts: Vec<P2>, w: f64) -> Self {
        assert!(verts.len() >= 2);
        let mut dirs = Vec::new();
        let mut cum = vec![0.0];
        for s in verts.windows(2) {
            let d = [s[1][0] - s[0][0], s[1][1] - s[0][1]];
            let len = d[0].abs() + d[1].abs();
            assert!(len > 0.0 && (d[0] == 0.0 || d[1] == 0.0), "segment must be axis aligned");
            dirs.push([d[0] / len, d[1] / len]);
            cum.push(cum.last().unwrap() + len);
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &verts {
            for a in 0..2 {
                lo[a] = lo[a].min(v[a] - w);
                hi[a] = hi[a].max(v[a] + w);
            }
        }
        Tube { n, verts, dirs, cum, w, lo, hi }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn segments(&self) -> usize {
        self.dirs.len()
    }

    /// Turn sign at interior vertex i: +1 left, −1 right.
    pub fn turn(&self, i: usize) -> f64 {
        let (a, b) = (self.dirs[i - 1], self.dirs[i]);
        (a[0] * b[1] - a[1] * b[0]).signum()
    }

    /// Arc-length range of each piece, in order along the tube.
    pub fn pieces(&self) -> Vec<(Piece, f64, f64)> {
        let m = self.segments();
        let mut out = Vec::new();
        for i in 0..m {
            let a = self.cum[i] + if i > 0 { self.w } else { 0.0 };
            let b = self.cum[i + 1] - if i + 1 < m { self.w } else { 0.0 };
            if i > 0 {
                out.push((Piece::Corner(i, 1), self.cum[i], a));
            }
            out.push((Piece::Straight(i), a, b));
            if i + 1 < m {
                out.push((Piece::Corner(i + 1, 0), b, self.cum[i + 1]));
            }
        }
        out
    }

    fn piece_at(&self, s: f64) -> Piece {
        let m = self.segments();
        for i in 1..m {
            if s < self.cum[i] - self.w {
                return Piece::Straight(i - 1);
            }
            if s < self.cum[i] {
                return Piece::Corner(i, 0);
            }
            if s < self.cum[i] + self.w {
                return Piece::Corner(i, 1);
            }
        }
        Piece::Straight(m - 1)
    }

    /// World point and plane tangent vectors ∂/∂s, ∂/∂ν at (s, ν).
    fn plane_map(&self, s: f64, nu: f64) -> (P2, P2, P2) {
        match self.piece_at(s) {
            Piece::Straight(i) => {
                let (v, d) = (self.verts[i], self.dirs[i]);
                let nrm = left(d);
                let t = s - self.cum[i];
                ([v[0] + t * d[0] + nu * nrm[0], v[1] + t * d[1] + nu * nrm[1]], d, nrm)
            }
            Piece::Corner(i, _) => {
                let w = self.w;
                let sg = self.turn(i);
                let din = self.dirs[i - 1];
                let nin = left(din);
                let v = self.verts[i];
                let p = [v[0] + sg * w * nin[0] - w * din[0], v[1] + sg * w * nin[1] - w * din[1]];
                let rho = w - sg * nu;
                let theta = (s - (self.cum[i] - w)) / (2.0 * w);
                let a = 2.0 * rho * theta;
                if theta <= 0.5 {
                    let x = [p[0] - sg * rho * nin[0] + a * din[0], p[1] - sg * rho * nin[1] + a * din[1]];
                    let ds = [rho / w * din[0], rho / w * din[1]];
                    let dn = [nin[0] - 2.0 * sg * theta * din[0], nin[1] - 2.0 * sg * theta * din[1]];
                    (x, ds, dn)
                } else {
                    let c = sg * (a - 2.0 * rho);
                    let x = [p[0] + rho * din[0] + c * nin[0], p[1] + rho * din[1] + c * nin[1]];
                    let ds = [sg * rho / w * nin[0], sg * rho / w * nin[1]];
                    let k = 2.0 * (1.0 - theta);
                    let dn = [-sg * din[0] + k * nin[0], -sg * din[1] + k * nin[1]];
                    (x, ds, dn)
                }
            }
        }
    }

    /// Local (s, ν, u) → world point and derivative.
    pub fn to_world(&self, l: &Vector) -> (Vector, Matrix) {
        let n = self.n;
        let (p, ds, dn) = self.plane_map(l[0], l[1]);
        let mut x = linalg::zero_vec();
        let mut d = [[0.0; linalg::MAXN]; linalg::MAXN];
        x[0] = p[0];
        x[n - 1] = p[1];
        d[0][0] = ds[0];
        d[n - 1][0] = ds[1];
        d[0][1] = dn[0];
        d[n - 1][1] = dn[1];
        for i in 1..n - 1 {
            x[i] = l[i + 1];
            d[i][i + 1] = 1.0;
        }
        (x, d)
    }

    /// |det| of the derivative of `to_world`: 1 on straight pieces, ρ/w in corners.
    pub fn volume_factor(&self, l: &Vector) -> f64 {
        match self.piece_at(l[0]) {
            Piece::Straight(_) => 1.0,
            Piece::Corner(i, _) => (self.w - self.turn(i) * l[1]) / self.w,
        }
    }

    pub fn bbox_contains(&self, x: &Vector) -> bool {
        let n = self.n;
        let (a, b) = (x[0], x[n - 1]);
        a > self.lo[0] && a < self.hi[0] && b > self.lo[1] && b < self.hi[1] && (1..n - 1).all(|i| x[i].abs() < self.w)
    }

    /// Local coordinates of a world point strictly inside the tube.
    pub fn to_local(&self, x: &Vector) -> Option<Vector> {
        if !self.bbox_contains(x) {
            return None;
        }
        let n = self.n;
        let pt = [x[0], x[n - 1]];
        let w = self.w;
        let m = self.segments();
        let mut l = linalg::zero_vec();
        l[2..n].copy_from_slice(&x[1..n - 1]);
        for i in 1..m {
            let sg = self.turn(i);
            let din = self.dirs[i - 1];
            let nin = left(din);
            let v = self.verts[i];
            let p = [v[0] + sg * w * nin[0] - w * din[0], v[1] + sg * w * nin[1] - w * din[1]];
            let q = [pt[0] - p[0], pt[1] - p[1]];
            let alpha = dot(q, din);
            let gamma = -sg * dot(q, nin);
            if alpha >= 0.0 && alpha <= 2.0 * w && gamma >= 0.0 && gamma <= 2.0 * w {
                let rho = alpha.max(gamma);
                if rho <= 0.0 || rho >= 2.0 * w {
                    return None;
                }
                let a = if gamma >= alpha { alpha } else { 2.0 * rho - gamma };
                l[0] = self.cum[i] - w + w * a / rho;
                l[1] = sg * (w - rho);
                return Some(l);
            }
        }
        for i in 0..m {
            let (v, d) = (self.verts[i], self.dirs[i]);
            let q = [pt[0] - v[0], pt[1] - v[1]];
            let along = dot(q, d);
            let nu = dot(q, left(d));
            let lo = if i > 0 { w } else { 0.0 };
            let hi = self.cum[i + 1] - self.cum[i] - if i + 1 < m { w } else { 0.0 };
            if along >= lo && along <= hi && nu.abs() < w {
                let s = self.cum[i] + along;
                if s <= 0.0 || s >= self.length() {
                    return None;
                }
                l[0] = s;
                l[1] = nu;
                return Some(l);
            }
        }
        None
    }

    /// Centerline point at arc length s.
    pub fn centerline(&self, s: f64) -> Vector {
        self.to_world(&{
            let mut l = linalg::zero_vec();
            l[0] = s;
            l
        })
        .0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s_tube(n: usize) -> Tube {
        // right, up (left turn), right (right turn), down (right turn)
        Tube::new(n, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.6], [1.8, 0.6], [1.8, -0.5]], 0.1)
    }

    #[test]
    fn local_world_round_trip_and_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 3] {
            let t = s_tube(n);
            for _ in 0..20000 {
                let mut l = linalg::zero_vec();
                l[0] = rng.gen_range(1e-6..t.length() - 1e-6);
                for c in l.iter_mut().take(n).skip(1) {
                    *c = rng.gen_range(-0.0999..0.0999);
                }
                let (x, d) = t.to_world(&l);
                let back = t.to_local(&x).expect("inside");
                for i in 0..n {
                    assert!((back[i] - l[i]).abs() < 1e-12, "{:?} vs {:?}", back, l);
                }
                // plane axes are x_1 and x_n, so the sign depends on n; the volume factor is |det|
                let det = linalg::det(n, &d).abs();
                assert!((det - t.volume_factor(&l)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn volume_is_length_times_section() {
        // Monte Carlo membership against L·(2w)
        let t = s_tube(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (lo, hi) = ([-0.2, -0.7], [2.0, 0.8]);
        let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        let trials = 400_000;
        let mut hit = 0;
        for _ in 0..trials {
            let x = linalg::from_slice(&[rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])]);
            if t.to_local(&x).is_some() {
                hit += 1;
            }
        }
        let est = area * hit as f64 / trials as f64;
        let want = t.length() * 0.2;
        assert!((est - want).abs() < 0.01 * want, "{est} vs {want}");
    }
}
