//! Fixed-size vectors and matrices for ambient dimension n <= 4.
//!
//! Hot loops evaluate millions of jets; a stack array with the dimension
//! carried alongside avoids per-point allocation. Unused slots stay zero.

pub const MAXN: usize = 4;

pub type Vector = [f64; MAXN];
pub type Matrix = [[f64; MAXN]; MAXN];

pub fn zero_vec() -> Vector {
    [0.0; MAXN]
}

pub fn identity(n: usize) -> Matrix {
    let mut m = [[0.0; MAXN]; MAXN];
    for (i, row) in m.iter_mut().enumerate().take(n) {
        row[i] = 1.0;
    }
    m
}

pub fn scalar(n: usize, s: f64) -> Matrix {
    let mut m = identity(n);
    for (i, row) in m.iter_mut().enumerate().take(n) {
        row[i] = s;
    }
    m
}

pub fn from_slice(x: &[f64]) -> Vector {
    assert!(x.len() <= MAXN, "dimension {} exceeds {}", x.len(), MAXN);
    let mut v = zero_vec();
    v[..x.len()].copy_from_slice(x);
    v
}

pub fn matmul(n: usize, a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = [[0.0; MAXN]; MAXN];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

pub fn matvec(n: usize, a: &Matrix, x: &Vector) -> Vector {
    let mut y = zero_vec();
    for i in 0..n {
        y[i] = (0..n).map(|j| a[i][j] * x[j]).sum();
    }
    y
}

/// Determinant by partial-pivot elimination.
pub fn det(n: usize, a: &Matrix) -> f64 {
    let mut m = *a;
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            d = -d;
        }
        d *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    d
}

/// Inverse by Gauss-Jordan; `None` for singular input.
pub fn inverse(n: usize, a: &Matrix) -> Option<Matrix> {
    let mut m = *a;
    let mut inv = identity(n);
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        if m[p][c] == 0.0 {
            return None;
        }
        m.swap(p, c);
        inv.swap(p, c);
        let piv = m[c][c];
        for k in 0..n {
            m[c][k] /= piv;
            inv[c][k] /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..n {
                        m[r][k] -= f * m[c][k];
                        inv[r][k] -= f * inv[c][k];
                    }
                }
            }
        }
    }
    Some(inv)
}

pub fn frobenius(n: usize, a: &Matrix) -> f64 {
    let mut s = 0.0;
    for row in a.iter().take(n) {
        for v in row.iter().take(n) {
            s += v * v;
        }
    }
    s.sqrt()
}

/// Largest singular value, by power iteration on AᵀA.
pub fn op_norm(n: usize, a: &Matrix) -> f64 {
    let mut ata = [[0.0; MAXN]; MAXN];
    for i in 0..n {
        for j in 0..n {
            ata[i][j] = (0..n).map(|r| a[r][i] * a[r][j]).sum();
        }
    }
    let mut v = [0.0; MAXN];
    for (i, c) in v.iter_mut().take(n).enumerate() {
        *c = 1.0 + 0.1 * i as f64;
    }
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = matvec(n, &ata, &v);
        let norm = euclid(n, &w);
        if norm == 0.0 {
            return 0.0;
        }
        for i in 0..n {
            v[i] = w[i] / norm;
        }
        lambda = norm;
    }
    lambda.sqrt()
}

pub fn sup_norm(n: usize, x: &Vector) -> f64 {
    x.iter().take(n).fold(0.0, |m, v| m.max(v.abs()))
}

pub fn euclid(n: usize, x: &Vector) -> f64 {
    x.iter().take(n).map(|v| v * v).sum::<f64>().sqrt()
}

pub fn sub(n: usize, a: &Vector, b: &Vector) -> Vector {
    let mut c = zero_vec();
    for i in 0..n {
        c[i] = a[i] - b[i];
    }
    c
}

pub fn add(n: usize, a: &Vector, b: &Vector) -> Vector {
    let mut c = zero_vec();
    for i in 0..n {
        c[i] = a[i] + b[i];
    }
    c
}

pub fn mat_sub(n: usize, a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = [[0.0; MAXN]; MAXN];
    for i in 0..n {
        for j in 0..n {
            c[i][j] = a[i][j] - b[i][j];
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_and_inverse_agree() {
        let a: Matrix = [[2.0, 1.0, 0.0, 0.0], [0.5, 3.0, -1.0, 0.0], [0.0, 1.0, 4.0, 0.0], [0.0, 0.0, 0.0, 0.0]];
        let d = det(3, &a);
        assert!((d - (2.0 * 13.0 - 1.0 * 2.0)).abs() < 1e-12);
        let inv = inverse(3, &a).unwrap();
        let p = matmul(3, &a, &inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p[i][j] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn op_norm_of_diagonal_and_shear() {
        let mut d = identity(3);
        d[1][1] = 5.0;
        d[2][2] = 0.5;
        assert!((op_norm(3, &d) - 5.0).abs() < 1e-12);
        let mut s = identity(2);
        s[0][1] = 1.0;
        // singular values of [[1,1],[0,1]] are the golden ratio and its inverse
        assert!((op_norm(2, &s) - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
    }
}
