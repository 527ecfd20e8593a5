//! Dense reference computations shared by the integration tests. They use
//! plain row-major matrices and textbook algorithms, independent of the
//! crate's banded solvers and uniformization.

#![allow(dead_code)]

use std::io::Write;

use maser_core::linalg::Tridiagonal;

pub type Dense = Vec<Vec<f64>>;

pub fn dense(t: &Tridiagonal) -> Dense {
    let n = t.dim();
    (0..n).map(|i| (0..n).map(|j| t.get(i, j)).collect()).collect()
}

pub fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik != 0.0 {
                for j in 0..n {
                    c[i][j] += aik * b[k][j];
                }
            }
        }
    }
    c
}

/// `e^{tA}` by scaling and squaring of a Taylor series.
pub fn expm(a: &Dense, t: f64) -> Dense {
    let n = a.len();
    let norm = a.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max) * t.abs();
    let mut squarings = 0;
    let mut scale = t;
    while norm * (scale / t).abs() > 0.5 {
        scale /= 2.0;
        squarings += 1;
    }
    let b: Dense = a.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
    let mut result: Dense = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut term = result.clone();
    for k in 1..30 {
        term = matmul(&term, &b);
        for row in term.iter_mut() {
            for x in row.iter_mut() {
                *x /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Dense, mut b: Vec<f64>) -> Vec<f64> {
    let n = a.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Probability vector spanning the null space of a generator, by
/// subtraction-free (GTH) elimination on the off-diagonal rates.
pub fn null_vector(gen: &Tridiagonal) -> Vec<f64> {
    let q = dense(gen);
    let n = q.len();
    // r[i][j]: rate from i to j
    let mut r: Dense = (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { q[j][i] }).collect()).collect();
    let mut out = vec![0.0; n];
    for k in (1..n).rev() {
        let s: f64 = r[k][..k].iter().sum();
        out[k] = s;
        for i in 0..k {
            let rik = r[i][k];
            if rik != 0.0 {
                for j in 0..k {
                    r[i][j] += rik * r[k][j] / s;
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * r[i][k]).sum::<f64>() / out[k];
    }
    let total: f64 = pi.iter().sum();
    pi.iter().map(|x| x / total).collect()
}

/// Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w));
    }
    out
}

pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Prints a criterion outcome in a fixed format. Writes to the stdout handle
/// directly so the line also shows for passing tests under output capture.
pub fn report(id: &str, pass: bool, detail: &str) {
    let line = format!("[acceptance {id}] {}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}
