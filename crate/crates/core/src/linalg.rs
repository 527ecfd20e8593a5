//! Tridiagonal matrices: products, banded solves, and exponential actions.
//!
//! Every generator in this crate acts on the diagonal sector of the cavity and
//! couples only neighbouring Fock levels, so a tridiagonal representation is
//! exact. Exponentials are computed by uniformization, which keeps
//! nonnegative vectors nonnegative.

use crate::error::{MaserError, Result};

/// Square tridiagonal matrix.
///
/// `sub[i]` is the entry at row `i + 1`, column `i`; `sup[i]` the entry at
/// row `i`, column `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "tridiagonal matrix needs a positive dimension");
        Tridiagonal {
            sub: vec![0.0; dim - 1],
            diag: vec![0.0; dim],
            sup: vec![0.0; dim - 1],
        }
    }

    pub fn from_diagonal(diag: Vec<f64>) -> Self {
        let n = diag.len();
        assert!(n > 0, "tridiagonal matrix needs a positive dimension");
        Tridiagonal {
            sub: vec![0.0; n - 1],
            diag,
            sup: vec![0.0; n - 1],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Entry at `(row, col)`; zero outside the band.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        if row == col {
            self.diag[row]
        } else if row == col + 1 {
            self.sub[col]
        } else if col == row + 1 {
            self.sup[row]
        } else {
            0.0
        }
    }

    /// `out = self * x`.
    pub fn mul_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        if n == 1 {
            out[0] = self.diag[0] * x[0];
            return;
        }
        out[0] = self.diag[0] * x[0] + self.sup[0] * x[1];
        for i in 1..n - 1 {
            out[i] = self.sub[i - 1] * x[i - 1] + self.diag[i] * x[i] + self.sup[i] * x[i + 1];
        }
        out[n - 1] = self.sub[n - 2] * x[n - 2] + self.diag[n - 1] * x[n - 1];
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.mul_into(x, &mut out);
        out
    }

    /// Sum of each column, i.e. `1ᵀ A`.
    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|j| {
                let mut s = self.diag[j];
                if j > 0 {
                    s += self.sup[j - 1];
                }
                if j + 1 < n {
                    s += self.sub[j];
                }
                s
            })
            .collect()
    }

    fn zip_with(&self, other: &Tridiagonal, f: impl Fn(f64, f64) -> f64) -> Tridiagonal {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        let z = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        Tridiagonal {
            sub: z(&self.sub, &other.sub),
            diag: z(&self.diag, &other.diag),
            sup: z(&self.sup, &other.sup),
        }
    }

    pub fn plus(&self, other: &Tridiagonal) -> Tridiagonal {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn minus(&self, other: &Tridiagonal) -> Tridiagonal {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scaled(&self, c: f64) -> Tridiagonal {
        Tridiagonal {
            sub: self.sub.iter().map(|x| x * c).collect(),
            diag: self.diag.iter().map(|x| x * c).collect(),
            sup: self.sup.iter().map(|x| x * c).collect(),
        }
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i].abs();
                if i > 0 {
                    s += self.sub[i - 1].abs();
                }
                if i + 1 < n {
                    s += self.sup[i].abs();
                }
                s
            })
            .fold(0.0, f64::max)
    }
}

/// LU factorization with partial pivoting of a tridiagonal matrix.
///
/// Row interchanges introduce a second superdiagonal, stored in `du2`.
#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

/// Smallest accepted ratio between the smallest and largest pivot magnitude.
const PIVOT_RATIO_FLOOR: f64 = 1e-14;

impl TridiagonalLu {
    pub fn factor(a: &Tridiagonal) -> Result<Self> {
        let n = a.dim();
        let mut dl = a.sub.clone();
        let mut d = a.diag.clone();
        let mut du = a.sup.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    return Err(MaserError::Solve(format!("zero pivot at row {i}")));
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du2[i];
                }
                swapped[i] = true;
            }
        }
        let max_pivot = d.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let min_pivot = d.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
        if !(min_pivot > PIVOT_RATIO_FLOOR * max_pivot) {
            return Err(MaserError::Solve(format!(
                "near-singular system (pivot ratio {:.3e})",
                min_pivot / max_pivot
            )));
        }
        Ok(TridiagonalLu {
            dl,
            d,
            du,
            du2,
            swapped,
        })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.d.len();
        debug_assert_eq!(b.len(), n);
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                b.swap(i, i + 1);
            }
            b[i + 1] -= self.dl[i] * b[i];
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `gen * x = rhs` with one step of iterative refinement.
///
/// Fails when the factorization is near singular or the refined residual
/// exceeds `1e-10 * |rhs|`.
pub fn solve_resolvent(gen: &Tridiagonal, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != gen.dim() {
        return Err(MaserError::Domain(format!(
            "right-hand side has length {}, expected {}",
            rhs.len(),
            gen.dim()
        )));
    }
    let rhs_norm = norm_inf(rhs);
    if rhs_norm == 0.0 {
        return Ok(vec![0.0; rhs.len()]);
    }
    let lu = TridiagonalLu::factor(gen)?;
    let mut x = rhs.to_vec();
    lu.solve_in_place(&mut x);
    let residual = |x: &[f64]| -> Vec<f64> {
        let ax = gen.mul(x);
        rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
    };
    let mut r = residual(&x);
    lu.solve_in_place(&mut r);
    for (xi, ri) in x.iter_mut().zip(&r) {
        *xi += ri;
    }
    let res = norm_inf(&residual(&x));
    if !(res <= 1e-10 * rhs_norm) {
        return Err(MaserError::Solve(format!(
            "residual {res:.3e} exceeds tolerance for |rhs| = {rhs_norm:.3e}"
        )));
    }
    Ok(x)
}

/// Largest `rate * tau` handled in a single uniformization pass.
const CHUNK_RATE_TIME: f64 = 100.0;
/// Relative truncation tolerance of the Poisson series.
const SERIES_TOL: f64 = 1e-17;
const MAX_TERMS: usize = 100_000;

/// Precomputed uniformization of a generator-like tridiagonal matrix.
///
/// Writing `G = (G + d I) - d I` with `d = min_n(-G_nn)`, the exponential is
/// `e^{-d t} e^{-Λ t} Σ_k (Λ t)^k / k! · P^k` where `P = I + (G + d I) / Λ` and
/// `Λ = max_n(-G_nn) - d`. `P` is entrywise nonnegative whenever the
/// off-diagonal entries of `G` are, which holds for every generator, jump-free
/// generator and survival generator of the model.
#[derive(Debug, Clone)]
pub struct Propagator {
    step: Tridiagonal,
    rate: f64,
    shift: f64,
    /// Largest column 1-norm of `P`, which bounds `|P^k v| / |v|` by
    /// `growth^k`.
    growth: f64,
}

/// Scratch buffers reused across propagations.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    term: Vec<f64>,
    next: Vec<f64>,
    acc: Vec<f64>,
}

impl Workspace {
    fn ensure(&mut self, n: usize) {
        if self.term.len() != n {
            self.term = vec![0.0; n];
            self.next = vec![0.0; n];
            self.acc = vec![0.0; n];
        }
    }
}

impl Propagator {
    pub fn new(gen: &Tridiagonal) -> Self {
        let neg_diag = gen.diag.iter().map(|d| -d);
        let shift = neg_diag.clone().fold(f64::INFINITY, f64::min);
        let rate = neg_diag.fold(f64::NEG_INFINITY, f64::max) - shift;
        // With a vanishing rate the diagonal is constant and P keeps only the
        // off-diagonals, which must then vanish (checked when applied).
        let mut step = if rate > 0.0 { gen.scaled(1.0 / rate) } else { gen.clone() };
        for d in step.diag.iter_mut() {
            *d = if rate > 0.0 { *d + 1.0 + shift / rate } else { 1.0 };
        }
        let n = step.dim();
        let growth = (0..n)
            .map(|j| {
                let mut c = step.diag[j].abs();
                if j > 0 {
                    c += step.sup[j - 1].abs();
                }
                if j + 1 < n {
                    c += step.sub[j].abs();
                }
                c
            })
            .fold(1.0, f64::max);
        Propagator {
            step,
            rate,
            shift,
            growth,
        }
    }

    pub fn dim(&self) -> usize {
        self.step.dim()
    }

    pub fn uniformization_rate(&self) -> f64 {
        self.rate
    }

    /// Returns `e^{tau G} v`.
    pub fn apply(&self, v: &[f64], tau: f64) -> Result<Vec<f64>> {
        let mut out = v.to_vec();
        let mut ws = Workspace::default();
        let log_scale = self.apply_scaled(&mut out, tau, &mut ws)?;
        let scale = log_scale.exp();
        for x in out.iter_mut() {
            *x *= scale;
        }
        Ok(out)
    }

    /// Replaces `v` by `e^{tau G} v / s` with `s` the 1-norm of the result,
    /// returning `ln s`. A zero vector stays zero and reports `ln s = 0`.
    pub fn apply_scaled(&self, v: &mut [f64], tau: f64, ws: &mut Workspace) -> Result<f64> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(MaserError::Domain(format!(
                "propagation time must be finite and nonnegative, got {tau}"
            )));
        }
        if v.len() != self.dim() {
            return Err(MaserError::Domain(format!(
                "vector has length {}, expected {}",
                v.len(),
                self.dim()
            )));
        }
        let mut log_scale = normalize_l1(v);
        if log_scale == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        if tau == 0.0 {
            return Ok(log_scale);
        }
        if self.rate == 0.0 {
            if self.shift != 0.0 {
                log_scale -= self.shift * tau;
            }
            let off_diagonal = self.step.sub.iter().chain(&self.step.sup).any(|&x| x != 0.0);
            if off_diagonal {
                return Err(MaserError::Numerical(
                    "generator with constant diagonal and transport is not supported".into(),
                ));
            }
            return Ok(log_scale);
        }
        let chunks = (self.rate * tau / CHUNK_RATE_TIME).ceil().max(1.0);
        let h = tau / chunks;
        ws.ensure(v.len());
        for _ in 0..chunks as usize {
            self.uniformize_chunk(v, h, ws)?;
            log_scale -= self.shift * h;
            let s = normalize_l1(v);
            if s == f64::NEG_INFINITY {
                return Ok(0.0);
            }
            log_scale += s;
        }
        Ok(log_scale)
    }

    fn uniformize_chunk(&self, v: &mut [f64], h: f64, ws: &mut Workspace) -> Result<()> {
        let x = self.rate * h;
        let xg = x * self.growth;
        let mut w = (-x).exp();
        ws.term.copy_from_slice(v);
        for (a, t) in ws.acc.iter_mut().zip(&ws.term) {
            *a = w * t;
        }
        let mut k = 0usize;
        loop {
            k += 1;
            if k > MAX_TERMS {
                return Err(MaserError::Numerical(
                    "uniformization series did not converge".into(),
                ));
            }
            self.step.mul_into(&ws.term, &mut ws.next);
            std::mem::swap(&mut ws.term, &mut ws.next);
            w *= x / k as f64;
            let mut term_norm = 0.0;
            let mut acc_norm = 0.0;
            for (a, t) in ws.acc.iter_mut().zip(&ws.term) {
                *a += w * t;
                term_norm += t.abs();
                acc_norm += a.abs();
            }
            let q = xg / (k as f64 + 1.0);
            if q < 1.0 {
                // Later terms shrink at least geometrically with ratio q.
                let tail = w * term_norm * q / (1.0 - q);
                if tail <= SERIES_TOL * acc_norm || term_norm == 0.0 {
                    break;
                }
            }
        }
        v.copy_from_slice(&ws.acc);
        Ok(())
    }
}

/// Divides `v` by its 1-norm and returns the log of that norm
/// (`-inf` for a zero vector, which is left unchanged).
pub(crate) fn normalize_l1(v: &mut [f64]) -> f64 {
    let s: f64 = v.iter().map(|x| x.abs()).sum();
    if s == 0.0 || !s.is_finite() {
        return if s == 0.0 { f64::NEG_INFINITY } else { s };
    }
    let inv = 1.0 / s;
    for x in v.iter_mut() {
        *x *= inv;
    }
    s.ln()
}

/// `e^{tau G} v` for a tridiagonal generator `G`.
pub fn apply_expm(gen: &Tridiagonal, v: &[f64], tau: f64) -> Result<Vec<f64>> {
    Propagator::new(gen).apply(v, tau)
}

/// Eigenvalue of largest real part of a tridiagonal matrix whose off-diagonal
/// entries are nonnegative.
///
/// Such a matrix is diagonally similar to the symmetric tridiagonal matrix
/// with off-diagonals `sqrt(sub[i] * sup[i])`, so its spectrum is real. The
/// largest eigenvalue is bracketed by Sturm-sequence bisection and polished by
/// shifted inverse iteration on the Rayleigh quotient.
pub fn leading_eigenvalue(a: &Tridiagonal) -> Result<f64> {
    let n = a.dim();
    if a.sub.iter().chain(&a.sup).any(|&x| x < 0.0) {
        return Err(MaserError::Domain(
            "leading eigenvalue requires nonnegative off-diagonal entries".into(),
        ));
    }
    let off: Vec<f64> = a.sub.iter().zip(&a.sup).map(|(l, u)| (l * u).sqrt()).collect();
    let diag = &a.diag;
    if n == 1 {
        return Ok(diag[0]);
    }
    let radius = |i: usize| {
        let mut r = 0.0;
        if i > 0 {
            r += off[i - 1];
        }
        if i + 1 < n {
            r += off[i];
        }
        r
    };
    let mut lo = (0..n).map(|i| diag[i] - radius(i)).fold(f64::INFINITY, f64::min);
    let mut hi = (0..n).map(|i| diag[i] + radius(i)).fold(f64::NEG_INFINITY, f64::max);
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    // Number of eigenvalues strictly below x.
    let count_below = |x: f64| -> usize {
        let tiny = f64::EPSILON * scale * 1e-3;
        let mut count = 0;
        let mut q = diag[0] - x;
        for i in 0..n {
            if i > 0 {
                q = diag[i] - x - off[i - 1] * off[i - 1] / q;
            }
            if q == 0.0 {
                q = -tiny;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * scale {
            break;
        }
    }
    let bracket = (lo, hi);
    let mut lambda = 0.5 * (lo + hi);

    // Inverse iteration on the symmetrized matrix.
    let sym = Tridiagonal {
        sub: off.clone(),
        diag: diag.clone(),
        sup: off,
    };
    let mut y = vec![1.0 / (n as f64).sqrt(); n];
    let slack = 1e-12 * scale.max(1.0);
    for _ in 0..50 {
        let mut shifted = sym.clone();
        let sigma = lambda + slack;
        for d in shifted.diag.iter_mut() {
            *d -= sigma;
        }
        let lu = match TridiagonalLu::factor(&shifted) {
            Ok(lu) => lu,
            // Shift is numerically exact; the bisection estimate stands.
            Err(_) => break,
        };
        lu.solve_in_place(&mut y);
        let norm = y.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            break;
        }
        for v in y.iter_mut() {
            *v /= norm;
        }
        let ay = sym.mul(&y);
        let rq: f64 = y.iter().zip(&ay).map(|(a, b)| a * b).sum();
        let converged = (rq - lambda).abs() <= 1e-12 * lambda.abs().max(1.0);
        if rq >= bracket.0 - slack && rq <= bracket.1 + slack {
            lambda = rq;
        }
        if converged {
            return Ok(lambda);
        }
    }
    if lambda.is_finite() {
        Ok(lambda)
    } else {
        Err(MaserError::Numerical("leading eigenvalue did not converge".into()))
    }
}
