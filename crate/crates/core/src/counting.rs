//! Asymptotic Fisher information carried by the total atom counts.
//!
//! The scaled cumulant generating function of the two counts is the leading
//! eigenvalue of the tilted generator `l0 + e^{s1} j1 + e^{s2} j2`. Its
//! gradient at zero gives the mean count rates and its Hessian the asymptotic
//! covariance of the counts over `sqrt(t)`; differentiating the rates in φ
//! gives the sensitivity vector of the Gaussian limit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MaserError, Result};
use crate::linalg::leading_eigenvalue;
use crate::model::{build_generators, stationary_state, ModelParams};

pub const DEFAULT_S_STEP: f64 = 1e-4;
pub const DEFAULT_PHI_STEP: f64 = 1e-4;

/// Leading eigenvalue of the tilted generator at counting fields `s`.
pub fn tilted_cgf_eigenvalue(params: &ModelParams, s: [f64; 2]) -> Result<f64> {
    let g = build_generators(params)?;
    leading_eigenvalue(&g.tilted(s))
}

/// Mean rates and covariance of the counts at fixed φ.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cumulants {
    rates: [f64; 2],
    v: [[f64; 2]; 2],
}

fn cumulants(params: &ModelParams, h: f64) -> Result<Cumulants> {
    let g = build_generators(params)?;
    let lam = |s1: f64, s2: f64| leading_eigenvalue(&g.tilted([s1, s2]));
    let l0 = lam(0.0, 0.0)?;
    let (p1, m1) = (lam(h, 0.0)?, lam(-h, 0.0)?);
    let (p2, m2) = (lam(0.0, h)?, lam(0.0, -h)?);
    let pp = lam(h, h)?;
    let pm = lam(h, -h)?;
    let mp = lam(-h, h)?;
    let mm = lam(-h, -h)?;
    let rates = [(p1 - m1) / (2.0 * h), (p2 - m2) / (2.0 * h)];
    let v11 = (p1 - 2.0 * l0 + m1) / (h * h);
    let v22 = (p2 - 2.0 * l0 + m2) / (h * h);
    let v12 = (pp - pm - mp + mm) / (4.0 * h * h);
    Ok(Cumulants {
        rates,
        v: [[v11, v12], [v12, v22]],
    })
}

/// Gaussian limit of the total counts: `Λ(t)/sqrt(t)` centered at the mean
/// rates is asymptotically normal with covariance `v`, and a shift `u/sqrt(t)`
/// of φ moves the mean by `mu·u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountsGaussianLimit {
    pub mu: [f64; 2],
    pub v: [[f64; 2]; 2],
    pub rates: [f64; 2],
    /// Largest relative change of the rates, covariance and sensitivity
    /// between the default steps and their halves.
    pub step_sensitivity: f64,
}

fn max_rel_change(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-300);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}

fn limit_with_steps(params: &ModelParams, hs: f64, hphi: f64) -> Result<CountsGaussianLimit> {
    let at = cumulants(params, hs)?;
    let plus = cumulants(&params.at_phi(params.phi + hphi), hs)?;
    let minus = cumulants(&params.at_phi(params.phi - hphi), hs)?;
    let mu = [
        (plus.rates[0] - minus.rates[0]) / (2.0 * hphi),
        (plus.rates[1] - minus.rates[1]) / (2.0 * hphi),
    ];
    Ok(CountsGaussianLimit {
        mu,
        v: at.v,
        rates: at.rates,
        step_sensitivity: 0.0,
    })
}

/// Rates, covariance and sensitivity by central differences with the given
/// steps, Richardson-extrapolated from the steps and their halves; the
/// relative change between the two is kept as the step sensitivity.
pub fn gaussian_limit_with(params: &ModelParams, hs: f64, hphi: f64) -> Result<CountsGaussianLimit> {
    params.check_domain()?;
    if !(params.phi - hphi > 0.0) {
        return Err(MaserError::Domain(format!("phi = {} too small for step {hphi}", params.phi)));
    }
    let full = limit_with_steps(params, hs, hphi)?;
    let half = limit_with_steps(params, hs / 2.0, hphi / 2.0)?;
    let flat = |l: &CountsGaussianLimit| [l.rates[0], l.rates[1], l.v[0][0], l.v[0][1], l.v[1][1]];
    let sens = max_rel_change(&flat(&full), &flat(&half)).max(max_rel_change(&full.mu, &half.mu));
    let rich = |a: f64, b: f64| (4.0 * b - a) / 3.0;
    let mut out = CountsGaussianLimit {
        mu: [rich(full.mu[0], half.mu[0]), rich(full.mu[1], half.mu[1])],
        v: [
            [rich(full.v[0][0], half.v[0][0]), rich(full.v[0][1], half.v[0][1])],
            [rich(full.v[1][0], half.v[1][0]), rich(full.v[1][1], half.v[1][1])],
        ],
        rates: [rich(full.rates[0], half.rates[0]), rich(full.rates[1], half.rates[1])],
        step_sensitivity: 0.0,
    };
    out.step_sensitivity = sens;
    for x in out.rates.iter().chain(out.mu.iter()).chain(out.v.iter().flatten()) {
        if !x.is_finite() {
            return Err(MaserError::Numerical("non-finite cumulant derivative".into()));
        }
    }
    Ok(out)
}

pub fn gaussian_limit(params: &ModelParams) -> Result<CountsGaussianLimit> {
    gaussian_limit_with(params, DEFAULT_S_STEP, DEFAULT_PHI_STEP)
}

/// Fisher informations per unit time of the single counts and of the best
/// linear combination of both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountsFisher {
    pub i1: f64,
    pub i2: f64,
    pub i_star: f64,
    /// Set when the covariance is singular with the sensitivity outside its
    /// range, so that some combination of counts has infinite information.
    pub infinite: bool,
}

/// Eigen-decomposition of a symmetric 2×2 matrix: eigenvalues and unit
/// eigenvectors.
fn sym_eigen(v: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, d) = (v[0][0], v[0][1], v[1][1]);
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let l = [mean + r, mean - r];
    let vecs = if b.abs() > 1e-300 {
        let u0 = [l[0] - d, b];
        let n = (u0[0] * u0[0] + u0[1] * u0[1]).sqrt();
        let u0 = [u0[0] / n, u0[1] / n];
        [u0, [-u0[1], u0[0]]]
    } else if a >= d {
        [[1.0, 0.0], [0.0, 1.0]]
    } else {
        [[0.0, 1.0], [1.0, 0.0]]
    };
    (l, vecs)
}

fn single(mu: f64, var: f64) -> (f64, bool) {
    if var > 0.0 {
        (mu * mu / var, false)
    } else if mu == 0.0 {
        (0.0, false)
    } else {
        (f64::INFINITY, true)
    }
}

pub fn fisher_counts(limit: &CountsGaussianLimit) -> Result<CountsFisher> {
    let v = limit.v;
    if (v[0][1] - v[1][0]).abs() > 1e-12 * v[0][1].abs().max(1.0) {
        return Err(MaserError::Numerical("covariance is not symmetric".into()));
    }
    let (mut lam, vecs) = sym_eigen(v);
    let scale = lam[0].abs().max(1.0);
    for l in lam.iter_mut() {
        if *l < -1e-10 * scale {
            return Err(MaserError::Numerical(format!(
                "covariance has a negative eigenvalue {l:.3e}"
            )));
        }
        *l = l.max(0.0);
    }
    let mu = limit.mu;
    let mu_norm = (mu[0] * mu[0] + mu[1] * mu[1]).sqrt();
    let mut i_star = 0.0;
    let mut infinite = false;
    for (l, u) in lam.iter().zip(vecs) {
        let proj = u[0] * mu[0] + u[1] * mu[1];
        if *l > 1e-14 * scale {
            i_star += proj * proj / l;
        } else if proj.abs() > 1e-10 * mu_norm.max(1e-300) {
            infinite = true;
        }
    }
    let (i1, inf1) = single(mu[0], v[0][0]);
    let (i2, inf2) = single(mu[1], v[1][1]);
    infinite |= inf1 || inf2;
    if infinite {
        i_star = f64::INFINITY;
    } else if i_star < i1.max(i2) * (1.0 - 1e-9) - 1e-12 {
        return Err(MaserError::Numerical(format!(
            "combined information {i_star} below single-count information {}",
            i1.max(i2)
        )));
    }
    Ok(CountsFisher {
        i1,
        i2,
        i_star: if infinite { i_star } else { i_star.max(i1).max(i2) },
        infinite,
    })
}

/// Information per unit time when every channel is monitored:
/// `4 n_ex <N>` with `<N>` the stationary mean photon number.
pub fn fisher_full_monitoring(params: &ModelParams) -> Result<f64> {
    Ok(4.0 * params.n_ex * stationary_state(params)?.mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherRow {
    pub phi: f64,
    pub i1: f64,
    pub i2: f64,
    pub i_star: f64,
    pub i_full: f64,
    pub m1: f64,
    pub m2: f64,
}

/// Count informations and the full-monitoring benchmark on a φ grid, with a
/// truncation level shared by all grid points.
pub fn fisher_sweep(n_ex: f64, nu: f64, phis: &[f64]) -> Result<Vec<FisherRow>> {
    let mut n_max = 0;
    for &phi in phis {
        n_max = n_max.max(ModelParams::new(phi, n_ex, nu)?.n_max);
    }
    phis.par_iter()
        .map(|&phi| {
            let p = ModelParams {
                phi,
                n_ex,
                nu,
                n_max,
                tail_tol: crate::model::DEFAULT_TAIL_TOL,
            };
            let limit = gaussian_limit(&p)?;
            let f = fisher_counts(&limit)?;
            Ok(FisherRow {
                phi,
                i1: f.i1,
                i2: f.i2,
                i_star: f.i_star,
                i_full: fisher_full_monitoring(&p)?,
                m1: limit.rates[0],
                m2: limit.rates[1],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limit(mu: [f64; 2], v: [[f64; 2]; 2]) -> CountsGaussianLimit {
        CountsGaussianLimit {
            mu,
            v,
            rates: [0.0; 2],
            step_sensitivity: 0.0,
        }
    }

    #[test]
    fn unit_covariance() {
        let f = fisher_counts(&limit([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])).unwrap();
        assert_eq!((f.i1, f.i2, f.i_star), (1.0, 0.0, 1.0));
        assert!(!f.infinite);
    }

    #[test]
    fn singular_covariance_with_sensitivity_outside_range() {
        let f = fisher_counts(&limit([1.0, -1.0], [[1.0, 1.0], [1.0, 1.0]])).unwrap();
        assert!(f.infinite);
        let f = fisher_counts(&limit([1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]])).unwrap();
        assert!(!f.infinite);
        assert!((f.i_star - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tilted_eigenvalue_vanishes_at_zero() {
        let p = ModelParams::new(0.5, 16.0, 0.1).unwrap();
        assert!(tilted_cgf_eigenvalue(&p, [0.0, 0.0]).unwrap().abs() < 1e-10);
    }

    #[test]
    fn thermal_limit_of_full_information() {
        let p = ModelParams::new(1e-6, 16.0, 0.1).unwrap();
        assert!((fisher_full_monitoring(&p).unwrap() - 6.4).abs() < 1e-6);
    }
}

#[cfg(test)]
mod accuracy {
    use super::*;
    use crate::model::MaserModel;

    #[test]
    fn rates_match_energy_balance() {
        for phi in [0.3, 0.5, 1.2] {
            let p = ModelParams::new(phi, 16.0, 0.1).unwrap();
            let n = MaserModel::new(&p).unwrap().mean_photons();
            let l = gaussian_limit(&p).unwrap();
            let m1 = n - 0.1;
            let m2 = 16.0 - n + 0.1;
            assert!((l.rates[0] - m1).abs() < 1e-5 * m1, "{} vs {m1}", l.rates[0]);
            assert!((l.rates[1] - m2).abs() < 1e-5 * m2, "{} vs {m2}", l.rates[1]);
            assert!(l.v[0][0] > 0.0 && l.v[1][1] > 0.0);
        }
    }
}
