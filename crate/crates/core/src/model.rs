//! Atom-maser parameters, generators on diagonal states, and the stationary
//! photon distribution.
//!
//! The cavity is truncated at `n_max` photons. At the top level the two
//! photon-raising channels cannot fire: the bath absorption outflow is
//! dropped, while a ground-state atom is still detected with its usual rate
//! but leaves the level unchanged. With this convention the truncated master
//! generator is an exact birth-death generator (zero column sums), the atom
//! arrivals remain Poisson with rate `n_ex` at every level, and the truncated
//! product formula is its exact stationary vector.

use serde::{Deserialize, Serialize};

use crate::error::{MaserError, Result};
use crate::linalg::{self, Tridiagonal};

/// Smallest truncation accepted by the validating constructors.
pub const MIN_N_MAX: usize = 8;
/// Default bound on the stationary mass above the truncation level.
pub const DEFAULT_TAIL_TOL: f64 = 1e-10;

fn default_tail_tol() -> f64 {
    DEFAULT_TAIL_TOL
}

/// Physical parameters of the atom maser plus the Fock truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Accumulated Rabi angle (radians).
    pub phi: f64,
    /// Pump rate: mean number of atoms per unit time.
    pub n_ex: f64,
    /// Thermal occupancy of the bath.
    pub nu: f64,
    /// Highest retained photon number.
    pub n_max: usize,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
}

impl ModelParams {
    /// Validated parameters with the default truncation for `n_ex`, raised
    /// further when the stationary tail above it exceeds the default
    /// tolerance.
    pub fn new(phi: f64, n_ex: f64, nu: f64) -> Result<Self> {
        let mut p = ModelParams {
            phi,
            n_ex,
            nu,
            n_max: Self::default_n_max(n_ex),
            tail_tol: DEFAULT_TAIL_TOL,
        };
        p.check_domain()?;
        p.n_max = p.required_n_max();
        p.validate()?;
        Ok(p)
    }

    pub fn with_n_max(phi: f64, n_ex: f64, nu: f64, n_max: usize) -> Result<Self> {
        let p = ModelParams {
            phi,
            n_ex,
            nu,
            n_max,
            tail_tol: DEFAULT_TAIL_TOL,
        };
        p.validate()?;
        Ok(p)
    }

    /// Default truncation level: 64 at `n_ex = 16`, 220 at `n_ex = 150`,
    /// growing linearly in between and beyond.
    pub fn default_n_max(n_ex: f64) -> usize {
        let n = (n_ex.max(0.0) * 7.0 / 6.0 + 45.0).ceil() as usize;
        n.max(64)
    }

    /// Same physical parameters at another Rabi angle.
    pub fn at_phi(&self, phi: f64) -> Self {
        ModelParams { phi, ..*self }
    }

    /// Full validation: domain, minimum truncation and stationary tail mass.
    pub fn validate(&self) -> Result<()> {
        self.check_domain()?;
        if self.n_max < MIN_N_MAX {
            return Err(MaserError::Domain(format!(
                "n_max must be at least {MIN_N_MAX}, got {}",
                self.n_max
            )));
        }
        self.validate_truncation()
    }

    /// Checks the physical parameter domain only.
    pub fn check_domain(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(MaserError::Domain(format!("phi must be positive, got {}", self.phi)));
        }
        if !(self.n_ex > 0.0 && self.n_ex.is_finite()) {
            return Err(MaserError::Domain(format!("n_ex must be positive, got {}", self.n_ex)));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(MaserError::Domain(format!("nu must be nonnegative, got {}", self.nu)));
        }
        if self.n_max == 0 {
            return Err(MaserError::Domain("n_max must be positive".into()));
        }
        if !(self.tail_tol > 0.0) {
            return Err(MaserError::Domain("tail_tol must be positive".into()));
        }
        Ok(())
    }

    /// Fails when the untruncated stationary distribution puts more than
    /// `tail_tol` mass above `n_max`.
    pub fn validate_truncation(&self) -> Result<()> {
        let tail = self.stationary_tail_mass();
        if tail > self.tail_tol {
            return Err(MaserError::Truncation(format!(
                "stationary mass {tail:.3e} above n_max = {} exceeds tolerance {:.1e}",
                self.n_max, self.tail_tol
            )));
        }
        Ok(())
    }

    /// Stationary mass above `n_max` for the untruncated product formula.
    pub fn stationary_tail_mass(&self) -> f64 {
        let w = self.untruncated_weights();
        let total: f64 = w.iter().sum();
        let tail: f64 = w.iter().skip(self.n_max + 1).sum();
        tail / total
    }

    /// Smallest truncation level at or above `n_max` whose stationary tail
    /// mass is within `tail_tol`.
    pub fn required_n_max(&self) -> usize {
        let w = self.untruncated_weights();
        let total: f64 = w.iter().sum();
        let mut tail: f64 = w.iter().skip(self.n_max + 1).sum();
        let mut n = self.n_max;
        while tail > self.tail_tol * total && n + 1 < w.len() {
            n += 1;
            tail -= w[n];
        }
        n
    }

    /// Unnormalized untruncated product-formula weights, scaled to peak 1 and
    /// extended until the terms are negligible.
    fn untruncated_weights(&self) -> Vec<f64> {
        let mut log_terms = vec![0.0];
        let mut log_p = 0.0;
        let mut peak = 0.0_f64;
        let limit = self.n_max.max(16) * 8 + 1000;
        for i in 1..=limit {
            log_p += self.log_stationary_ratio(i);
            peak = peak.max(log_p);
            log_terms.push(log_p);
            if i > self.n_max && log_p < peak - 80.0 {
                break;
            }
        }
        log_terms.iter().map(|l| (l - peak).exp()).collect()
    }

    fn log_stationary_ratio(&self, i: usize) -> f64 {
        let s = (self.phi * (i as f64).sqrt()).sin();
        let r = self.nu / (self.nu + 1.0) + self.n_ex / (self.nu + 1.0) * s * s / i as f64;
        r.ln()
    }

    /// Rate of ground-state atom detections at `level` (raises the level).
    pub fn ground_rate(&self, level: usize) -> f64 {
        let s = (self.phi * ((level + 1) as f64).sqrt()).sin();
        self.n_ex * s * s
    }

    /// Rate of excited-state atom detections at `level` (level unchanged).
    pub fn excited_rate(&self, level: usize) -> f64 {
        let c = (self.phi * ((level + 1) as f64).sqrt()).cos();
        self.n_ex * c * c
    }

    /// Rate of photon emission into the bath at `level`.
    pub fn emission_rate(&self, level: usize) -> f64 {
        (self.nu + 1.0) * level as f64
    }

    /// Rate of photon absorption from the bath at `level`.
    pub fn absorption_rate(&self, level: usize) -> f64 {
        self.nu * (level + 1) as f64
    }

    /// Birth rate `q_{k,k+1}` of the cavity birth-death process.
    pub fn birth_rate(&self, level: usize) -> f64 {
        self.ground_rate(level) + self.absorption_rate(level)
    }

    /// Death rate `q_{k,k-1}`.
    pub fn death_rate(&self, level: usize) -> f64 {
        self.emission_rate(level)
    }
}

/// Probability vector over Fock levels `0..=n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalState {
    probs: Vec<f64>,
}

/// Largest total negative mass treated as roundoff.
const NEGATIVE_SLACK: f64 = 1e-12;

impl DiagonalState {
    /// Normalizes `v` into a probability vector. Negative entries whose total
    /// mass is below `1e-12` (relative to the positive mass) are clamped to
    /// zero; anything larger is an error.
    pub fn from_unnormalized(mut v: Vec<f64>) -> Result<Self> {
        let positive: f64 = v.iter().filter(|x| **x > 0.0).sum();
        let negative: f64 = -v.iter().filter(|x| **x < 0.0).sum::<f64>();
        if !(positive > 0.0) || !positive.is_finite() || v.iter().any(|x| x.is_nan()) {
            return Err(MaserError::Numerical("state has no positive mass".into()));
        }
        if negative > NEGATIVE_SLACK * positive {
            return Err(MaserError::Numerical(format!(
                "state has negative mass {negative:.3e}"
            )));
        }
        for x in v.iter_mut() {
            *x = x.max(0.0);
        }
        let total: f64 = v.iter().sum();
        for x in v.iter_mut() {
            *x /= total;
        }
        Ok(DiagonalState { probs: v })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Mean photon number.
    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// Indices of strict local maxima (plateaus count once).
    pub fn local_maxima(&self) -> Vec<usize> {
        let p = &self.probs;
        let mut out = Vec::new();
        let mut i = 0;
        while i < p.len() {
            let mut j = i;
            while j + 1 < p.len() && p[j + 1] == p[i] {
                j += 1;
            }
            let left_lower = i == 0 || p[i - 1] < p[i];
            let right_lower = j + 1 == p.len() || p[j + 1] < p[i];
            if left_lower && right_lower && p[i] > 0.0 {
                out.push(i);
            }
            i = j + 1;
        }
        out
    }
}

/// The four jump superoperators and the two generators, restricted to
/// diagonal states.
#[derive(Debug, Clone)]
pub struct GeneratorSet {
    pub params: ModelParams,
    /// Ground-state atom detection: `n-1 → n` with rate `n_ex sin²(φ√n)`.
    pub j1: Tridiagonal,
    /// Excited-state atom detection: diagonal, `n_ex cos²(φ√(n+1))`.
    pub j2: Tridiagonal,
    /// Photon emission: `n+1 → n` with rate `(ν+1)(n+1)`.
    pub j3: Tridiagonal,
    /// Photon absorption from the bath: `n-1 → n` with rate `ν n`.
    pub j4: Tridiagonal,
    /// Evolution between atom detections.
    pub l0: Tridiagonal,
    /// Master generator `l0 + j1 + j2`.
    pub l_full: Tridiagonal,
}

/// Detection channel of a jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Channel {
    /// Atom detected in the ground state (cavity gains a photon).
    Ground = 1,
    /// Atom detected in the excited state.
    Excited = 2,
    /// Photon emitted into the bath.
    Emission = 3,
    /// Photon absorbed from the bath.
    Absorption = 4,
}

impl Channel {
    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn is_atom(self) -> bool {
        matches!(self, Channel::Ground | Channel::Excited)
    }
}

impl From<Channel> for u8 {
    fn from(c: Channel) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for Channel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Channel::Ground),
            2 => Ok(Channel::Excited),
            3 => Ok(Channel::Emission),
            4 => Ok(Channel::Absorption),
            other => Err(format!("invalid channel label {other}")),
        }
    }
}

impl GeneratorSet {
    pub fn dim(&self) -> usize {
        self.params.n_max + 1
    }

    pub fn jump(&self, channel: Channel) -> &Tridiagonal {
        match channel {
            Channel::Ground => &self.j1,
            Channel::Excited => &self.j2,
            Channel::Emission => &self.j3,
            Channel::Absorption => &self.j4,
        }
    }

    /// Generator of the evolution conditioned on no jump in `channel`.
    pub fn survival(&self, channel: Channel) -> Tridiagonal {
        self.l_full.minus(self.jump(channel))
    }

    /// `l0 + e^{s1} j1 + e^{s2} j2`, whose leading eigenvalue is the scaled
    /// cumulant generating function of the two atom counts.
    pub fn tilted(&self, s: [f64; 2]) -> Tridiagonal {
        self.l0
            .plus(&self.j1.scaled(s[0].exp()))
            .plus(&self.j2.scaled(s[1].exp()))
    }
}

/// Builds the jump superoperators and generators for `params`.
pub fn build_generators(params: &ModelParams) -> Result<GeneratorSet> {
    params.check_domain()?;
    params.validate_truncation()?;
    Ok(build_unchecked(params))
}

fn build_unchecked(params: &ModelParams) -> GeneratorSet {
    let top = params.n_max;
    let dim = top + 1;
    let mut j1 = Tridiagonal::zeros(dim.max(1));
    let mut j2 = Tridiagonal::zeros(dim);
    let mut j3 = Tridiagonal::zeros(dim);
    let mut j4 = Tridiagonal::zeros(dim);
    let mut l0 = Tridiagonal::zeros(dim);
    for n in 0..dim {
        j2.diag[n] = params.excited_rate(n);
        if n < top {
            j1.sub[n] = params.ground_rate(n);
            j4.sub[n] = params.absorption_rate(n);
        } else {
            j1.diag[n] = params.ground_rate(n);
        }
        if n > 0 {
            j3.sup[n - 1] = params.emission_rate(n);
        }
        let bath_out = params.emission_rate(n) + if n < top { params.absorption_rate(n) } else { 0.0 };
        l0.diag[n] = -(bath_out + params.n_ex);
    }
    l0 = l0.plus(&j3).plus(&j4);
    let l_full = l0.plus(&j1).plus(&j2);
    GeneratorSet {
        params: *params,
        j1,
        j2,
        j3,
        j4,
        l0,
        l_full,
    }
}

/// Stationary photon distribution from the product formula, evaluated in
/// log space and normalized over `0..=n_max`.
pub fn stationary_state(params: &ModelParams) -> Result<DiagonalState> {
    params.check_domain()?;
    params.validate_truncation()?;
    Ok(stationary_unchecked(params))
}

fn stationary_unchecked(params: &ModelParams) -> DiagonalState {
    let mut logs = Vec::with_capacity(params.n_max + 1);
    let mut acc = 0.0;
    logs.push(0.0);
    for i in 1..=params.n_max {
        acc += params.log_stationary_ratio(i);
        logs.push(acc);
    }
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    DiagonalState::from_unnormalized(probs).expect("product formula is positive")
}

/// Model quantities shared by the filter, the statistics and the Fisher
/// computations: generators plus the stationary state.
#[derive(Debug, Clone)]
pub struct MaserModel {
    pub generators: GeneratorSet,
    pub stationary: DiagonalState,
}

impl MaserModel {
    pub fn new(params: &ModelParams) -> Result<Self> {
        Ok(MaserModel {
            generators: build_generators(params)?,
            stationary: stationary_state(params)?,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.generators.params
    }

    /// Stationary mean photon number `Tr(ρ_ss N)`.
    pub fn mean_photons(&self) -> f64 {
        self.stationary.mean()
    }

    /// Stationary detection rate of `channel`, `Tr(J ρ_ss)`.
    pub fn rate(&self, channel: Channel) -> f64 {
        self.generators
            .jump(channel)
            .mul(self.stationary.probs())
            .iter()
            .sum()
    }

    /// `e^{tau gen} v`.
    pub fn propagate(&self, gen: &Tridiagonal, v: &[f64], tau: f64) -> Result<Vec<f64>> {
        linalg::apply_expm(gen, v, tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(phi: f64) -> ModelParams {
        ModelParams::new(phi, 16.0, 0.1).unwrap()
    }

    #[test]
    fn birth_rate_at_half_pi() {
        let p = ModelParams::new(std::f64::consts::FRAC_PI_2, 16.0, 0.1).unwrap();
        assert!((p.birth_rate(0) - 16.1).abs() < 1e-12);
        assert_eq!(p.death_rate(0), 0.0);
        assert!((p.death_rate(3) - 3.3).abs() < 1e-12);
    }

    #[test]
    fn default_truncations() {
        assert_eq!(ModelParams::default_n_max(16.0), 64);
        assert_eq!(ModelParams::default_n_max(150.0), 220);
        assert_eq!(ModelParams::new(0.5, 16.0, 0.1).unwrap().n_max, 64);
        assert_eq!(ModelParams::new(0.5, 150.0, 0.15).unwrap().n_max, 220);
        // Near the photon-number maximum the default level is raised.
        let p = ModelParams::new(0.12, 150.0, 0.15).unwrap();
        assert!(p.n_max > 220);
        assert!(p.stationary_tail_mass() <= DEFAULT_TAIL_TOL);
        let mut lower = p;
        lower.n_max -= 1;
        assert!(lower.stationary_tail_mass() > DEFAULT_TAIL_TOL);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(ModelParams::new(0.0, 16.0, 0.1), Err(MaserError::Domain(_))));
        assert!(matches!(ModelParams::new(0.5, -1.0, 0.1), Err(MaserError::Domain(_))));
        assert!(matches!(ModelParams::new(0.5, 16.0, -0.1), Err(MaserError::Domain(_))));
        assert!(matches!(
            ModelParams::with_n_max(0.5, 16.0, 0.1, 4),
            Err(MaserError::Domain(_))
        ));
    }

    #[test]
    fn small_truncation_is_rejected() {
        let err = ModelParams::with_n_max(0.5, 16.0, 0.1, 12).unwrap_err();
        assert!(matches!(err, MaserError::Truncation(_)), "{err:?}");
    }

    #[test]
    fn master_generator_is_conservative_and_metzler() {
        for phi in [0.1, 0.5, 1.3] {
            let g = build_generators(&params(phi)).unwrap();
            for c in g.l_full.column_sums() {
                assert!(c.abs() < 1e-12, "column sum {c}");
            }
            assert!(g.l_full.sub.iter().chain(&g.l_full.sup).all(|&x| x >= 0.0));
            for j in [&g.j1, &g.j2, &g.j3, &g.j4] {
                assert!(j.sub.iter().chain(&j.diag).chain(&j.sup).all(|&x| x >= 0.0));
            }
            // Atoms arrive at rate n_ex from every level.
            for c in g.l0.column_sums() {
                assert!((c + 16.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jumps_plus_no_jump_part_rebuild_the_generator() {
        let g = build_generators(&params(0.7)).unwrap();
        let jumps = g.j1.plus(&g.j2).plus(&g.j3).plus(&g.j4);
        let no_jump = Tridiagonal::from_diagonal(g.l0.diag.clone());
        let rebuilt = jumps.plus(&no_jump);
        let diff = rebuilt.minus(&g.l_full);
        assert!(diff.norm_inf() < 1e-12);
    }

    #[test]
    fn stationary_state_is_annihilated() {
        let p = params(0.5);
        let g = build_generators(&p).unwrap();
        let rho = stationary_state(&p).unwrap();
        let r = rho.probs();
        let l0r = g.l0.mul(r);
        let j1r = g.j1.mul(r);
        let j2r = g.j2.mul(r);
        for n in 0..r.len() {
            assert!((l0r[n] + j1r[n] + j2r[n]).abs() < 1e-10);
        }
    }

    #[test]
    fn thermal_limit_is_geometric() {
        let p = ModelParams::new(1e-7, 16.0, 0.1).unwrap();
        let rho = stationary_state(&p).unwrap();
        let ratio: f64 = 0.1 / 1.1;
        for n in 0..10 {
            let expected = (1.0 - ratio) * ratio.powi(n as i32);
            assert!((rho.probs()[n] - expected).abs() < 1e-9);
        }
        assert!((rho.mean() - 0.1).abs() < 1e-9);
    }

    /// Mean of the untruncated product formula, summed directly until the
    /// terms vanish.
    fn brute_force_mean(phi: f64, n_ex: f64, nu: f64) -> f64 {
        let mut w = vec![1.0_f64];
        for i in 1..20_000 {
            let s = (phi * (i as f64).sqrt()).sin();
            let r = nu / (nu + 1.0) + n_ex / (nu + 1.0) * s * s / i as f64;
            w.push(w[i - 1] * r);
        }
        let z: f64 = w.iter().sum();
        w.iter().enumerate().map(|(n, x)| n as f64 * x).sum::<f64>() / z
    }

    #[test]
    fn mean_photon_number_has_interior_peak_at_high_pump() {
        let grid: Vec<f64> = (0..=80).map(|i| 0.05 + 0.0025 * i as f64).collect();
        let means: Vec<f64> = grid
            .iter()
            .map(|&phi| {
                let p = ModelParams::new(phi, 150.0, 0.15).unwrap();
                stationary_state(&p).unwrap().mean()
            })
            .collect();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .fold((0, f64::MIN), |b, (i, &m)| if m > b.1 { (i, m) } else { b })
                .0
        };
        let imax = argmax(&means);
        assert!(imax > 0 && imax < grid.len() - 1);
        let oracle: Vec<f64> = grid.iter().map(|&phi| brute_force_mean(phi, 150.0, 0.15)).collect();
        assert_eq!(imax, argmax(&oracle));
        for (m, o) in means.iter().zip(&oracle) {
            assert!((m - o).abs() < 1e-6 * o.max(1.0));
        }
        // The peak sits where the mean photon number approaches the pump rate.
        assert!((grid[imax] - 0.1275).abs() <= 0.005, "peak at {}", grid[imax]);
    }

    #[test]
    fn bistable_distribution_at_0_55() {
        let p = ModelParams::new(0.55, 150.0, 0.15).unwrap();
        let rho = stationary_state(&p).unwrap();
        let peaks: Vec<usize> = rho
            .local_maxima()
            .into_iter()
            .filter(|&i| rho.probs()[i] > 1e-3)
            .collect();
        assert!(peaks.len() >= 2, "peaks {peaks:?}");
        let (a, b) = (peaks[0], peaks[peaks.len() - 1]);
        let valley = rho.probs()[a..=b].iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(valley < 0.5 * rho.probs()[a].min(rho.probs()[b]));
    }

    #[test]
    fn energy_balance_rates() {
        let m = MaserModel::new(&params(0.5)).unwrap();
        let n = m.mean_photons();
        assert!((m.rate(Channel::Ground) - (n - 0.1)).abs() < 1e-6 * n);
        assert!((m.rate(Channel::Excited) - (16.0 - n + 0.1)).abs() < 1e-6 * 16.0);
    }

    #[test]
    fn negative_roundoff_is_clamped_but_real_negatives_fail() {
        let s = DiagonalState::from_unnormalized(vec![0.5, 0.5, -1e-15]).unwrap();
        assert_eq!(s.probs()[2], 0.0);
        assert!(DiagonalState::from_unnormalized(vec![0.5, 0.5, -1e-6]).is_err());
    }

    #[test]
    fn channel_labels_round_trip() {
        for c in [Channel::Ground, Channel::Excited, Channel::Emission, Channel::Absorption] {
            assert_eq!(Channel::try_from(c.label()).unwrap(), c);
        }
        assert!(Channel::try_from(5).is_err());
    }
}
