//! Rejection ABC over the Rabi angle with per-statistic quantile acceptance,
//! and the exact-likelihood posterior it is compared with.
//!
//! Each trial draws φ from the uniform prior, simulates a record of the data's
//! length and stores the seven distances between its statistics and the
//! data's. Acceptance keeps, for each statistic separately, the trials with
//! the smallest distances; statistic combinations accept the intersection of
//! the single-statistic sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MaserError, Result};
use crate::filter::log_likelihood;
use crate::model::{ModelParams, DEFAULT_TAIL_TOL};
use crate::record::DetectionRecord;
use crate::seed::derive_seed;
use crate::simulate::{SimOptions, Simulator};
use crate::stats::{distances, extract, DistanceVector, Statistic, SummaryStatistics};

/// Retries allowed per trial when the simulation leaves the truncated space.
const MAX_RESAMPLES: u32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcConfig {
    pub prior_range: (f64, f64),
    pub n_sims: usize,
    pub quantile: f64,
    /// Trial record length; must match the data when given.
    pub horizon: Option<f64>,
    pub window_s: f64,
    pub seed_base: u64,
    pub n_ex: f64,
    pub nu: f64,
    /// Statistic combinations whose posteriors are reported.
    pub combinations: Vec<Vec<Statistic>>,
    pub bins: usize,
}

impl AbcConfig {
    /// Desk-scale defaults: each statistic alone plus all seven together.
    pub fn new(n_ex: f64, nu: f64, seed_base: u64) -> Self {
        let mut combinations: Vec<Vec<Statistic>> = Statistic::ALL.iter().map(|&s| vec![s]).collect();
        combinations.push(Statistic::ALL.to_vec());
        AbcConfig {
            prior_range: (0.1, 1.5),
            n_sims: 20_000,
            quantile: 0.05,
            horizon: None,
            window_s: 1.0,
            seed_base,
            n_ex,
            nu,
            combinations,
            bins: 70,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.prior_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(MaserError::Domain(format!("invalid prior range [{lo}, {hi}]")));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(MaserError::Domain(format!("quantile must be in (0, 1), got {}", self.quantile)));
        }
        if self.n_sims < 100 {
            return Err(MaserError::Domain(format!("n_sims must be at least 100, got {}", self.n_sims)));
        }
        if !(self.window_s > 0.0) {
            return Err(MaserError::Domain("window must be positive".into()));
        }
        if self.bins == 0 {
            return Err(MaserError::Domain("bin count must be positive".into()));
        }
        if self.combinations.iter().any(|c| c.is_empty()) {
            return Err(MaserError::Domain("empty statistic combination".into()));
        }
        Ok(())
    }

    /// Truncation shared by all trials.
    fn n_max(&self) -> Result<usize> {
        let (lo, hi) = self.prior_range;
        let mut n = 0;
        for i in 0..=32 {
            let phi = lo + (hi - lo) * i as f64 / 32.0;
            n = n.max(ModelParams::new(phi, self.n_ex, self.nu)?.n_max);
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub phi: f64,
    pub distances: DistanceVector,
    pub seed: u64,
    /// Simulations discarded for leaving the truncated space.
    pub resamples: u32,
}

/// Prior draw of trial `index`, independent of the simulation seeds.
pub fn trial_phi(seed_base: u64, index: usize, range: (f64, f64)) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed_base, "abc/phi", index as u64));
    range.0 + (range.1 - range.0) * rng.random::<f64>()
}

fn trial_seed(seed_base: u64, index: usize, attempt: u32) -> u64 {
    derive_seed(seed_base, &format!("abc/trial/{attempt}"), index as u64)
}

/// Simulates all trials, in trial-index order.
pub fn simulate_trials(data: &DetectionRecord, config: &AbcConfig) -> Result<Vec<Trial>> {
    config.validate()?;
    let horizon = data.horizon();
    if let Some(h) = config.horizon {
        if h != horizon {
            return Err(MaserError::Domain(format!(
                "trial horizon {h} differs from the data horizon {horizon}"
            )));
        }
    }
    let observed = extract(data, config.window_s)?;
    let n_max = config.n_max()?;
    (0..config.n_sims)
        .into_par_iter()
        .map(|i| run_trial(i, &observed, horizon, n_max, config))
        .collect()
}

fn run_trial(i: usize, observed: &SummaryStatistics, horizon: f64, n_max: usize, config: &AbcConfig) -> Result<Trial> {
    let phi = trial_phi(config.seed_base, i, config.prior_range);
    let params = ModelParams {
        phi,
        n_ex: config.n_ex,
        nu: config.nu,
        n_max,
        tail_tol: DEFAULT_TAIL_TOL,
    };
    let sim = Simulator::new(&params)?;
    for attempt in 0..MAX_RESAMPLES {
        let seed = trial_seed(config.seed_base, i, attempt);
        match sim.run(horizon, seed, &SimOptions::default()) {
            Ok(full) => {
                // Only the statistics may reach the comparison; the generating
                // angle is removed from the record.
                let record = full.atoms_only().without_params();
                let stats = extract(&record, config.window_s)?;
                return Ok(Trial {
                    phi,
                    distances: distances(&stats, observed),
                    seed,
                    resamples: attempt,
                });
            }
            Err(MaserError::Truncation(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(MaserError::Truncation(format!(
        "trial {i} left the truncated space {MAX_RESAMPLES} times"
    )))
}

/// Number of trials accepted per statistic at `quantile`.
pub fn accept_count(n: usize, quantile: f64) -> usize {
    ((quantile * n as f64).ceil() as usize).clamp(1, n)
}

/// Indices of the trials with the smallest distances for `stat`, ties broken
/// by trial index; returned in increasing index order.
pub fn accept(trials: &[Trial], stat: Statistic, quantile: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..trials.len()).collect();
    order.sort_by(|&a, &b| {
        trials[a]
            .distances
            .get(stat)
            .total_cmp(&trials[b].distances.get(stat))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order.into_iter().take(accept_count(trials.len(), quantile)).collect();
    kept.sort_unstable();
    kept
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Trials accepted by every statistic in `stats` at `quantile`.
pub fn accept_combined(trials: &[Trial], stats: &[Statistic], quantile: f64) -> Vec<usize> {
    let mut sets = stats.iter().map(|&s| accept(trials, s, quantile));
    let first = sets.next().unwrap_or_default();
    sets.fold(first, |acc, s| intersect(&acc, &s))
}

/// Equal-width histogram normalized to unit mass, with the moments of the
/// samples it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub mass: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl Histogram {
    pub fn from_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut mass = vec![0.0; bins];
        for &x in samples {
            mass[bin_index(x, lo, hi, bins)] += 1.0;
        }
        let n = samples.len();
        if n > 0 {
            mass.iter_mut().for_each(|m| *m /= n as f64);
        }
        let mean = samples.iter().sum::<f64>() / n.max(1) as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n.max(1) as f64;
        Histogram {
            lo,
            hi,
            mass,
            mean,
            sd: var.sqrt(),
            count: n,
        }
    }

    /// Histogram given by bin masses, with moments from the bin centers.
    pub fn from_masses(mass: Vec<f64>, lo: f64, hi: f64) -> Self {
        let mut h = Histogram {
            lo,
            hi,
            mass,
            mean: 0.0,
            sd: 0.0,
            count: 0,
        };
        let z: f64 = h.mass.iter().sum();
        if z > 0.0 {
            h.mass.iter_mut().for_each(|m| *m /= z);
        }
        let centers: Vec<f64> = (0..h.mass.len()).map(|i| h.center(i)).collect();
        h.mean = centers.iter().zip(&h.mass).map(|(c, m)| c * m).sum();
        h.sd = centers
            .iter()
            .zip(&h.mass)
            .map(|(c, m)| (c - h.mean).powi(2) * m)
            .sum::<f64>()
            .sqrt();
        h
    }

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        (self.lo + i as f64 * self.width(), self.lo + (i + 1) as f64 * self.width())
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn mode(&self) -> f64 {
        let i = self
            .mass
            .iter()
            .enumerate()
            .fold(0, |b, (i, &m)| if m > self.mass[b] { i } else { b });
        self.center(i)
    }

    /// Local maxima with mass at least `threshold · max`. A plateau of equal
    /// bins counts once, at its first bin; distinct modes are separated by a
    /// strictly lower bin.
    pub fn modes_above(&self, threshold: f64) -> Vec<usize> {
        let m = &self.mass;
        let top = m.iter().cloned().fold(0.0, f64::max);
        let cut = threshold * top;
        let mut modes = Vec::new();
        let mut i = 0;
        while i < m.len() {
            let mut j = i;
            while j + 1 < m.len() && m[j + 1] == m[i] {
                j += 1;
            }
            let left = i == 0 || m[i - 1] < m[i];
            let right = j + 1 == m.len() || m[j + 1] < m[i];
            if left && right && m[i] >= cut && m[i] > 0.0 {
                modes.push(i);
            }
            i = j + 1;
        }
        modes
    }
}

fn bin_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let f = ((x - lo) / (hi - lo) * bins as f64).floor();
    (f.max(0.0) as usize).min(bins - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedPosterior {
    pub statistics: Vec<Statistic>,
    /// Intersection at the configured quantile.
    pub accepted: Vec<usize>,
    pub empty: bool,
    /// `(quantile, accepted count)` for each step of the relaxation applied
    /// when the intersection is empty.
    pub relaxation: Vec<(f64, usize)>,
    /// Quantile actually used for `histogram`.
    pub quantile_used: f64,
    pub histogram: Histogram,
}

impl CombinedPosterior {
    pub fn name(&self) -> String {
        if self.statistics.len() == Statistic::ALL.len() {
            return "all".into();
        }
        self.statistics
            .iter()
            .map(|s| s.name())
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcDiagnostics {
    pub n_sims: usize,
    pub per_statistic_accepted: usize,
    pub discarded_simulations: u64,
    pub empty_combinations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcPosterior {
    pub config: AbcConfig,
    pub trials: Vec<Trial>,
    /// Single-statistic acceptance sets, indexed like [`Statistic::ALL`].
    pub accepted_sets: Vec<Vec<usize>>,
    pub combined: Vec<CombinedPosterior>,
    pub diagnostics: AbcDiagnostics,
}

impl AbcPosterior {
    pub fn combination(&self, stats: &[Statistic]) -> Option<&CombinedPosterior> {
        let mut key = stats.to_vec();
        key.sort();
        self.combined.iter().find(|c| c.statistics == key)
    }
}

/// Acceptance and histograms for already simulated trials.
pub fn posterior_from_trials(trials: Vec<Trial>, config: &AbcConfig) -> Result<AbcPosterior> {
    config.validate()?;
    let accepted_sets: Vec<Vec<usize>> = Statistic::ALL
        .iter()
        .map(|&s| accept(&trials, s, config.quantile))
        .collect();
    let (lo, hi) = config.prior_range;
    let mut combined = Vec::new();
    let mut empty_combinations = Vec::new();
    for combo in &config.combinations {
        let mut stats = combo.clone();
        stats.sort();
        stats.dedup();
        let accepted = stats
            .iter()
            .map(|s| accepted_sets[s.index()].clone())
            .reduce(|a, b| intersect(&a, &b))
            .unwrap_or_default();
        let empty = accepted.is_empty();
        let mut relaxation = Vec::new();
        let mut quantile_used = config.quantile;
        let mut used = accepted.clone();
        while used.is_empty() && quantile_used < 1.0 {
            quantile_used = (quantile_used * 2.0).min(1.0);
            used = accept_combined(&trials, &stats, quantile_used);
            relaxation.push((quantile_used, used.len()));
        }
        let samples: Vec<f64> = used.iter().map(|&i| trials[i].phi).collect();
        let post = CombinedPosterior {
            statistics: stats,
            accepted,
            empty,
            relaxation,
            quantile_used,
            histogram: Histogram::from_samples(&samples, lo, hi, config.bins),
        };
        if empty {
            empty_combinations.push(post.name());
        }
        combined.push(post);
    }
    let diagnostics = AbcDiagnostics {
        n_sims: trials.len(),
        per_statistic_accepted: accept_count(trials.len(), config.quantile),
        discarded_simulations: trials.iter().map(|t| t.resamples as u64).sum(),
        empty_combinations,
    };
    Ok(AbcPosterior {
        config: config.clone(),
        trials,
        accepted_sets,
        combined,
        diagnostics,
    })
}

pub fn run_abc(data: &DetectionRecord, config: &AbcConfig) -> Result<AbcPosterior> {
    let trials = simulate_trials(data, config)?;
    posterior_from_trials(trials, config)
}

/// Flat-prior posterior of φ from the exact likelihood on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodPosterior {
    pub grid: Vec<f64>,
    pub log_lik: Vec<f64>,
    pub posterior: Vec<f64>,
}

impl LikelihoodPosterior {
    /// Normalizes `exp(log_lik)` over the grid with log-sum-exp.
    pub fn from_log_lik(grid: Vec<f64>, log_lik: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || grid.len() != log_lik.len() {
            return Err(MaserError::Domain("grid and log-likelihood must be nonempty and aligned".into()));
        }
        let top = log_lik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(MaserError::Numerical("log-likelihood is not finite on the grid".into()));
        }
        let w: Vec<f64> = log_lik.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(LikelihoodPosterior {
            grid,
            log_lik,
            posterior: w.into_iter().map(|x| x / z).collect(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.grid.iter().zip(&self.posterior).map(|(x, p)| x * p).sum()
    }

    pub fn sd(&self) -> f64 {
        let m = self.mean();
        self.grid
            .iter()
            .zip(&self.posterior)
            .map(|(x, p)| (x - m).powi(2) * p)
            .sum::<f64>()
            .sqrt()
    }

    pub fn mode(&self) -> f64 {
        let i = self
            .posterior
            .iter()
            .enumerate()
            .fold(0, |b, (i, &p)| if p > self.posterior[b] { i } else { b });
        self.grid[i]
    }
}

pub fn likelihood_posterior(data: &DetectionRecord, grid: &[f64], n_ex: f64, nu: f64) -> Result<LikelihoodPosterior> {
    let mut n_max = 0;
    for &phi in grid {
        n_max = n_max.max(ModelParams::new(phi, n_ex, nu)?.n_max);
    }
    let log_lik: Vec<f64> = grid
        .par_iter()
        .map(|&phi| {
            let p = ModelParams {
                phi,
                n_ex,
                nu,
                n_max,
                tail_tol: DEFAULT_TAIL_TOL,
            };
            log_likelihood(data, &p)
        })
        .collect::<Result<_>>()?;
    LikelihoodPosterior::from_log_lik(grid.to_vec(), log_lik)
}

/// Reference posterior on a grid refined around the likelihood peak: a
/// coarse scan of `range` locates the mode, then `fine` points cover the
/// region where the coarse posterior is above `1e-12` of its maximum. The
/// result is a uniform grid so that grid masses are flat-prior masses.
pub fn refined_likelihood_posterior(
    data: &DetectionRecord,
    range: (f64, f64),
    n_ex: f64,
    nu: f64,
    coarse: usize,
    fine: usize,
) -> Result<LikelihoodPosterior> {
    let (lo, hi) = range;
    let step = (hi - lo) / (coarse.max(2) - 1) as f64;
    let grid: Vec<f64> = (0..coarse.max(2)).map(|i| lo + step * i as f64).collect();
    let c = likelihood_posterior(data, &grid, n_ex, nu)?;
    let top = c.posterior.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..grid.len()).filter(|&i| c.posterior[i] >= 1e-12 * top).collect();
    let a = (grid[keep[0]] - step).max(lo);
    let b = (grid[keep[keep.len() - 1]] + step).min(hi);
    let fine_grid: Vec<f64> = (0..fine.max(2))
        .map(|i| a + (b - a) * i as f64 / (fine.max(2) - 1) as f64)
        .collect();
    likelihood_posterior(data, &fine_grid, n_ex, nu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorComparison {
    pub total_variation: f64,
    pub abc_mean: f64,
    pub abc_sd: f64,
    pub ref_mean: f64,
    pub ref_sd: f64,
    pub mean_diff: f64,
    pub sd_ratio: f64,
    pub mode_offset: f64,
    pub disjoint: bool,
}

/// Compares an ABC histogram with the likelihood posterior. The reference
/// grid masses are aggregated into the histogram bins for the total
/// variation; moments come from the ABC samples and the reference grid.
pub fn compare_posteriors(abc: &Histogram, reference: &LikelihoodPosterior) -> PosteriorComparison {
    let mut binned = vec![0.0; abc.bins()];
    for (&x, &p) in reference.grid.iter().zip(&reference.posterior) {
        if x >= abc.lo && x <= abc.hi {
            binned[bin_index(x, abc.lo, abc.hi, abc.bins())] += p;
        }
    }
    let z: f64 = binned.iter().sum();
    if z > 0.0 {
        binned.iter_mut().for_each(|m| *m /= z);
    }
    let overlap = abc.mass.iter().zip(&binned).any(|(a, b)| *a > 0.0 && *b > 0.0);
    let tv = if overlap {
        0.5 * abc.mass.iter().zip(&binned).map(|(a, b)| (a - b).abs()).sum::<f64>()
    } else {
        1.0
    };
    let (ref_mean, ref_sd) = (reference.mean(), reference.sd());
    PosteriorComparison {
        total_variation: tv,
        abc_mean: abc.mean,
        abc_sd: abc.sd,
        ref_mean,
        ref_sd,
        mean_diff: abc.mean - ref_mean,
        sd_ratio: abc.sd / ref_sd,
        mode_offset: abc.mode() - reference.mode(),
        disjoint: !overlap,
    }
}

/// Exact Bayesian computation for discrete data: draw a parameter index from
/// `prior`, simulate, and keep it when the simulated data equal `observed`.
/// Returns the accepted parameter indices.
pub fn ebc<D: PartialEq>(
    prior: &[f64],
    simulate: impl Fn(usize, &mut ChaCha8Rng) -> D,
    observed: &D,
    n: usize,
    seed: u64,
) -> Vec<usize> {
    let z: f64 = prior.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = Vec::new();
    for _ in 0..n {
        let u = rng.random::<f64>() * z;
        let mut acc = 0.0;
        let k = prior
            .iter()
            .position(|&p| {
                acc += p;
                u < acc
            })
            .unwrap_or(prior.len() - 1);
        if simulate(k, &mut rng) == *observed {
            accepted.push(k);
        }
    }
    accepted
}
