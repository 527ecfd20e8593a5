//! Exact likelihood of atom-detection records through the diagonal filter,
//! maximum-likelihood estimation of the Rabi angle and observed Fisher
//! information.
//!
//! Between detections the conditional cavity distribution evolves with the
//! jump-free generator; at a detection the corresponding jump is applied. The
//! state is renormalized after every step and the logarithms of the
//! normalizations are accumulated, which reproduces the unnormalized product
//! without underflow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MaserError, Result};
use crate::linalg::{Propagator, Workspace};
use crate::model::{build_generators, stationary_state, Channel, GeneratorSet, ModelParams};
use crate::record::{DetectionRecord, FullRecord};

/// Conditional cavity distribution plus accumulated log-likelihood.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub state: Vec<f64>,
    pub log_weight: f64,
    pub t_last: f64,
}

/// Filter for a fixed parameter set.
#[derive(Debug, Clone)]
pub struct Filter {
    generators: GeneratorSet,
    initial: Vec<f64>,
    free: Propagator,
}

impl Filter {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let generators = build_generators(params)?;
        let initial = stationary_state(params)?.into_probs();
        let free = Propagator::new(&generators.l0);
        Ok(Filter {
            generators,
            initial,
            free,
        })
    }

    pub fn start(&self) -> FilterState {
        FilterState {
            state: self.initial.clone(),
            log_weight: 0.0,
            t_last: 0.0,
        }
    }

    /// Advances to a detection at `t` in `channel`. Returns `false` when the
    /// event has zero conditional probability; the weight is then `-inf`.
    pub fn step(&self, fs: &mut FilterState, t: f64, channel: Channel, ws: &mut Workspace) -> Result<bool> {
        if !(t >= fs.t_last) {
            return Err(MaserError::format(format!(
                "event time {t} precedes the filter time {}",
                fs.t_last
            )));
        }
        fs.log_weight += self.free.apply_scaled(&mut fs.state, t - fs.t_last, ws)?;
        fs.t_last = t;
        let jumped = self.generators.jump(channel).mul(&fs.state);
        let norm: f64 = jumped.iter().sum();
        if !(norm > 0.0) {
            fs.log_weight = f64::NEG_INFINITY;
            return Ok(false);
        }
        fs.log_weight += norm.ln();
        fs.state = jumped.into_iter().map(|x| x / norm).collect();
        Ok(true)
    }

    /// Adds the no-detection factor up to `t`.
    pub fn finish(&self, fs: &mut FilterState, t: f64, ws: &mut Workspace) -> Result<()> {
        if !(t >= fs.t_last) {
            return Err(MaserError::format(format!(
                "horizon {t} precedes the last event at {}",
                fs.t_last
            )));
        }
        fs.log_weight += self.free.apply_scaled(&mut fs.state, t - fs.t_last, ws)?;
        fs.t_last = t;
        Ok(())
    }

    pub fn log_likelihood(&self, record: &DetectionRecord) -> Result<f64> {
        let mut ws = Workspace::default();
        let mut fs = self.start();
        for e in record.events() {
            if !self.step(&mut fs, e.t, e.channel, &mut ws)? {
                return Ok(f64::NEG_INFINITY);
            }
        }
        self.finish(&mut fs, record.horizon(), &mut ws)?;
        Ok(fs.log_weight)
    }
}

/// Log-likelihood of an atom-detection record, started from the stationary
/// state.
pub fn log_likelihood(record: &DetectionRecord, params: &ModelParams) -> Result<f64> {
    Filter::new(params)?.log_likelihood(record)
}

/// Log-likelihood of a record in which all four channels are observed: the
/// complete-data likelihood of the Markov jump process, without the
/// initial-level term.
pub fn full_monitoring_log_likelihood(record: &FullRecord, params: &ModelParams) -> Result<f64> {
    params.check_domain()?;
    let outflow = |k: usize| params.n_ex + params.absorption_rate(k) + params.emission_rate(k);
    let mut level = record.initial_level();
    let mut t_prev = 0.0;
    let mut ll = 0.0;
    for (i, e) in record.events().iter().enumerate() {
        if level >= params.n_max {
            return Err(MaserError::Truncation(format!(
                "record reaches level {level} at or above n_max = {}",
                params.n_max
            )));
        }
        ll -= outflow(level) * (e.t - t_prev);
        t_prev = e.t;
        let rate = match e.channel {
            Channel::Ground => params.ground_rate(level),
            Channel::Excited => params.excited_rate(level),
            Channel::Emission => params.emission_rate(level),
            Channel::Absorption => params.absorption_rate(level),
        };
        ll += rate.ln();
        level = match e.channel {
            Channel::Ground | Channel::Absorption => level + 1,
            Channel::Excited => level,
            Channel::Emission => level.checked_sub(1).ok_or_else(|| {
                MaserError::format(format!("event {i}: emission from the empty cavity"))
            })?,
        };
    }
    if level >= params.n_max {
        return Err(MaserError::Truncation(format!(
            "record reaches level {level} at or above n_max = {}",
            params.n_max
        )));
    }
    ll -= outflow(level) * (record.horizon() - t_prev);
    Ok(ll)
}

/// Second-derivative estimate of a log-likelihood at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedInformation {
    /// Richardson-extrapolated `-f''(x)`.
    pub value: f64,
    /// `-f''(x)` with step `h`.
    pub at_h: f64,
    /// `-f''(x)` with step `h/2`.
    pub at_half_h: f64,
    /// Relative difference between the two step sizes.
    pub relative_change: f64,
    /// Whether the two step sizes agree to 1%.
    pub consistent: bool,
    /// Set when the curvature is not that of a maximum.
    pub negative_curvature: bool,
}

/// `-f''(x)` by central differences at `h` and `h/2` with Richardson
/// extrapolation.
pub fn observed_information(f: impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<ObservedInformation> {
    if !(h > 0.0) {
        return Err(MaserError::Domain(format!("step must be positive, got {h}")));
    }
    let f0 = f(x)?;
    let second = |h: f64| -> Result<f64> { Ok(-(f(x + h)? - 2.0 * f0 + f(x - h)?) / (h * h)) };
    let at_h = second(h)?;
    let at_half_h = second(h / 2.0)?;
    let value = (4.0 * at_half_h - at_h) / 3.0;
    let scale = at_h.abs().max(at_half_h.abs());
    let relative_change = if scale > 0.0 { (at_h - at_half_h).abs() / scale } else { 0.0 };
    if !value.is_finite() {
        return Err(MaserError::Numerical(format!("observed information is not finite at {x}")));
    }
    Ok(ObservedInformation {
        value,
        at_h,
        at_half_h,
        relative_change,
        consistent: relative_change < 0.01,
        negative_curvature: value < 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub grid_points: usize,
    pub tolerance: f64,
    pub fisher_step: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            grid_points: 141,
            tolerance: 1e-5,
            fisher_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleDiagnostics {
    pub grid_points: usize,
    pub golden_iterations: usize,
    pub tolerance: f64,
    pub at_boundary: bool,
    pub n_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub phi_hat: f64,
    pub log_lik_at_hat: f64,
    /// Observed information of the record; `None` when the estimate is too
    /// close to the boundary for central differences.
    pub observed_fisher: Option<ObservedInformation>,
    pub grid_profile: Vec<(f64, f64)>,
    pub diagnostics: MleDiagnostics,
}

impl MleResult {
    /// Observed information divided by the record length.
    pub fn fisher_per_time(&self, horizon: f64) -> Option<f64> {
        self.observed_fisher.map(|o| o.value / horizon)
    }
}

/// Result of maximizing a scalar function over an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub x: f64,
    pub value: f64,
    pub profile: Vec<(f64, f64)>,
    pub iterations: usize,
    pub at_boundary: bool,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || lo == hi {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Grid scan followed by golden-section refinement around the best grid
/// point. `f` may return `-inf`; NaN is an error.
pub fn maximize<F>(f: F, lo: f64, hi: f64, grid_points: usize, tol: f64) -> Result<Maximum>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if !(lo <= hi) {
        return Err(MaserError::Domain(format!("empty search interval [{lo}, {hi}]")));
    }
    let grid = linspace(lo, hi, grid_points);
    let values: Vec<f64> = grid.par_iter().map(|&x| f(x)).collect::<Result<_>>()?;
    if values.iter().any(|v| v.is_nan()) {
        return Err(MaserError::Numerical("objective returned NaN on the grid".into()));
    }
    let profile: Vec<(f64, f64)> = grid.iter().copied().zip(values.iter().copied()).collect();
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > values[b] { i } else { b });
    if grid.len() == 1 {
        return Ok(Maximum {
            x: grid[0],
            value: values[0],
            profile,
            iterations: 0,
            at_boundary: lo != hi,
        });
    }
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(grid.len() - 1)];
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut iterations = 0;
    while (b - a).abs() > tol {
        iterations += 1;
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    let (mut x, mut value) = if fc >= fd { (c, fc) } else { (d, fd) };
    if !(value >= values[best]) {
        x = grid[best];
        value = values[best];
    }
    let at_boundary = best == 0 || best == grid.len() - 1;
    Ok(Maximum {
        x,
        value,
        profile,
        iterations,
        at_boundary,
    })
}

/// Truncation level that keeps the tail tolerance over the whole interval.
fn common_n_max(n_ex: f64, nu: f64, lo: f64, hi: f64) -> Result<usize> {
    let mut n = 0;
    for phi in linspace(lo, hi, 33) {
        n = n.max(ModelParams::new(phi, n_ex, nu)?.n_max);
    }
    Ok(n)
}

/// Parameters used for a φ scan at fixed `n_ex`, `nu` and `n_max`.
fn scan_params(phi: f64, n_ex: f64, nu: f64, n_max: usize) -> ModelParams {
    ModelParams {
        phi,
        n_ex,
        nu,
        n_max,
        tail_tol: crate::model::DEFAULT_TAIL_TOL,
    }
}

/// Maximum-likelihood estimate of φ on `[range.0, range.1]` with `n_ex` and
/// `nu` known.
pub fn mle(record: &DetectionRecord, n_ex: f64, nu: f64, range: (f64, f64), opts: &MleOptions) -> Result<MleResult> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi <= std::f64::consts::PI && lo <= hi) {
        return Err(MaserError::Domain(format!(
            "search interval [{lo}, {hi}] must lie in (0, pi]"
        )));
    }
    let n_max = common_n_max(n_ex, nu, lo, hi)?;
    let ll = |phi: f64| log_likelihood(record, &scan_params(phi, n_ex, nu, n_max));
    let max = maximize(ll, lo, hi, opts.grid_points, opts.tolerance)?;
    let h = opts.fisher_step;
    let observed_fisher = if max.x - h > 0.0 && max.x + h <= std::f64::consts::PI {
        Some(observed_information(ll, max.x, h)?)
    } else {
        None
    };
    Ok(MleResult {
        phi_hat: max.x,
        log_lik_at_hat: max.value,
        observed_fisher,
        grid_profile: max.profile,
        diagnostics: MleDiagnostics {
            grid_points: opts.grid_points,
            golden_iterations: max.iterations,
            tolerance: opts.tolerance,
            at_boundary: max.at_boundary,
            n_max,
        },
    })
}

/// Observed information of an atom-detection record at `phi_hat`.
pub fn observed_fisher(
    record: &DetectionRecord,
    phi_hat: f64,
    n_ex: f64,
    nu: f64,
    h: f64,
) -> Result<ObservedInformation> {
    if !(phi_hat - h > 0.0) {
        return Err(MaserError::Domain(format!("phi_hat = {phi_hat} too close to 0 for step {h}")));
    }
    let n_max = common_n_max(n_ex, nu, phi_hat - h, phi_hat + h)?;
    observed_information(
        |phi| log_likelihood(record, &scan_params(phi, n_ex, nu, n_max)),
        phi_hat,
        h,
    )
}
