//! Summary statistics of detection records, their theoretical counterparts
//! and the distances used by the ABC engine.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MaserError, Result};
use crate::linalg::{solve_resolvent, Propagator, Tridiagonal, Workspace};
use crate::model::{Channel, MaserModel, ModelParams};
use crate::record::DetectionRecord;

/// The seven per-record statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStatistics {
    pub total_1: usize,
    pub total_2: usize,
    /// Sorted gaps between consecutive label-1 detections.
    pub wait_1: Vec<f64>,
    pub wait_2: Vec<f64>,
    /// Mean length of maximal runs of label 1; zero without such events.
    pub runmean_1: f64,
    pub runmean_2: f64,
    /// Sorted label-1 densities in the window preceding each label-2 event.
    pub local_density: Vec<f64>,
    pub window_s: f64,
    /// Number of windows cut at `t = 0`; their count is still divided by the
    /// full window length.
    pub truncated_windows: usize,
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Computes all seven statistics of `record` with local-density window
/// `window_s`.
pub fn extract(record: &DetectionRecord, window_s: f64) -> Result<SummaryStatistics> {
    if !(window_s > 0.0 && window_s.is_finite()) {
        return Err(MaserError::Domain(format!("window must be positive, got {window_s}")));
    }
    let mut last = [None::<f64>; 2];
    let mut totals = [0usize; 2];
    let mut waits: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut runs = [(0usize, 0usize); 2];
    let mut prev_label: Option<usize> = None;
    let mut ground_times: Vec<f64> = Vec::new();
    let mut window_start = 0usize;
    let mut local = Vec::new();
    let mut truncated = 0;
    for e in record.events() {
        let a = match e.channel {
            Channel::Ground => 0,
            Channel::Excited => 1,
            other => {
                return Err(MaserError::format(format!("unexpected label {}", other.label())));
            }
        };
        totals[a] += 1;
        if let Some(t0) = last[a] {
            waits[a].push(e.t - t0);
        }
        last[a] = Some(e.t);
        runs[a].0 += 1;
        if prev_label != Some(a) {
            runs[a].1 += 1;
        }
        prev_label = Some(a);
        if a == 0 {
            ground_times.push(e.t);
        } else {
            let lo = e.t - window_s;
            if lo < 0.0 {
                truncated += 1;
            }
            while window_start < ground_times.len() && ground_times[window_start] <= lo {
                window_start += 1;
            }
            local.push((ground_times.len() - window_start) as f64 / window_s);
        }
    }
    let runmean = |(n, k): (usize, usize)| if k == 0 { 0.0 } else { n as f64 / k as f64 };
    let [w1, w2] = waits;
    Ok(SummaryStatistics {
        total_1: totals[0],
        total_2: totals[1],
        wait_1: sorted(w1),
        wait_2: sorted(w2),
        runmean_1: runmean(runs[0]),
        runmean_2: runmean(runs[1]),
        local_density: sorted(local),
        window_s,
        truncated_windows: truncated,
    })
}

/// Statistics of many records, in input order.
pub fn extract_batch(records: &[DetectionRecord], window_s: f64) -> Result<Vec<SummaryStatistics>> {
    records.par_iter().map(|r| extract(r, window_s)).collect()
}

fn check_sorted(x: &[f64], name: &str) -> Result<()> {
    if x.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(MaserError::Domain(format!("sample {name} is not sorted")));
    }
    Ok(())
}

/// Two-sided two-sample Kolmogorov-Smirnov statistic `sup |F_n - G_m|` of
/// two sorted samples.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(MaserError::EmptySample("KS distance needs two nonempty samples".into()));
    }
    check_sorted(x, "x")?;
    check_sorted(y, "y")?;
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    Ok(d)
}

/// One-sample Kolmogorov-Smirnov statistic of a sorted sample against a
/// continuous CDF given at the sample points.
pub fn ks_one_sample(x: &[f64], cdf_at_x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(MaserError::EmptySample("KS distance needs a nonempty sample".into()));
    }
    check_sorted(x, "x")?;
    if cdf_at_x.len() != x.len() {
        return Err(MaserError::Domain("CDF values must match the sample".into()));
    }
    let n = x.len() as f64;
    Ok(cdf_at_x
        .iter()
        .enumerate()
        .map(|(i, &f)| (f - i as f64 / n).max((i + 1) as f64 / n - f))
        .fold(0.0, f64::max))
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Statistic {
    Total1,
    Total2,
    Wait1,
    Wait2,
    Run1,
    Run2,
    LocalDensity,
}

impl Statistic {
    pub const ALL: [Statistic; 7] = [
        Statistic::Total1,
        Statistic::Total2,
        Statistic::Wait1,
        Statistic::Wait2,
        Statistic::Run1,
        Statistic::Run2,
        Statistic::LocalDensity,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Total1 => "total1",
            Statistic::Total2 => "total2",
            Statistic::Wait1 => "wait1",
            Statistic::Wait2 => "wait2",
            Statistic::Run1 => "run1",
            Statistic::Run2 => "run2",
            Statistic::LocalDensity => "locden",
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = MaserError;

    fn from_str(s: &str) -> Result<Self> {
        Statistic::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| MaserError::Domain(format!("unknown statistic `{s}`")))
    }
}

/// Parses a comma-separated list such as `wait1,total2`.
pub fn parse_statistics(list: &str) -> Result<Vec<Statistic>> {
    let mut out: Vec<Statistic> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(MaserError::Domain("empty statistic list".into()));
    }
    Ok(out)
}

/// Distances between simulated and observed statistics, indexed like
/// [`Statistic::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceVector {
    pub d: [f64; 7],
    /// Entries filled by convention because a sample was empty or a
    /// reference run mean vanished.
    pub degenerate: [bool; 7],
}

impl DistanceVector {
    pub fn get(&self, s: Statistic) -> f64 {
        self.d[s.index()]
    }
}

fn runmean_distance(sim: f64, exp: f64) -> (f64, bool) {
    if exp > 0.0 {
        ((1.0 - sim / exp).abs(), false)
    } else if sim == 0.0 {
        (0.0, true)
    } else {
        (f64::INFINITY, true)
    }
}

pub fn distances(sim: &SummaryStatistics, exp: &SummaryStatistics) -> DistanceVector {
    let mut d = [0.0; 7];
    let mut degenerate = [false; 7];
    d[0] = (sim.total_1 as f64 - exp.total_1 as f64).abs();
    d[1] = (sim.total_2 as f64 - exp.total_2 as f64).abs();
    let ks_slots = [
        (2, &sim.wait_1, &exp.wait_1),
        (3, &sim.wait_2, &exp.wait_2),
        (6, &sim.local_density, &exp.local_density),
    ];
    for (k, a, b) in ks_slots {
        match ks_two_sample(a, b) {
            Ok(v) => d[k] = v,
            Err(_) => {
                d[k] = 1.0;
                degenerate[k] = true;
            }
        }
    }
    (d[4], degenerate[4]) = runmean_distance(sim.runmean_1, exp.runmean_1);
    (d[5], degenerate[5]) = runmean_distance(sim.runmean_2, exp.runmean_2);
    DistanceVector { d, degenerate }
}

fn atom_channel(channel: u8) -> Result<Channel> {
    match channel {
        1 => Ok(Channel::Ground),
        2 => Ok(Channel::Excited),
        other => Err(MaserError::Domain(format!("channel must be 1 or 2, got {other}"))),
    }
}

/// Stationary law of the waiting time between consecutive detections of one
/// atom channel: density `Tr(J e^{(L-J)t} ρ_after)` with
/// `ρ_after = J ρ_ss / Tr(J ρ_ss)`, and CDF `1 - Tr(e^{(L-J)t} ρ_after)`.
#[derive(Debug, Clone)]
pub struct WaitingTimeLaw {
    jump: Tridiagonal,
    survival: Tridiagonal,
    propagator: Propagator,
    after: Vec<f64>,
}

impl WaitingTimeLaw {
    pub fn new(params: &ModelParams, channel: u8) -> Result<Self> {
        let ch = atom_channel(channel)?;
        let model = MaserModel::new(params)?;
        let jump = model.generators.jump(ch).clone();
        let survival = model.generators.survival(ch);
        let mut after = jump.mul(model.stationary.probs());
        let z: f64 = after.iter().sum();
        if !(z > 0.0) {
            return Err(MaserError::Numerical("channel has zero stationary rate".into()));
        }
        after.iter_mut().for_each(|x| *x /= z);
        Ok(WaitingTimeLaw {
            propagator: Propagator::new(&survival),
            jump,
            survival,
            after,
        })
    }

    /// Cavity distribution right after a detection.
    pub fn after_state(&self) -> &[f64] {
        &self.after
    }

    /// Density and CDF at increasing nonnegative times.
    pub fn evaluate(&self, times: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut ws = Workspace::default();
        let mut v = self.after.clone();
        let mut log_mass = 0.0;
        let mut t_prev = 0.0;
        let mut density = Vec::with_capacity(times.len());
        let mut cdf = Vec::with_capacity(times.len());
        for &t in times {
            if !(t >= t_prev) {
                return Err(MaserError::Domain("times must be increasing and nonnegative".into()));
            }
            log_mass += self.propagator.apply_scaled(&mut v, t - t_prev, &mut ws)?;
            t_prev = t;
            let mass = log_mass.exp();
            let rate: f64 = self.jump.mul(&v).iter().sum();
            density.push(rate * mass);
            cdf.push((1.0 - mass).clamp(0.0, 1.0));
        }
        Ok((density, cdf))
    }

    pub fn cdf(&self, times: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(times)?.1)
    }

    /// Mean waiting time `Tr(-(L-J)^{-1} ρ_after)`.
    pub fn mean(&self) -> Result<f64> {
        let x = solve_resolvent(&self.survival, &self.after)?;
        Ok(-x.iter().sum::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitingDensity {
    pub t: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
}

pub fn theoretical_waiting_density(params: &ModelParams, channel: u8, t_grid: &[f64]) -> Result<WaitingDensity> {
    if t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(MaserError::Domain("time grid must be positive".into()));
    }
    let (density, cdf) = WaitingTimeLaw::new(params, channel)?.evaluate(t_grid)?;
    Ok(WaitingDensity {
        t: t_grid.to_vec(),
        density,
        cdf,
    })
}

/// KS distance between two waiting-time laws, evaluated as the largest CDF
/// gap on `t_grid`.
pub fn ks_between_laws(a: &WaitingTimeLaw, b: &WaitingTimeLaw, t_grid: &[f64]) -> Result<f64> {
    let fa = a.cdf(t_grid)?;
    let fb = b.cdf(t_grid)?;
    Ok(fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMean {
    /// Mean length of a run of the channel.
    pub mean_run: f64,
    /// Probability that the next detection is of label 1 and 2.
    pub next: [f64; 2],
}

/// Mean run length of label `channel`, `<n_a> = 1/p(b|a)` with
/// `p(b|a) = -Tr(J_b L0^{-1} J_a ρ_ss) / Tr(J_a ρ_ss)`.
pub fn theoretical_runmean(params: &ModelParams, channel: u8) -> Result<RunMean> {
    let a = atom_channel(channel)?;
    let model = MaserModel::new(params)?;
    let g = &model.generators;
    let ja = g.jump(a).mul(model.stationary.probs());
    let rate_a: f64 = ja.iter().sum();
    let x = solve_resolvent(&g.l0, &ja)?;
    let next_prob = |c: Channel| -g.jump(c).mul(&x).iter().sum::<f64>() / rate_a;
    let next = [next_prob(Channel::Ground), next_prob(Channel::Excited)];
    let other = if a == Channel::Ground { next[1] } else { next[0] };
    Ok(RunMean {
        mean_run: 1.0 / other,
        next,
    })
}
