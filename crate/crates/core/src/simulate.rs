//! Seeded simulation of the cavity birth-death process and its detection
//! record.
//!
//! The photon number jumps with exponential holding times. Each upward jump
//! is attributed to a ground-state atom or to the bath by a Bernoulli draw
//! with the atom's share of the birth rate; between jumps, excited-state atoms
//! arrive as a Poisson process whose intensity depends on the current level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{MaserError, Result};
use crate::model::{stationary_state, Channel, ModelParams};
use crate::record::{DetectionRecord, Event, FullRecord, RecordMeta};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimOptions {
    /// Start from this level instead of sampling it from the stationary
    /// state.
    pub initial_level: Option<usize>,
}

/// Per-level rates, precomputed once per parameter set.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: ModelParams,
    cdf: Vec<f64>,
    ground: Vec<f64>,
    excited: Vec<f64>,
    absorption: Vec<f64>,
    emission: Vec<f64>,
}

impl Simulator {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let rho = stationary_state(params)?;
        let mut acc = 0.0;
        let cdf = rho
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let levels = 0..=params.n_max;
        Ok(Simulator {
            params: *params,
            cdf,
            ground: levels.clone().map(|k| params.ground_rate(k)).collect(),
            excited: levels.clone().map(|k| params.excited_rate(k)).collect(),
            absorption: levels.clone().map(|k| params.absorption_rate(k)).collect(),
            emission: levels.map(|k| params.emission_rate(k)).collect(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    pub fn run(&self, horizon: f64, seed: u64, opts: &SimOptions) -> Result<FullRecord> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(MaserError::Domain(format!("horizon must be positive, got {horizon}")));
        }
        let top = self.params.n_max;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial = match opts.initial_level {
            Some(k) if k > top => {
                return Err(MaserError::Domain(format!("initial level {k} exceeds n_max = {top}")))
            }
            Some(k) => k,
            None => self.sample_initial(&mut rng),
        };
        if initial == top {
            return Err(truncation_hit(top, 0.0));
        }
        let mut events = Vec::new();
        let mut level = initial;
        let mut t = 0.0;
        loop {
            let birth = self.ground[level] + self.absorption[level];
            let death = self.emission[level];
            let total = birth + death;
            let hold = if total > 0.0 {
                rng.sample::<f64, _>(Exp1) / total
            } else {
                f64::INFINITY
            };
            let end = (t + hold).min(horizon);
            let excited = self.excited[level];
            if excited > 0.0 {
                let mut s = t;
                loop {
                    s += rng.sample::<f64, _>(Exp1) / excited;
                    if s >= end {
                        break;
                    }
                    events.push(Event::new(s, Channel::Excited));
                }
            }
            t += hold;
            if t > horizon {
                break;
            }
            if rng.random::<f64>() * total < birth {
                let atom = rng.random::<f64>() * birth < self.ground[level];
                events.push(Event::new(t, if atom { Channel::Ground } else { Channel::Absorption }));
                level += 1;
                if level == top {
                    return Err(truncation_hit(top, t));
                }
            } else {
                events.push(Event::new(t, Channel::Emission));
                level -= 1;
            }
        }
        let meta = RecordMeta {
            seed: Some(seed),
            params: Some(self.params),
            ..RecordMeta::default()
        };
        FullRecord::new(horizon, initial, events, meta)
    }
}

fn truncation_hit(top: usize, t: f64) -> MaserError {
    MaserError::Truncation(format!("cavity reached n_max = {top} at t = {t}"))
}

/// Simulates a fully monitored record on `[0, horizon]`.
pub fn simulate(params: &ModelParams, horizon: f64, seed: u64) -> Result<FullRecord> {
    Simulator::new(params)?.run(horizon, seed, &SimOptions::default())
}

pub fn simulate_with(params: &ModelParams, horizon: f64, seed: u64, opts: &SimOptions) -> Result<FullRecord> {
    Simulator::new(params)?.run(horizon, seed, opts)
}

/// Atom detections only.
pub fn simulate_atoms(params: &ModelParams, horizon: f64, seed: u64) -> Result<DetectionRecord> {
    simulate(params, horizon, seed).map(|r| r.atoms_only())
}

/// One record per seed, in the order of `seeds`.
pub fn simulate_batch(params: &ModelParams, horizon: f64, seeds: &[u64]) -> Result<Vec<Result<FullRecord>>> {
    let sim = Simulator::new(params)?;
    Ok(seeds
        .par_iter()
        .map(|&s| sim.run(horizon, s, &SimOptions::default()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_give_identical_records() {
        let p = ModelParams::new(0.5, 16.0, 0.1).unwrap();
        let a = simulate(&p, 50.0, 9).unwrap();
        let b = simulate(&p, 50.0, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate(&p, 50.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn frozen_cavity_only_sees_excited_atoms() {
        let p = ModelParams::with_n_max(1e-9, 16.0, 0.0, 16).unwrap();
        let opts = SimOptions {
            initial_level: Some(0),
        };
        let r = simulate_with(&p, 200.0, 3, &opts).unwrap();
        assert!(r.events().iter().all(|e| e.channel == Channel::Excited));
        let rate = r.events().len() as f64 / 200.0;
        assert!((rate - 16.0).abs() < 3.0 * (16.0_f64 / 200.0).sqrt(), "rate {rate}");
    }

    #[test]
    fn small_truncation_is_reported() {
        let mut p = ModelParams::new(0.5, 16.0, 0.1).unwrap();
        p.n_max = 9;
        p.tail_tol = 1.0;
        let opts = SimOptions {
            initial_level: Some(5),
        };
        match simulate_with(&p, 100.0, 1, &opts) {
            Err(MaserError::Truncation(_)) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn batch_follows_seed_order() {
        let p = ModelParams::new(0.5, 16.0, 0.1).unwrap();
        let seeds = [5, 1, 3];
        let batch = simulate_batch(&p, 20.0, &seeds).unwrap();
        for (s, r) in seeds.iter().zip(batch) {
            assert_eq!(r.unwrap(), simulate(&p, 20.0, *s).unwrap());
        }
    }
}
