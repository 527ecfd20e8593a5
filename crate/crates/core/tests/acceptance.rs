//! Acceptance criteria. Each test prints one PASS/FAIL line and then asserts.

mod common;

use common::*;
use maser_core::abc::{compare_posteriors, refined_likelihood_posterior, run_abc, AbcConfig};
use maser_core::counting::{fisher_counts, fisher_sweep, gaussian_limit};
use maser_core::filter::{full_monitoring_log_likelihood, maximize, mle, observed_information, Filter, MleOptions};
use maser_core::model::{build_generators, stationary_state, Channel, MaserModel, ModelParams};
use maser_core::record::{DetectionRecord, Event, RecordMeta};
use maser_core::simulate::{simulate, simulate_atoms};
use maser_core::stats::{extract, ks_critical_1pct, ks_one_sample, ks_two_sample, theoretical_runmean, Statistic, WaitingTimeLaw};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const STATIONARY_TOL: f64 = 1e-9;
const GENERATOR_RESIDUAL_TOL: f64 = 1e-10;
const ENERGY_REL_TOL: f64 = 1e-6;
const NORMALIZATION_TOL: f64 = 1e-3;
const FILTER_VS_DENSE_REL_TOL: f64 = 1e-9;
const RUNMEAN_REL_TOL: f64 = 0.02;
const DIP_PHI_TOL: f64 = 0.03;
const DIP_DEPTH: f64 = 0.02;
const ORDERING_SE: f64 = 2.0;
const DIP_GAP: f64 = 10.0;
const FULL_MONITORING_REL_TOL: f64 = 0.10;
const MLE_VARIANCE_FACTOR: f64 = 1.5;
const MLE_MEAN_SE: f64 = 2.0;
const MODE_THRESHOLD: f64 = 0.10;
const TV_MAX: f64 = 0.25;
const SD_FACTOR: f64 = 1.5;
const KS_ORACLE_TOL: f64 = 1e-15;
const RAYLEIGH_TOL: f64 = 1e-6;

fn sweep_params(seed: u64) -> Vec<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..20)
        .map(|_| {
            let phi = 0.1 + 1.4 * rng.random::<f64>();
            let n_ex = if rng.random::<bool>() { 16.0 } else { 150.0 };
            let nu = if rng.random::<bool>() { 0.1 } else { 0.15 };
            ModelParams::new(phi, n_ex, nu).unwrap()
        })
        .collect()
}

#[test]
fn c01_stationary_state_matches_null_space() {
    let mut worst_state: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;
    for p in sweep_params(1) {
        let g = build_generators(&p).unwrap();
        let rho = stationary_state(&p).unwrap();
        let oracle = null_vector(&g.l_full);
        let diff = rho
            .probs()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let residual: f64 = g.l_full.mul(rho.probs()).iter().map(|x| x.abs()).sum();
        worst_state = worst_state.max(diff);
        worst_residual = worst_residual.max(residual);
    }
    let pass = worst_state <= STATIONARY_TOL && worst_residual <= GENERATOR_RESIDUAL_TOL;
    report(
        "1",
        pass,
        &format!("max |rho - null| = {worst_state:.2e}, max |L rho|_1 = {worst_residual:.2e}"),
    );
    assert!(pass);
}

#[test]
fn c02_energy_balance() {
    let mut worst: f64 = 0.0;
    for p in sweep_params(1) {
        let m = MaserModel::new(&p).unwrap();
        let n = m.mean_photons();
        let r1 = m.rate(Channel::Ground);
        let r2 = m.rate(Channel::Excited);
        let e1 = n - p.nu;
        let e2 = p.n_ex - n + p.nu;
        worst = worst.max(((r1 - e1) / e1).abs()).max(((r2 - e2) / e2).abs());
    }
    let pass = worst <= ENERGY_REL_TOL;
    report("2", pass, &format!("max relative energy-balance error {worst:.2e}"));
    assert!(pass);
}

/// Unnormalized probability density of a record on the toy model, by dense
/// matrix exponentials.
fn dense_density(l0: &Dense, jumps: &[Dense; 2], rho: &[f64], events: &[(f64, usize)], horizon: f64) -> f64 {
    let mut v = rho.to_vec();
    let mut t_prev = 0.0;
    for &(t, a) in events {
        v = matvec(&expm(l0, t - t_prev), &v);
        v = matvec(&jumps[a], &v);
        t_prev = t;
    }
    v = matvec(&expm(l0, horizon - t_prev), &v);
    v.iter().sum()
}

#[test]
fn c03_likelihood_normalization_on_toy_model() {
    let p = ModelParams {
        phi: 1.0,
        n_ex: 0.5,
        nu: 0.5,
        n_max: 3,
        tail_tol: 1.0,
    };
    let horizon = 0.2;
    let g = build_generators(&p).unwrap();
    let rho = stationary_state(&p).unwrap().into_probs();
    let l0 = dense(&g.l0);
    let jumps = [dense(&g.j1), dense(&g.j2)];
    let filter = Filter::new(&p).unwrap();
    let channels = [Channel::Ground, Channel::Excited];
    let mut worst_rel: f64 = 0.0;
    let mut check = |events: &[(f64, usize)], density: f64| {
        let rec = DetectionRecord::new(
            horizon,
            events.iter().map(|&(t, a)| Event::new(t, channels[a])).collect(),
            RecordMeta::default(),
        )
        .unwrap();
        let ll = filter.log_likelihood(&rec).unwrap();
        worst_rel = worst_rel.max(((ll.exp() - density) / density).abs());
    };

    let nodes = gauss_legendre(20, 0.0, horizon);
    let p0 = dense_density(&l0, &jumps, &rho, &[], horizon);
    check(&[], p0);
    let mut p1 = 0.0;
    let mut p2 = 0.0;
    for a in 0..2 {
        for &(t, w) in &nodes {
            let d = dense_density(&l0, &jumps, &rho, &[(t, a)], horizon);
            check(&[(t, a)], d);
            p1 += w * d;
        }
    }
    for a in 0..2 {
        for b in 0..2 {
            for &(t1, w1) in &nodes {
                for &(t2, w2) in &gauss_legendre(12, t1, horizon) {
                    let ev = [(t1, a), (t2, b)];
                    let d = dense_density(&l0, &jumps, &rho, &ev, horizon);
                    check(&ev, d);
                    p2 += w1 * w2 * d;
                }
            }
        }
    }
    let total = p0 + p1 + p2;
    let pass = (total - 1.0).abs() <= NORMALIZATION_TOL && worst_rel <= FILTER_VS_DENSE_REL_TOL;
    report(
        "3",
        pass,
        &format!(
            "sum over records with <= 2 events = {total:.6} (p0 {p0:.5}, p1 {p1:.5}, p2 {p2:.5}); filter vs dense max rel err {worst_rel:.2e}"
        ),
    );
    assert!(pass);
}

#[test]
fn c04_simulated_waiting_times_match_theory() {
    let p = ModelParams::new(0.5, 16.0, 0.1).unwrap();
    let rec = simulate_atoms(&p, 5000.0, 4).unwrap();
    let s = extract(&rec, 1.0).unwrap();
    let law = WaitingTimeLaw::new(&p, 1).unwrap();
    let cdf = law.cdf(&s.wait_1).unwrap();
    let ks = ks_one_sample(&s.wait_1, &cdf).unwrap();
    let crit = ks_critical_1pct(s.wait_1.len());
    let n1 = theoretical_runmean(&p, 1).unwrap().mean_run;
    let rel = (s.runmean_1 / n1 - 1.0).abs();
    let pass = ks < crit && rel <= RUNMEAN_REL_TOL;
    report(
        "4",
        pass,
        &format!(
            "KS = {ks:.4} vs 1% critical {crit:.4} (n = {}); runmean_1 {:.4} vs <n_1> {n1:.4} (rel {rel:.4})",
            s.wait_1.len(),
            s.runmean_1
        ),
    );
    assert!(pass);
}

/// Interior grid points that are no larger (or no smaller) than both neighbours.
fn local_extrema(y: &[f64], minima: bool) -> Vec<usize> {
    (1..y.len() - 1)
        .filter(|&i| {
            if minima {
                y[i] <= y[i - 1] && y[i] <= y[i + 1]
            } else {
                y[i] >= y[i - 1] && y[i] >= y[i + 1]
            }
        })
        .collect()
}

#[test]
fn c05_count_information_dip() {
    let phis: Vec<f64> = (0..141).map(|i| 0.1 + 0.01 * i as f64).collect();
    let rows = fisher_sweep(16.0, 0.1, &phis).unwrap();
    let i_star: Vec<f64> = rows.iter().map(|r| r.i_star).collect();
    let m1: Vec<f64> = rows.iter().map(|r| r.m1).collect();
    let top = i_star.iter().cloned().fold(0.0, f64::max);
    let global_min = (0..rows.len()).min_by(|&a, &b| i_star[a].total_cmp(&i_star[b])).unwrap();
    let peak = (0..rows.len()).max_by(|&a, &b| m1[a].total_cmp(&m1[b])).unwrap();

    // The information vanishes wherever the mean counts are stationary in
    // phi, so every deep dip must sit on an extremum of m1, and the dip
    // next to the m1 maximum must be within tolerance of it.
    let dips: Vec<usize> = local_extrema(&i_star, true)
        .into_iter()
        .filter(|&i| i_star[i] <= DIP_DEPTH * top)
        .collect();
    let mut m1_extrema = local_extrema(&m1, true);
    m1_extrema.extend(local_extrema(&m1, false));
    let near = |i: usize, j: usize| (phis[i] - phis[j]).abs() <= DIP_PHI_TOL + 1e-12;
    let all_on_extrema = dips.iter().all(|&d| m1_extrema.iter().any(|&e| near(d, e)));
    let peak_dip = dips.iter().copied().find(|&d| near(d, peak));
    let pass = all_on_extrema && peak_dip.is_some();
    let dip_list: Vec<String> = dips.iter().map(|&d| format!("{:.2} ({:.4})", phis[d], i_star[d])).collect();
    report(
        "5",
        pass,
        &format!(
            "m1 maximum at phi = {:.2}; deep i_star dips at {dip_list:?}; dip at the m1 maximum: {}; all dips on m1 extrema: {all_on_extrema}; global grid minimum {:.5} at phi = {:.2}; sweep max i_star {top:.3}",
            phis[peak],
            peak_dip.map_or("none".to_string(), |d| format!("phi {:.2}, i_star {:.4} = {:.2e} of max", phis[d], i_star[d], i_star[d] / top)),
            i_star[global_min],
            phis[global_min],
        ),
    );
    assert!(pass);
}

/// Observed information per unit time at the MLE found by a local search.
fn local_fisher_per_time(rec: &DetectionRecord, phi: f64) -> f64 {
    let lo = (phi - 0.1).max(0.02);
    let hi = (phi + 0.1).min(std::f64::consts::PI);
    let opts = MleOptions {
        grid_points: 21,
        ..MleOptions::default()
    };
    let r = mle(rec, 16.0, 0.1, (lo, hi), &opts).unwrap();
    r.fisher_per_time(rec.horizon()).unwrap()
}

#[test]
fn c06_full_record_information_dominates_counts() {
    let grid: Vec<f64> = (0..15).map(|i| 0.1 + 0.1 * i as f64).collect();
    let counts = fisher_sweep(16.0, 0.1, &grid).unwrap();
    // The dip next to the m1 maximum, and the grid minimum, which can sit on
    // the second zero of the count information.
    let argmin = |f: &dyn Fn(usize) -> f64| (0..grid.len()).min_by(|&a, &b| f(a).total_cmp(&f(b))).unwrap();
    let dips = [argmin(&|k| -counts[k].m1), argmin(&|k| counts[k].i_star)];
    let mut ok = true;
    let mut lines = Vec::new();
    for (k, &phi) in grid.iter().enumerate() {
        let p = ModelParams::new(phi, 16.0, 0.1).unwrap();
        let per_time: Vec<f64> = (0..30u64)
            .into_par_iter()
            .map(|s| {
                let rec = simulate_atoms(&p, 500.0, 6_000 + 100 * k as u64 + s).unwrap();
                local_fisher_per_time(&rec, phi)
            })
            .collect();
        let (m, sd) = mean_sd(&per_time);
        let se = sd / (per_time.len() as f64).sqrt();
        let i_star = counts[k].i_star;
        let mut good = m >= i_star - ORDERING_SE * se;
        if dips.contains(&k) {
            good &= m >= DIP_GAP * i_star;
        }
        ok &= good;
        lines.push(format!("phi {phi:.1}: I_hat/T {m:.3} (se {se:.3}) vs i_star {i_star:.3}{}", if dips.contains(&k) { " [dip]" } else { "" }));
    }
    report("6", ok, &lines.join("; "));
    assert!(ok);
}

#[test]
fn c07_full_monitoring_information() {
    let p = ModelParams::new(0.5, 16.0, 0.1).unwrap();
    let horizon = 500.0;
    let per_time: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|s| {
            let rec = simulate(&p, horizon, 7_000 + s).unwrap();
            let ll = |phi: f64| full_monitoring_log_likelihood(&rec, &p.at_phi(phi));
            let m = maximize(ll, 0.4, 0.6, 41, 1e-6).unwrap();
            observed_information(ll, m.x, 1e-3).unwrap().value / horizon
        })
        .collect();
    let (m, sd) = mean_sd(&per_time);
    let bench = 4.0 * p.n_ex * MaserModel::new(&p).unwrap().mean_photons();
    let rel = (m / bench - 1.0).abs();
    let pass = rel <= FULL_MONITORING_REL_TOL;
    report(
        "7",
        pass,
        &format!(
            "mean observed information per time {m:.2} (se {:.2}) vs 4 n_ex <N> = {bench:.2} (rel {rel:.4})",
            sd / 10.0
        ),
    );
    assert!(pass);
}

#[test]
fn c08_mle_calibration() {
    let phi_true = 0.44;
    let p = ModelParams::new(phi_true, 16.0, 0.1).unwrap();
    let opts = MleOptions {
        grid_points: 21,
        ..MleOptions::default()
    };
    let results: Vec<(f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|s| {
            let rec = simulate_atoms(&p, 1000.0, 8_000 + s).unwrap();
            let r = mle(&rec, 16.0, 0.1, (phi_true - 0.1, phi_true + 0.1), &opts).unwrap();
            (r.phi_hat, r.observed_fisher.unwrap().value)
        })
        .collect();
    let hats: Vec<f64> = results.iter().map(|r| r.0).collect();
    let (mean, sd) = mean_sd(&hats);
    let var = sd * sd;
    let mean_info = results.iter().map(|r| r.1).sum::<f64>() / results.len() as f64;
    let predicted = 1.0 / mean_info;
    let ratio = var / predicted;
    let se = sd / (hats.len() as f64).sqrt();
    let pass = ratio <= MLE_VARIANCE_FACTOR
        && ratio >= 1.0 / MLE_VARIANCE_FACTOR
        && (mean - phi_true).abs() <= MLE_MEAN_SE * se;
    report(
        "8",
        pass,
        &format!(
            "var(phi_hat) {var:.3e} vs 1/mean(I_hat) {predicted:.3e} (ratio {ratio:.3}); mean {mean:.5} (se {se:.5})"
        ),
    );
    assert!(pass);
}

#[test]
fn c09_abc_reproduces_qualitative_posteriors() {
    let cfg = |seed: u64| AbcConfig::new(16.0, 0.1, seed);

    // (a) waiting times of ground-state atoms alone give a bimodal posterior.
    let p44 = ModelParams::new(0.44, 16.0, 0.1).unwrap();
    let data = simulate_atoms(&p44, 500.0, 9_044).unwrap();
    let post = run_abc(&data, &cfg(90)).unwrap();
    let h = &post.combination(&[Statistic::Wait1]).unwrap().histogram;
    let modes: Vec<f64> = h.modes_above(MODE_THRESHOLD).iter().map(|&i| h.center(i)).collect();
    let a = modes.len() >= 2;
    let shape: Vec<String> = (0..h.bins())
        .filter(|&i| h.mass[i] >= 0.005)
        .map(|i| format!("{:.2}:{:.3}", h.center(i), h.mass[i]))
        .collect();

    // (b) and (c) on replicate data sets at 0.40.
    let p40 = ModelParams::new(0.40, 16.0, 0.1).unwrap();
    let mut b = true;
    let mut tvs = Vec::new();
    let mut ratios = Vec::new();
    let mut notes = Vec::new();
    for r in 0..5u64 {
        let data = simulate_atoms(&p40, 500.0, 9_040 + r).unwrap();
        let post = run_abc(&data, &cfg(91 + r)).unwrap();
        let all = &post.combination(&Statistic::ALL).unwrap().histogram;
        for s in Statistic::ALL {
            let single = &post.combination(&[s]).unwrap().histogram;
            if !(single.sd > all.sd) {
                b = false;
                notes.push(format!("rep {r}: {} sd {:.4} <= all-7 sd {:.4}", s.name(), single.sd, all.sd));
            }
        }
        let reference = refined_likelihood_posterior(&data, (0.1, 1.5), 16.0, 0.1, 141, 401).unwrap();
        let cmp = compare_posteriors(all, &reference);
        tvs.push(cmp.total_variation);
        ratios.push(cmp.sd_ratio);
    }
    let mut sorted_tv = tvs.clone();
    sorted_tv.sort_by(f64::total_cmp);
    let median_tv = sorted_tv[2];
    let mut sorted_ratio = ratios.clone();
    sorted_ratio.sort_by(f64::total_cmp);
    let median_ratio = sorted_ratio[2];
    let c = median_tv < TV_MAX && median_ratio <= SD_FACTOR;
    let pass = a && b && c;
    report(
        "9",
        pass,
        &format!(
            "(a) wait1 modes {modes:?} (sd {:.4}, histogram {}) -> {}; (b) singles broader than all-7 -> {} {notes:?}; (c) TV {tvs:.3?} (median {median_tv:.3}), sd ratio {ratios:.2?} (median {median_ratio:.2}) -> {}",
            h.sd,
            shape.join(" "),
            a,
            b,
            c
        ),
    );
    assert!(pass);
}

fn brute_force_ks(x: &[f64], y: &[f64]) -> f64 {
    let ecdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    x.iter()
        .chain(y)
        .map(|&t| (ecdf(x, t) - ecdf(y, t)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn c10_ks_and_combined_information_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_ks: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let m = rng.random_range(1..60);
        // Coarse values force ties within and across samples.
        let mut draw = |k: usize| {
            let mut v: Vec<f64> = (0..k).map(|_| (rng.random::<f64>() * 20.0).floor() / 4.0).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let x = draw(n);
        let y = draw(m);
        worst_ks = worst_ks.max((ks_two_sample(&x, &y).unwrap() - brute_force_ks(&x, &y)).abs());
    }

    let mut worst_gap: f64 = 0.0;
    let mut below = false;
    for phi in [0.3, 0.5, 0.8, 1.2] {
        let p = ModelParams::new(phi, 16.0, 0.1).unwrap();
        let limit = gaussian_limit(&p).unwrap();
        let f = fisher_counts(&limit).unwrap();
        let mut best: f64 = 0.0;
        for _ in 0..10_000 {
            let th = rng.random::<f64>() * std::f64::consts::PI;
            let a = [th.cos(), th.sin()];
            let num = a[0] * limit.mu[0] + a[1] * limit.mu[1];
            let v = &limit.v;
            let den = a[0] * (v[0][0] * a[0] + v[0][1] * a[1]) + a[1] * (v[1][0] * a[0] + v[1][1] * a[1]);
            best = best.max(num * num / den);
        }
        below |= f.i_star < best;
        worst_gap = worst_gap.max((f.i_star - best) / f.i_star);
    }
    let pass = worst_ks <= KS_ORACLE_TOL && !below && worst_gap <= RAYLEIGH_TOL;
    report(
        "10",
        pass,
        &format!("KS vs brute force max diff {worst_ks:.1e}; (i_star - best random quotient) / i_star max {worst_gap:.2e}, below best: {below}"),
    );
    assert!(pass);
}
