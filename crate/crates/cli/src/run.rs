//! Executes the stages of an [`ExperimentConfig`] in pipeline order:
//! simulate, loglik, mle, stats, theory, fisher, abc, sweep.

use std::fs;
use std::path::{Path, PathBuf};

use maser_core::abc::{compare_posteriors, refined_likelihood_posterior, run_abc, AbcConfig};
use maser_core::counting::fisher_sweep;
use maser_core::filter::{log_likelihood, mle, MleOptions};
use maser_core::seed::derive_seed;
use maser_core::simulate::{simulate, simulate_atoms};
use maser_core::stats::{
    extract, ks_between_laws, parse_statistics, theoretical_runmean, theoretical_waiting_density, Statistic,
    WaitingTimeLaw,
};
use maser_core::{DetectionRecord, FullRecord, MaserError, MaserModel};
use serde_json::json;

use crate::config::*;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Reads a detection record; a full record file is reduced to its atom events.
pub fn load_detection(path: &Path) -> Result<DetectionRecord> {
    match DetectionRecord::read(path) {
        Ok(r) => Ok(r),
        Err(e @ MaserError::Format { .. }) => match FullRecord::read(path) {
            Ok(full) => Ok(full.atoms_only()),
            Err(_) => Err(e.into()),
        },
        Err(e) => Err(e.into()),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub fn write_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    create_parent(path)?;
    fs::write(path, cfg.to_toml()?)?;
    Ok(())
}

/// Runs every configured stage and returns the JSON summaries printed to
/// stdout by the caller.
pub fn execute(cfg: &ExperimentConfig) -> Result<Vec<serde_json::Value>> {
    let mut summaries = Vec::new();
    let mut record_path = cfg.record.clone();

    if let Some(b) = &cfg.simulate {
        let params = cfg.model()?.params()?;
        let seed = derive_seed(cfg.seed, "simulate", 0);
        let out = cfg.output(&b.out);
        create_parent(&out)?;
        let (events, count) = if b.full {
            let rec = simulate(&params, b.horizon, seed)?;
            rec.write(&out)?;
            (rec.events().len(), [rec.count(maser_core::Channel::Ground), rec.count(maser_core::Channel::Excited)])
        } else {
            let rec = simulate_atoms(&params, b.horizon, seed)?;
            rec.write(&out)?;
            (rec.len(), [rec.count(maser_core::Channel::Ground), rec.count(maser_core::Channel::Excited)])
        };
        summaries.push(json!({
            "stage": "simulate",
            "record": out,
            "seed": seed,
            "events": events,
            "ground": count[0],
            "excited": count[1],
        }));
        if record_path.is_none() {
            record_path = Some(out);
        }
    }

    let needs_record = cfg.loglik.is_some() || cfg.mle.is_some() || cfg.stats.is_some() || cfg.abc.is_some();
    let data = if needs_record {
        let path = record_path
            .as_ref()
            .ok_or_else(|| CliError::config("no record given and no simulate stage configured"))?;
        Some(load_detection(path)?)
    } else {
        None
    };

    if let (Some(b), Some(data)) = (&cfg.loglik, &data) {
        let params = cfg.model()?.params()?;
        let ll = log_likelihood(data, &params)?;
        let v = json!({ "stage": "loglik", "phi": params.phi, "n_ex": params.n_ex, "nu": params.nu, "n_max": params.n_max, "events": data.len(), "loglik": ll });
        if let Some(out) = &b.out {
            write_json(&cfg.output(out), &v)?;
        }
        summaries.push(v);
    }

    if let (Some(b), Some(data)) = (&cfg.mle, &data) {
        let opts = MleOptions {
            grid_points: b.grid,
            tolerance: b.tolerance,
            fisher_step: b.fisher_step,
        };
        let r = mle(data, cfg.model()?.n_ex, cfg.model()?.nu, b.range, &opts)?;
        if let Some(p) = &b.profile_out {
            let rows = r.grid_profile.iter().map(|&(phi, ll)| vec![num(phi), num(ll)]);
            write_csv(&cfg.output(p), &["phi", "loglik"], rows)?;
        }
        let v = json!({
            "stage": "mle",
            "phi_hat": r.phi_hat,
            "loglik": r.log_lik_at_hat,
            "observed_fisher": r.observed_fisher,
            "fisher_per_time": r.fisher_per_time(data.horizon()),
            "diagnostics": r.diagnostics,
        });
        if let Some(out) = &b.out {
            write_json(&cfg.output(out), &v)?;
        }
        summaries.push(v);
    }

    if let (Some(b), Some(data)) = (&cfg.stats, &data) {
        let s = extract(data, b.window)?;
        let out = cfg.output(&b.out);
        write_json(&out, &s)?;
        summaries.push(json!({ "stage": "stats", "out": out, "total_1": s.total_1, "total_2": s.total_2, "runmean_1": s.runmean_1, "runmean_2": s.runmean_2 }));
    }

    if let Some(b) = &cfg.theory {
        let params = cfg.model()?.params()?;
        let grid = time_grid(b.t_max, b.points);
        let w1 = theoretical_waiting_density(&params, 1, &grid)?;
        let w2 = theoretical_waiting_density(&params, 2, &grid)?;
        let out = cfg.output(&b.out);
        let rows = (0..grid.len()).map(|i| {
            vec![num(grid[i]), num(w1.density[i]), num(w1.cdf[i]), num(w2.density[i]), num(w2.cdf[i])]
        });
        write_csv(&out, &["t", "density_1", "cdf_1", "density_2", "cdf_2"], rows)?;
        let r1 = theoretical_runmean(&params, 1)?;
        let r2 = theoretical_runmean(&params, 2)?;
        summaries.push(json!({
            "stage": "theory",
            "phi": params.phi,
            "runmean_1": r1.mean_run,
            "runmean_2": r2.mean_run,
            "next_after_1": r1.next,
            "next_after_2": r2.next,
            "out": out,
        }));
    }

    if let Some(b) = &cfg.fisher {
        let out = cfg.output(&b.out);
        let rows = fisher_sweep(cfg.model()?.n_ex, cfg.model()?.nu, &b.phi_grid.points())?;
        write_fisher_rows(&out, &rows)?;
        summaries.push(json!({ "stage": "fisher", "out": out, "points": rows.len() }));
    }

    if let (Some(b), Some(data)) = (&cfg.abc, &data) {
        summaries.push(run_abc_stage(cfg, b, data)?);
    }

    if let Some(b) = &cfg.sweep {
        summaries.push(run_sweep(cfg, b)?);
    }

    Ok(summaries)
}

/// `n` equally spaced positive times ending at `t_max`.
fn time_grid(t_max: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| t_max * i as f64 / n as f64).collect()
}

fn write_fisher_rows(out: &Path, rows: &[maser_core::counting::FisherRow]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|r| vec![num(r.phi), num(r.i1), num(r.i2), num(r.i_star), num(r.i_full)]);
    write_csv(out, &["phi", "i1", "i2", "i_star", "i_full"], rows)
}

fn run_abc_stage(cfg: &ExperimentConfig, b: &AbcBlock, data: &DetectionRecord) -> Result<serde_json::Value> {
    let selected = parse_statistics(&b.stats.join(","))?;
    if selected.is_empty() {
        return Err(CliError::config("abc.stats must name at least one statistic"));
    }
    let mut config = AbcConfig::new(cfg.model()?.n_ex, cfg.model()?.nu, derive_seed(cfg.seed, "abc", 0));
    config.prior_range = b.range;
    config.n_sims = b.n_sims;
    config.quantile = b.quantile;
    config.horizon = b.horizon;
    config.window_s = b.window;
    config.bins = b.bins;
    config.combinations = selected.iter().map(|&s| vec![s]).collect();
    if selected.len() > 1 {
        config.combinations.push(selected.clone());
    }
    let post = run_abc(data, &config)?;
    let dir = cfg.output(&b.out);
    fs::create_dir_all(&dir)?;

    let mut header = vec!["phi".to_string()];
    header.extend((1..=7).map(|i| format!("d{i}")));
    header.push("seed".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = post.trials.iter().map(|t| {
        let mut row = vec![num(t.phi)];
        row.extend(Statistic::ALL.iter().map(|&s| num(t.distances.get(s))));
        row.push(t.seed.to_string());
        row
    });
    write_csv(&dir.join("trials.csv"), &header, rows)?;

    let reference = refined_likelihood_posterior(data, b.range, cfg.model()?.n_ex, cfg.model()?.nu, 141, 401)?;
    let rows = (0..reference.grid.len())
        .map(|i| vec![num(reference.grid[i]), num(reference.log_lik[i]), num(reference.posterior[i])]);
    write_csv(&dir.join("reference_posterior.csv"), &["phi", "loglik", "mass"], rows)?;

    let mut combos = Vec::new();
    for c in &post.combined {
        let h = &c.histogram;
        let rows = (0..h.bins()).map(|i| {
            let (l, r) = h.edges(i);
            vec![num(l), num(r), num(h.mass[i])]
        });
        write_csv(&dir.join(format!("posterior_{}.csv", c.name())), &["bin_left", "bin_right", "mass"], rows)?;
        let cmp = compare_posteriors(h, &reference);
        combos.push(json!({
            "name": c.name(),
            "accepted": c.accepted.len(),
            "empty_at_nominal_quantile": c.empty,
            "quantile_used": c.quantile_used,
            "relaxation": c.relaxation,
            "comparison": cmp,
        }));
    }
    let diag = json!({
        "n_sims": post.diagnostics.n_sims,
        "per_statistic_accepted": post.diagnostics.per_statistic_accepted,
        "discarded_simulations": post.diagnostics.discarded_simulations,
        "empty_combinations": post.diagnostics.empty_combinations,
        "seed_base": config.seed_base,
        "reference": { "mean": reference.mean(), "sd": reference.sd(), "mode": reference.mode() },
        "combinations": combos,
    });
    write_json(&dir.join("diagnostics.json"), &diag)?;
    Ok(json!({ "stage": "abc", "out": dir, "diagnostics": diag }))
}

fn run_sweep(cfg: &ExperimentConfig, b: &SweepBlock) -> Result<serde_json::Value> {
    let default_out = PathBuf::from(format!("sweep_{}.csv", b.kind.name()));
    let out = cfg.output(b.out.as_ref().unwrap_or(&default_out));
    let phis = b.phi_grid.points();
    let (n_ex, nu) = (cfg.model()?.n_ex, cfg.model()?.nu);
    match b.kind {
        SweepKind::Fisher => {
            let rows = fisher_sweep(n_ex, nu, &phis)?;
            write_fisher_rows(&out, &rows)?;
        }
        SweepKind::Stationary => {
            let mut rows = Vec::new();
            for &phi in &phis {
                let m = MaserModel::new(&cfg.model()?.params_at(phi)?)?;
                rows.push(vec![
                    num(phi),
                    num(m.mean_photons()),
                    num(m.rate(maser_core::Channel::Ground)),
                    num(m.rate(maser_core::Channel::Excited)),
                    m.stationary.local_maxima().len().to_string(),
                ]);
            }
            write_csv(&out, &["phi", "mean_photons", "rate_1", "rate_2", "peaks"], rows)?;
        }
        SweepKind::Runmean => {
            let mut rows = Vec::new();
            for &phi in &phis {
                let p = cfg.model()?.params_at(phi)?;
                let r1 = theoretical_runmean(&p, 1)?;
                let r2 = theoretical_runmean(&p, 2)?;
                rows.push(vec![num(phi), num(r1.mean_run), num(r2.mean_run), num(r1.next[1]), num(r2.next[0])]);
            }
            write_csv(&out, &["phi", "runmean_1", "runmean_2", "p_2_after_1", "p_1_after_2"], rows)?;
        }
        SweepKind::Ks => {
            let truth = cfg.model()?.params()?;
            let grid = time_grid(b.t_max, b.points);
            let ref1 = WaitingTimeLaw::new(&truth, 1)?;
            let ref2 = WaitingTimeLaw::new(&truth, 2)?;
            let mut rows = Vec::new();
            for &phi in &phis {
                let p = cfg.model()?.params_at(phi)?;
                let k1 = ks_between_laws(&WaitingTimeLaw::new(&p, 1)?, &ref1, &grid)?;
                let k2 = ks_between_laws(&WaitingTimeLaw::new(&p, 2)?, &ref2, &grid)?;
                rows.push(vec![num(phi), num(k1), num(k2)]);
            }
            write_csv(&out, &["phi", "ks_wait1", "ks_wait2"], rows)?;
        }
        SweepKind::Mle => {
            let bounds = fisher_sweep(n_ex, nu, &phis)?;
            let opts = MleOptions {
                grid_points: 21,
                ..MleOptions::default()
            };
            let mut rows = Vec::new();
            for (k, &phi) in phis.iter().enumerate() {
                let p = cfg.model()?.params_at(phi)?;
                let lo = (phi - 0.1).max(0.02);
                let hi = (phi + 0.1).min(std::f64::consts::PI);
                let mut per_time = Vec::new();
                let mut failed = 0usize;
                for s in 0..b.seeds {
                    let seed = derive_seed(cfg.seed, "sweep/mle", (k * b.seeds + s) as u64);
                    let info = simulate_atoms(&p, b.horizon, seed)
                        .and_then(|rec| mle(&rec, n_ex, nu, (lo, hi), &opts))
                        .map(|r| r.fisher_per_time(b.horizon));
                    match info {
                        Ok(Some(v)) if v.is_finite() => per_time.push(v),
                        Ok(_) | Err(MaserError::Truncation(_)) => failed += 1,
                        Err(e) => return Err(e.into()),
                    }
                }
                let n = per_time.len() as f64;
                let mean = per_time.iter().sum::<f64>() / n;
                let var = per_time.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                rows.push(vec![
                    num(phi),
                    num(mean),
                    num((var / n).sqrt()),
                    num(bounds[k].i_star),
                    num(bounds[k].i_full),
                    per_time.len().to_string(),
                    failed.to_string(),
                ]);
            }
            write_csv(
                &out,
                &["phi", "observed_fisher_per_time", "se", "i_star", "i_full", "records", "failed"],
                rows,
            )?;
        }
    }
    Ok(json!({ "stage": "sweep", "kind": b.kind.name(), "out": out, "points": phis.len() }))
}
