//! `maser`: simulation, likelihood, Fisher-information and ABC experiments
//! for the atom-maser counting process.

mod config;
mod error;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::*;
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "maser", about = "Parameter estimation for the atom maser from detection records")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "MASER_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long)]
    n_ex: f64,
    #[arg(long)]
    nu: f64,
    /// Fock truncation; chosen from the stationary tail when omitted.
    #[arg(long)]
    n_max: Option<usize>,
}

impl ModelArgs {
    fn block(&self, phi: Option<f64>) -> Option<ModelBlock> {
        Some(ModelBlock {
            phi,
            n_ex: self.n_ex,
            nu: self.nu,
            n_max: self.n_max,
        })
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a detection record.
    Simulate {
        #[arg(long)]
        phi: f64,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also record photon emission and absorption events.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Log-likelihood of a record at one parameter value.
    Loglik {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        phi: f64,
        #[command(flatten)]
        model: ModelArgs,
        /// Also write the result as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximum-likelihood estimate and observed Fisher information.
    Mle {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        n_ex: f64,
        #[arg(long)]
        nu: f64,
        #[arg(long, value_parser = parse_range)]
        range: (f64, f64),
        #[arg(long, default_value_t = 141)]
        grid: usize,
        #[arg(long)]
        profile_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count-based Fisher informations over a phi grid.
    Fisher {
        #[arg(long)]
        n_ex: f64,
        #[arg(long)]
        nu: f64,
        /// Grid as lo:hi:n.
        #[arg(long)]
        phi_grid: PhiGrid,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rejection ABC posterior from summary statistics.
    Abc {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n_ex: f64,
        #[arg(long)]
        nu: f64,
        #[arg(long, default_value_t = 20_000)]
        n_sims: usize,
        #[arg(long, default_value_t = 0.05)]
        quantile: f64,
        #[arg(long, value_parser = parse_range, default_value = "0.1,1.5")]
        range: (f64, f64),
        /// Trial record length; defaults to the data's.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value = "wait1,wait2,total1,total2,run1,run2,locden")]
        stats: String,
        #[arg(long, default_value_t = 1.0)]
        window: f64,
        #[arg(long, default_value_t = 70)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summary statistics of a record, or their theoretical counterparts.
    #[command(args_conflicts_with_subcommands = true)]
    Stats {
        #[command(subcommand)]
        theory: Option<StatsCommand>,
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        window: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Phi-grid tables.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
        /// True phi for the ks sweep.
        #[arg(long)]
        phi: Option<f64>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "0.1:1.5:141")]
        phi_grid: PhiGrid,
        #[arg(long, default_value_t = 30)]
        seeds: usize,
        #[arg(long, default_value_t = 500.0)]
        horizon: f64,
        #[arg(long, default_value_t = 2.0)]
        t_max: f64,
        #[arg(long, default_value_t = 401)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage of a TOML or JSON experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum StatsCommand {
    /// Mean run lengths and waiting-time densities from the model.
    Theory {
        #[arg(long)]
        phi: f64,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 2.0)]
        t_max: f64,
        #[arg(long, default_value_t = 401)]
        points: usize,
        #[arg(long, default_value = "waiting_density.csv")]
        out: PathBuf,
    },
}

/// Where the resolved config of a single-output command goes.
fn sibling_config(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.config.toml"))
}

/// Builds the experiment config for a command, plus the path its resolved
/// copy is written to.
fn plan(command: Command) -> Result<(ExperimentConfig, Option<PathBuf>), CliError> {
    let planned = match command {
        Command::Simulate {
            phi,
            model,
            horizon,
            seed,
            full,
            out,
        } => {
            let mut cfg = ExperimentConfig::new(model.block(Some(phi)), seed);
            let config_path = sibling_config(&out);
            cfg.simulate = Some(SimulateBlock { horizon, full, out });
            (cfg, Some(config_path))
        }
        Command::Loglik {
            record,
            phi,
            model,
            out,
        } => {
            let mut cfg = ExperimentConfig::new(model.block(Some(phi)), 0);
            cfg.record = Some(record);
            let config_path = out.as_deref().map(sibling_config);
            cfg.loglik = Some(LoglikBlock { out });
            (cfg, config_path)
        }
        Command::Mle {
            record,
            n_ex,
            nu,
            range,
            grid,
            profile_out,
            out,
        } => {
            let model = Some(ModelBlock {
                phi: None,
                n_ex,
                nu,
                n_max: None,
            });
            let mut cfg = ExperimentConfig::new(model, 0);
            cfg.record = Some(record);
            let config_path = out.as_deref().or(profile_out.as_deref()).map(sibling_config);
            cfg.mle = Some(MleBlock {
                range,
                grid,
                tolerance: 1e-5,
                fisher_step: 1e-3,
                profile_out,
                out,
            });
            (cfg, config_path)
        }
        Command::Fisher {
            n_ex,
            nu,
            phi_grid,
            out,
        } => {
            let model = Some(ModelBlock {
                phi: None,
                n_ex,
                nu,
                n_max: None,
            });
            let mut cfg = ExperimentConfig::new(model, 0);
            let config_path = sibling_config(&out);
            cfg.fisher = Some(FisherBlock { phi_grid, out });
            (cfg, Some(config_path))
        }
        Command::Abc {
            data,
            n_ex,
            nu,
            n_sims,
            quantile,
            range,
            horizon,
            stats,
            window,
            bins,
            seed,
            out,
        } => {
            let model = Some(ModelBlock {
                phi: None,
                n_ex,
                nu,
                n_max: None,
            });
            let mut cfg = ExperimentConfig::new(model, seed);
            cfg.record = Some(data);
            let config_path = out.join("config.toml");
            cfg.abc = Some(AbcBlock {
                n_sims,
                quantile,
                range,
                horizon,
                stats: stats.split(',').map(|s| s.trim().to_string()).collect(),
                window,
                bins,
                out,
            });
            (cfg, Some(config_path))
        }
        Command::Stats {
            theory: Some(StatsCommand::Theory {
                phi,
                model,
                t_max,
                points,
                out,
            }),
            ..
        } => {
            let mut cfg = ExperimentConfig::new(model.block(Some(phi)), 0);
            let config_path = sibling_config(&out);
            cfg.theory = Some(TheoryBlock { t_max, points, out });
            (cfg, Some(config_path))
        }
        Command::Stats {
            theory: None,
            record,
            window,
            out,
        } => {
            let record = record.ok_or_else(|| CliError::config("stats needs --record FILE (or the `theory` subcommand)"))?;
            let out = out.unwrap_or_else(|| record.with_extension("stats.json"));
            let mut cfg = ExperimentConfig::new(None, 0);
            cfg.record = Some(record);
            let config_path = sibling_config(&out);
            cfg.stats = Some(StatsBlock { window, out });
            (cfg, Some(config_path))
        }
        Command::Sweep {
            kind,
            phi,
            model,
            phi_grid,
            seeds,
            horizon,
            t_max,
            points,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::new(model.block(phi), seed);
            let config_path = sibling_config(&out);
            cfg.sweep = Some(SweepBlock {
                kind,
                phi_grid,
                seeds,
                horizon,
                t_max,
                points,
                out: Some(out),
            });
            (cfg, Some(config_path))
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let path = cfg.output(Path::new("resolved_config.toml"));
            (cfg, Some(path))
        }
    };
    Ok(planned)
}

fn version() -> String {
    format!(
        "{} (record schema {}, config schema {}, {} build)",
        env!("CARGO_PKG_VERSION"),
        maser_core::SCHEMA_VERSION,
        CONFIG_SCHEMA_VERSION,
        if cfg!(debug_assertions) { "debug" } else { "release" }
    )
}

fn main() -> ExitCode {
    let matches = Cli::command().version(version()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(error::EXIT_CONFIG as u8);
        }
    }
    let result = plan(cli.command).and_then(|(cfg, config_path)| {
        let summaries = run::execute(&cfg)?;
        if let Some(p) = config_path {
            run::write_config(&cfg, &p)?;
        }
        for s in summaries {
            println!("{s}");
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
