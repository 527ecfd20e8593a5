//! Experiment configuration: model parameters plus one optional block per
//! stage. Every run writes the resolved configuration next to its outputs,
//! and `maser run --config` on that copy reproduces the artifacts.

use std::path::{Path, PathBuf};

use maser_core::ModelParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    /// Global seed; stages derive their own seeds from it.
    #[serde(default)]
    pub seed: u64,
    /// Directory that relative output paths resolve against.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Input detection record. When absent, stages use the simulated one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loglik: Option<LoglikBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mle: Option<MleBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<StatsBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fisher: Option<FisherBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abc: Option<AbcBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    pub n_ex: f64,
    pub nu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
}

impl ModelBlock {
    pub fn params_at(&self, phi: f64) -> Result<ModelParams, CliError> {
        let p = match self.n_max {
            Some(n) => ModelParams::with_n_max(phi, self.n_ex, self.nu, n)?,
            None => ModelParams::new(phi, self.n_ex, self.nu)?,
        };
        Ok(p)
    }

    pub fn params(&self) -> Result<ModelParams, CliError> {
        let phi = self.phi.ok_or_else(|| CliError::config("model.phi is required for this stage"))?;
        self.params_at(phi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub horizon: f64,
    /// Keep photon emission and absorption events as well.
    #[serde(default)]
    pub full: bool,
    #[serde(default = "default_record_out")]
    pub out: PathBuf,
}

fn default_record_out() -> PathBuf {
    PathBuf::from("record.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoglikBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleBlock {
    pub range: (f64, f64),
    #[serde(default = "default_mle_grid")]
    pub grid: usize,
    #[serde(default = "default_mle_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_fisher_step")]
    pub fisher_step: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile_out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_mle_grid() -> usize {
    141
}

fn default_mle_tolerance() -> f64 {
    1e-5
}

fn default_fisher_step() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsBlock {
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_stats_out")]
    pub out: PathBuf,
}

fn default_window() -> f64 {
    1.0
}

fn default_stats_out() -> PathBuf {
    PathBuf::from("stats.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryBlock {
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_theory_out")]
    pub out: PathBuf,
}

fn default_t_max() -> f64 {
    2.0
}

fn default_points() -> usize {
    401
}

fn default_theory_out() -> PathBuf {
    PathBuf::from("waiting_density.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherBlock {
    pub phi_grid: PhiGrid,
    #[serde(default = "default_fisher_out")]
    pub out: PathBuf,
}

fn default_fisher_out() -> PathBuf {
    PathBuf::from("fisher.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcBlock {
    #[serde(default = "default_n_sims")]
    pub n_sims: usize,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    #[serde(default = "default_prior")]
    pub range: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_stats")]
    pub stats: Vec<String>,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_abc_out")]
    pub out: PathBuf,
}

fn default_n_sims() -> usize {
    20_000
}

fn default_quantile() -> f64 {
    0.05
}

fn default_prior() -> (f64, f64) {
    (0.1, 1.5)
}

fn default_stats() -> Vec<String> {
    maser_core::stats::Statistic::ALL.iter().map(|s| s.name().to_string()).collect()
}

fn default_bins() -> usize {
    70
}

fn default_abc_out() -> PathBuf {
    PathBuf::from("abc")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    /// Count-based and full-monitoring Fisher informations.
    Fisher,
    /// Observed information of simulated records against the count bound.
    Mle,
    /// Mean run lengths and next-label probabilities.
    Runmean,
    /// KS distance between waiting-time laws and the one at model.phi.
    Ks,
    /// Stationary mean photon number and detection rates.
    Stationary,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Fisher => "fisher",
            SweepKind::Mle => "mle",
            SweepKind::Runmean => "runmean",
            SweepKind::Ks => "ks",
            SweepKind::Stationary => "stationary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub kind: SweepKind,
    pub phi_grid: PhiGrid,
    /// Records per grid point (mle sweep).
    #[serde(default = "default_sweep_seeds")]
    pub seeds: usize,
    /// Record length (mle sweep).
    #[serde(default = "default_sweep_horizon")]
    pub horizon: f64,
    /// Waiting-time grid (ks sweep).
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_sweep_seeds() -> usize {
    30
}

fn default_sweep_horizon() -> f64 {
    500.0
}

/// Uniform grid `lo:hi:n` including both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PhiGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl PhiGrid {
    pub fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        // rounded to 12 significant digits so that 0.1:1.5:141 gives 0.45, not 0.44999999999999996
        (0..self.n)
            .map(|i| format!("{:.11e}", self.lo + step * i as f64).parse().unwrap())
            .collect()
    }
}

impl std::str::FromStr for PhiGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts.as_slice() else {
            return Err(format!("expected lo:hi:n, got `{s}`"));
        };
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound in `{s}`"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound in `{s}`"))?;
        let n: usize = n.trim().parse().map_err(|_| format!("bad point count in `{s}`"))?;
        if n == 0 || !(lo <= hi) || (n > 1 && lo == hi) {
            return Err(format!("invalid grid `{s}`"));
        }
        Ok(PhiGrid { lo, hi, n })
    }
}

impl TryFrom<String> for PhiGrid {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<PhiGrid> for String {
    fn from(g: PhiGrid) -> String {
        format!("{}:{}:{}", g.lo, g.hi, g.n)
    }
}

/// Parses `lo,hi`.
pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected lo,hi, got `{s}`"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound in `{s}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound in `{s}`"))?;
    if !(lo < hi) {
        return Err(format!("empty range `{s}`"));
    }
    Ok((lo, hi))
}

impl ExperimentConfig {
    pub fn new(model: Option<ModelBlock>, seed: u64) -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed,
            out_dir: None,
            record: None,
            model,
            simulate: None,
            loglik: None,
            mle: None,
            stats: None,
            theory: None,
            fisher: None,
            abc: None,
            sweep: None,
        }
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: line {}: {e}", path.display(), e.line())))?
        } else {
            toml::from_str(&text).map_err(|e| {
                let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
                match line {
                    Some(l) => CliError::config(format!("{}: line {l}: {}", path.display(), e.message())),
                    None => CliError::config(format!("{}: {}", path.display(), e.message())),
                }
            })?
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "unsupported config schema version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if let Some(rec) = &self.record {
            if !rec.exists() {
                return Err(CliError::config(format!("record file {} does not exist", rec.display())));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<&ModelBlock, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::config("a [model] block is required for this stage"))
    }

    /// Resolves a stage output path against `out_dir`.
    pub fn output(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::config(format!("cannot serialize config: {e}")))
    }
}
