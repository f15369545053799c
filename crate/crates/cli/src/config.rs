//! Run configuration: one JSON document drives every subcommand.

use std::path::PathBuf;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use mevpot::mcmc::{McmcConfig, PriorSpec};
use mevpot::simulate::SimConfig;
use mevpot::QuadratureSpec;

use crate::CliError;

fn default_run_length() -> usize {
    2
}
fn default_days_per_year() -> f64 {
    365.25
}
fn default_true() -> bool {
    true
}
fn default_recent_from() -> NaiveDate {
    NaiveDate::from_ymd_opt(1892, 1, 1).expect("valid date")
}
fn default_seed() -> u64 {
    1
}
fn default_return_periods() -> Vec<f64> {
    vec![2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 500.0, 1000.0]
}
fn default_angular_grid() -> usize {
    512
}
fn default_cond_levels() -> usize {
    33
}
fn default_product_draw_cap() -> usize {
    400
}

/// Sampler settings as exposed in the config file; converted to
/// [`McmcConfig`] once the prior and seed are resolved.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcSettings {
    pub iterations: usize,
    /// Defaults to the first 20% of iterations.
    #[serde(default)]
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub n_chains: usize,
    pub impute_grid: usize,
    pub quad_rel_tol: f64,
    pub qmc_nodes: u64,
    pub qmc_shifts: u32,
}

impl Default for McmcSettings {
    fn default() -> McmcSettings {
        McmcSettings {
            iterations: 20_000,
            burn_in: None,
            thin: 10,
            n_chains: 3,
            impute_grid: 48,
            quad_rel_tol: 1e-7,
            qmc_nodes: 4096,
            qmc_shifts: 2,
        }
    }
}

/// Top-level run configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Panel CSV consumed by decluster/fit/loglik.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_run_length")]
    pub run_length: usize,
    #[serde(default = "default_days_per_year")]
    pub days_per_year: f64,
    #[serde(default = "default_true")]
    pub regional: bool,
    /// When false, the panel is truncated to the recent era before fitting.
    #[serde(default = "default_true")]
    pub include_historical: bool,
    #[serde(default = "default_recent_from")]
    pub recent_from: NaiveDate,
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub mcmc: McmcSettings,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_return_periods")]
    pub return_periods: Vec<f64>,
    /// Keep only the chain with the best stationarity score instead of
    /// pooling all chains that pass the diagnostics.
    #[serde(default)]
    pub best_chain_only: bool,
    /// Generator settings for the simulate subcommand; omitted means the
    /// bundled four-site synthetic dataset.
    #[serde(default)]
    pub sim: Option<SimConfig>,
    /// Parameter-point JSON (`{"params": ..., "psi": ...}`) for loglik.
    #[serde(default)]
    pub theta: Option<PathBuf>,
    #[serde(default = "default_angular_grid")]
    pub angular_grid_points: usize,
    #[serde(default = "default_cond_levels")]
    pub cond_tail_levels: usize,
    /// Cap on the number of draws used for quadrature-heavy products.
    #[serde(default = "default_product_draw_cap")]
    pub product_draw_cap: usize,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.run_length == 0 {
            return Err(CliError::Config("run_length must be positive".into()));
        }
        if !(self.days_per_year > 0.0) {
            return Err(CliError::Config("days_per_year must be positive".into()));
        }
        if self.mcmc.thin == 0 || self.mcmc.n_chains == 0 {
            return Err(CliError::Config("thin and n_chains must be positive".into()));
        }
        if let Some(p) = &self.data {
            if !p.exists() {
                return Err(CliError::Data(format!("data file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        self.mcmc.burn_in.unwrap_or(self.mcmc.iterations / 5)
    }

    pub fn to_mcmc_config(&self, prior: PriorSpec) -> McmcConfig {
        McmcConfig {
            iterations: self.mcmc.iterations,
            burn_in: self.burn_in(),
            thin: self.mcmc.thin,
            n_chains: self.mcmc.n_chains,
            seed: self.seed,
            regional_shape: self.regional,
            adapt: true,
            impute_grid: self.mcmc.impute_grid,
            quad: QuadratureSpec {
                rel_tol: self.mcmc.quad_rel_tol,
                abs_tol: 1e-12,
                qmc_nodes: self.mcmc.qmc_nodes,
                qmc_shifts: self.mcmc.qmc_shifts,
            },
            prior,
        }
    }
}
