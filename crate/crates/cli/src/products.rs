//! Plot-ready posterior products: return-level curves, pairwise angular
//! density grids, dependence coefficients, and conditional tail curves,
//! each reported as a pointwise posterior mean with 0.05/0.95 bounds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mevpot::angular::{chi_coefficient, conditional_tail, rehydrate};
use mevpot::mcmc::summarize_scalar;
use mevpot::{DMParams, ExceedanceRates, MarginalModel, MarginalParams, QuadratureSpec};

use crate::CliError;

/// One retained draw as persisted by `fit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrawRecord {
    pub iteration: usize,
    pub chain: usize,
    pub log_lik: f64,
    pub log_prior: f64,
    pub params: MarginalParams,
    pub psi: DMParams,
}

/// Everything downstream subcommands need to rebuild products from disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitArtifact {
    pub site_names: Vec<String>,
    pub thresholds: Vec<f64>,
    pub zetas: Vec<f64>,
    pub days_per_year: f64,
    pub mean_cluster_size: f64,
    pub draws: Vec<DrawRecord>,
}

impl FitArtifact {
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string(self)
            .map_err(|e| CliError::Numerical(format!("serialize draws: {e}")))?;
        std::fs::write(dir.join("draws.json"), text)
            .map_err(|e| CliError::Data(format!("write draws.json: {e}")))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<FitArtifact, CliError> {
        let path = dir.join("draws.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let mut art: FitArtifact = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("bad {}: {e}", path.display())))?;
        for d in &mut art.draws {
            rehydrate(&mut d.psi);
        }
        Ok(art)
    }

    pub fn rates(&self) -> Result<ExceedanceRates, CliError> {
        ExceedanceRates::from_zetas(self.zetas.clone()).map_err(CliError::from)
    }

    fn require_draws(&self) -> Result<(), CliError> {
        if self.draws.is_empty() {
            return Err(CliError::Data("no retained draws".into()));
        }
        Ok(())
    }
}

fn write_csv_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Data(format!("open {}: {e}", path.display())))?;
    w.write_record(header)
        .and_then(|()| rows.iter().try_for_each(|r| w.write_record(r)))
        .and_then(|()| w.flush().map_err(csv::Error::from))
        .map_err(|e| CliError::Data(format!("write {}: {e}", path.display())))
}

fn band(values: &[f64]) -> (f64, f64, f64) {
    let s = summarize_scalar(values);
    (s.mean, s.q05, s.q95)
}

/// Return-level curves per site over the requested return periods.
pub fn write_return_levels(
    art: &FitArtifact,
    periods: &[f64],
    path: &Path,
) -> Result<(), CliError> {
    art.require_draws()?;
    let rates = art.rates()?;
    let mut rows = Vec::new();
    for (j, site) in art.site_names.iter().enumerate() {
        for &t in periods {
            let mut levels = Vec::with_capacity(art.draws.len());
            for d in &art.draws {
                let m = MarginalModel::new(&d.params, &rates, &art.thresholds);
                levels.push(m.return_level(j, t, art.days_per_year)?);
            }
            let (mean, q05, q95) = band(&levels);
            rows.push(vec![
                site.clone(),
                format!("{t}"),
                format!("{mean}"),
                format!("{q05}"),
                format!("{q95}"),
            ]);
        }
    }
    write_csv_rows(path, &["site", "T_years", "posterior_mean", "q05", "q95"], &rows)
}

/// Posterior of the pairwise extremal dependence coefficient for every
/// unordered site pair.
pub fn write_chi(art: &FitArtifact, path: &Path) -> Result<(), CliError> {
    art.require_draws()?;
    let d = art.site_names.len();
    let mut rows = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            let chis: Vec<f64> = art
                .draws
                .iter()
                .map(|dr| chi_coefficient(&dr.psi, i, j))
                .collect::<Result<_, _>>()?;
            let (mean, q05, q95) = band(&chis);
            rows.push(vec![
                format!("{}-{}", art.site_names[i], art.site_names[j]),
                format!("{mean}"),
                format!("{q05}"),
                format!("{q95}"),
            ]);
        }
    }
    write_csv_rows(path, &["pair", "posterior_mean", "q05", "q95"], &rows)
}

/// Pairwise angular density on a uniform grid of `n_grid` interior points.
pub fn write_angular_grids(
    art: &FitArtifact,
    n_grid: usize,
    dir: &Path,
) -> Result<Vec<String>, CliError> {
    art.require_draws()?;
    let d = art.site_names.len();
    let mut files = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            let pairs: Vec<DMParams> = art
                .draws
                .iter()
                .map(|dr| dr.psi.pair_margin(i, j))
                .collect::<Result<_, _>>()?;
            let mut rows = Vec::with_capacity(n_grid);
            for g in 0..n_grid {
                let w = (g as f64 + 0.5) / n_grid as f64;
                let dens: Vec<f64> = pairs.iter().map(|p| p.dm_density(&[w, 1.0 - w])).collect();
                let (mean, q05, q95) = band(&dens);
                rows.push(vec![
                    format!("{w}"),
                    format!("{mean}"),
                    format!("{q05}"),
                    format!("{q95}"),
                ]);
            }
            let name = format!("angular_{}_{}.csv", art.site_names[i], art.site_names[j]);
            write_csv_rows(&dir.join(&name), &["w", "density", "q05", "q95"], &rows)?;
            files.push(name);
        }
    }
    Ok(files)
}

/// Conditional tail curves `P(Y_i > y | Y_j > v_j)` for every ordered pair,
/// on a per-site level grid spanning the threshold up to roughly the
/// posterior-mean 100-year level.
pub fn write_conditional_tails(
    art: &FitArtifact,
    n_levels: usize,
    draw_cap: usize,
    spec: &QuadratureSpec,
    dir: &Path,
) -> Result<Vec<String>, CliError> {
    art.require_draws()?;
    let rates = art.rates()?;
    let d = art.site_names.len();
    // quadrature-heavy: thin the draws evenly to at most draw_cap
    let step = (art.draws.len() + draw_cap - 1) / draw_cap.max(1);
    let used: Vec<&DrawRecord> = art.draws.iter().step_by(step.max(1)).collect();
    // level-grid top per site: posterior-mean 100-year level
    let mut tops = vec![0.0; d];
    for (j, top) in tops.iter_mut().enumerate() {
        let mut acc = 0.0;
        for dr in &used {
            let m = MarginalModel::new(&dr.params, &rates, &art.thresholds);
            acc += m.return_level(j, 100.0, art.days_per_year)?;
        }
        *top = (acc / used.len() as f64).max(art.thresholds[j] * 1.5);
    }
    let mut files = Vec::new();
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let mut rows = Vec::with_capacity(n_levels);
            for l in 0..n_levels {
                let y = art.thresholds[i]
                    + (l as f64 + 0.5) / n_levels as f64 * (tops[i] - art.thresholds[i]);
                let mut probs = Vec::with_capacity(used.len());
                for dr in &used {
                    let m = MarginalModel::new(&dr.params, &rates, &art.thresholds);
                    probs.push(conditional_tail(&dr.psi, &m, i, j, y, spec)?);
                }
                let (mean, q05, q95) = band(&probs);
                rows.push(vec![
                    format!("{y}"),
                    format!("{mean}"),
                    format!("{q05}"),
                    format!("{q95}"),
                ]);
            }
            let name = format!(
                "cond_{}_given_{}.csv",
                art.site_names[i], art.site_names[j]
            );
            write_csv_rows(&dir.join(&name), &["y", "posterior_mean", "q05", "q95"], &rows)?;
            files.push(name);
        }
    }
    Ok(files)
}

/// Scalar posterior summary table: one row per monitored scalar.
pub fn write_summary(art: &FitArtifact, path: &Path) -> Result<(), CliError> {
    art.require_draws()?;
    let d = art.site_names.len();
    let mut rows = Vec::new();
    let mut push = |name: String, values: &[f64]| {
        let s = summarize_scalar(values);
        rows.push(vec![
            name,
            format!("{}", s.mean),
            format!("{}", s.q05),
            format!("{}", s.q50),
            format!("{}", s.q95),
        ]);
    };
    for j in 0..d {
        let sig: Vec<f64> = art.draws.iter().map(|dr| dr.params.log_scales[j].exp()).collect();
        push(format!("sigma_{}", art.site_names[j]), &sig);
    }
    for j in 0..d {
        let xi: Vec<f64> = art.draws.iter().map(|dr| dr.params.shapes[j]).collect();
        push(format!("xi_{}", art.site_names[j]), &xi);
    }
    let ks: Vec<f64> = art.draws.iter().map(|dr| dr.psi.k() as f64).collect();
    push("k".into(), &ks);
    let lls: Vec<f64> = art.draws.iter().map(|dr| dr.log_lik).collect();
    push("log_lik".into(), &lls);
    write_csv_rows(path, &["parameter", "mean", "q05", "q50", "q95"], &rows)
}

/// Emits the full product set into `dir`; returns the file names written.
pub fn emit_products(
    art: &FitArtifact,
    periods: &[f64],
    n_grid: usize,
    n_levels: usize,
    draw_cap: usize,
    spec: &QuadratureSpec,
    dir: &Path,
) -> Result<Vec<String>, CliError> {
    art.require_draws()?;
    let mut files = vec!["return_levels.csv".to_string(), "chi.csv".to_string(), "summary.csv".to_string()];
    write_return_levels(art, periods, &dir.join("return_levels.csv"))?;
    write_chi(art, &dir.join("chi.csv"))?;
    write_summary(art, &dir.join("summary.csv"))?;
    files.extend(write_angular_grids(art, n_grid, dir)?);
    files.extend(write_conditional_tails(art, n_levels, draw_cap, spec, dir)?);
    Ok(files)
}
