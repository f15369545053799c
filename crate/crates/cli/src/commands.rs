//! Subcommand implementations and dispatch.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mevpot::angular::rehydrate;
use mevpot::data_model::{parse_csv, write_csv};
use mevpot::decluster::{decluster, DeclusterSummary};
use mevpot::likelihood::{init_augmented, total_log_likelihood};
use mevpot::margins::estimate_zeta;
use mevpot::mcmc::{
    diagnostics_report, heidelberger_welch, run_chains, ChainRun, FitData, PriorSpec,
};
use mevpot::simulate::{make_gardons_lookalike, simulate_panel};
use mevpot::{DMParams, MarginalModel, MarginalParams, SeriesPanel, ThresholdConfig};

use crate::config::RunConfig;
use crate::products::{emit_products, write_chi, write_return_levels, write_summary, DrawRecord, FitArtifact};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "mevpot", version, about = "Multivariate threshold-exceedance inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration JSON.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Drop the historical era: keep only days from `recent_from` on.
    #[arg(long, global = true)]
    pub recent_only: bool,
    /// Force a shared shape parameter across sites.
    #[arg(long, global = true)]
    pub regional: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel plus its ground truth.
    Simulate,
    /// Extract cluster maxima and undetermined blocks from a panel.
    Decluster,
    /// Run the full Bayesian fit and emit posterior products.
    Fit {
        /// Run the 2x2 grid {regional, local} x {full, recent-only}.
        #[arg(long)]
        grid: bool,
    },
    /// Summarize scalar posteriors from a previous fit directory.
    Summarize,
    /// Re-emit return-level curves from a previous fit directory.
    ReturnLevels,
    /// Re-emit pairwise dependence coefficients from a previous fit directory.
    Chi,
    /// Evaluate the likelihood pieces at a fixed parameter point.
    Loglik,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    command: String,
    config_sha256: String,
    seed: u64,
    version: String,
    outputs: Vec<String>,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    mut outputs: Vec<String>,
) -> Result<(), CliError> {
    let canon = serde_json::to_vec(cfg)
        .map_err(|e| CliError::Config(format!("serialize config: {e}")))?;
    let hash = format!("{:x}", Sha256::digest(&canon));
    outputs.sort();
    let m = Manifest {
        command: command.to_string(),
        config_sha256: hash,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
    };
    let text = serde_json::to_string_pretty(&m)
        .map_err(|e| CliError::Config(format!("serialize manifest: {e}")))?;
    fs::write(dir.join("manifest.json"), text)
        .map_err(|e| CliError::Data(format!("write manifest: {e}")))?;
    Ok(())
}

fn resolve(cli: &Cli) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.recent_only {
        cfg.include_historical = false;
    }
    if cli.regional {
        cfg.regional = true;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = Some(o.clone());
    }
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("create {}: {e}", out.display())))?;
    Ok((cfg, out))
}

fn load_panel(cfg: &RunConfig) -> Result<SeriesPanel, CliError> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("config is missing a data path".into()))?;
    let file = fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut panel = parse_csv(file)?;
    if !cfg.include_historical {
        panel = panel.truncate_before(cfg.recent_from)?;
    }
    Ok(panel)
}

fn threshold_config(cfg: &RunConfig, d: usize) -> Result<ThresholdConfig, CliError> {
    if cfg.thresholds.len() != d {
        return Err(CliError::Config(format!(
            "{} thresholds configured for a {d}-site panel",
            cfg.thresholds.len()
        )));
    }
    Ok(ThresholdConfig::new(cfg.thresholds.clone(), cfg.run_length)?)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let (cfg, out) = resolve(&cli)?;
    match &cli.command {
        Command::Simulate => cmd_simulate(&cfg, &out),
        Command::Decluster => cmd_decluster(&cfg, &out),
        Command::Fit { grid } => {
            if *grid {
                cmd_fit_grid(&cfg, &out)
            } else {
                cmd_fit(&cfg, &out)
            }
        }
        Command::Summarize => cmd_summarize(&cfg, &out),
        Command::ReturnLevels => cmd_return_levels(&cfg, &out),
        Command::Chi => cmd_chi(&cfg, &out),
        Command::Loglik => cmd_loglik(&cfg, &out),
    }
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let mut sim = cfg
        .sim
        .clone()
        .unwrap_or_else(|| make_gardons_lookalike(cfg.seed));
    sim.seed = cfg.seed;
    let (panel, truth) = simulate_panel(&sim)?;
    let file = fs::File::create(out.join("panel.csv"))
        .map_err(|e| CliError::Data(format!("create panel.csv: {e}")))?;
    write_csv(&panel, file)?;
    let text = serde_json::to_string(&truth)
        .map_err(|e| CliError::Numerical(format!("serialize truth: {e}")))?;
    fs::write(out.join("truth.json"), text)
        .map_err(|e| CliError::Data(format!("write truth.json: {e}")))?;
    write_manifest(out, "simulate", cfg, vec!["panel.csv".into(), "truth.json".into()])
}

fn cmd_decluster(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let panel = load_panel(cfg)?;
    let tc = threshold_config(cfg, panel.n_sites())?;
    let summary = decluster(&panel, &tc)?;
    write_decluster_outputs(&panel, &summary, out)?;
    write_manifest(out, "decluster", cfg, vec!["clusters.csv".into(), "blocks.csv".into()])
}

fn write_decluster_outputs(
    panel: &SeriesPanel,
    summary: &DeclusterSummary,
    out: &Path,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(out.join("clusters.csv"))
        .map_err(|e| CliError::Data(format!("clusters.csv: {e}")))?;
    let io_err = |e: csv::Error| CliError::Data(format!("clusters.csv: {e}"));
    w.write_record(["start_date", "site", "kind", "value", "lower", "upper"])
        .map_err(io_err)?;
    for cm in &summary.clusters {
        let date = panel.date_label(cm.start_day);
        for (j, obs) in cm.coords.iter().enumerate() {
            w.write_record([
                date.as_str(),
                panel.site_names()[j].as_str(),
                &obs.kind.code().to_string(),
                &obs.value.map(|v| format!("{v}")).unwrap_or_default(),
                &fmt_bound(obs.lower),
                &fmt_bound(obs.upper),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| CliError::Data(format!("clusters.csv: {e}")))?;

    let mut w = csv::Writer::from_path(out.join("blocks.csv"))
        .map_err(|e| CliError::Data(format!("blocks.csv: {e}")))?;
    let io_err = |e: csv::Error| CliError::Data(format!("blocks.csv: {e}"));
    let mut header = vec!["start_date".to_string(), "length".to_string()];
    for s in panel.site_names() {
        header.push(format!("bound_{s}"));
    }
    w.write_record(&header).map_err(io_err)?;
    for b in &summary.blocks {
        let mut row = vec![panel.date_label(b.start_day), b.length.to_string()];
        for &u in &b.upper_bounds {
            row.push(fmt_bound(u));
        }
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("blocks.csv: {e}")))?;
    Ok(())
}

fn fmt_bound(x: f64) -> String {
    if x.is_infinite() {
        "+inf".to_string()
    } else {
        format!("{x}")
    }
}

/// Runs the chains, pools the ones passing the stationarity screen, and
/// returns the artifact plus the diagnostics JSON value.
fn fit_pooled(
    cfg: &RunConfig,
    panel: &SeriesPanel,
) -> Result<(FitArtifact, serde_json::Value), CliError> {
    let tc = threshold_config(cfg, panel.n_sites())?;
    let data = FitData::from_panel(panel, &tc)?;
    let summary = decluster(panel, &tc)?;
    let prior = cfg
        .prior
        .clone()
        .unwrap_or_else(|| PriorSpec::diffuse(data.exact_excess_log_sd));
    let mcfg = cfg.to_mcmc_config(prior);
    let runs = run_chains(&data, &mcfg)?;
    if runs.iter().any(|r| r.samples.is_empty()) {
        return Err(CliError::Data("no retained draws".into()));
    }

    // stationarity screen per chain on the log-likelihood trace
    let hw: Vec<_> = runs
        .iter()
        .map(|r| heidelberger_welch(&r.samples.iter().map(|s| s.log_lik).collect::<Vec<_>>()))
        .collect();
    let passing: Vec<usize> = (0..runs.len()).filter(|&c| hw[c].converged).collect();
    let pooled_chains: Vec<usize> = if cfg.best_chain_only {
        let best = (0..runs.len())
            .min_by(|&a, &b| hw[a].cramer_von_mises.total_cmp(&hw[b].cramer_von_mises))
            .expect("at least one chain");
        vec![best]
    } else if passing.is_empty() {
        (0..runs.len()).collect()
    } else {
        passing.clone()
    };

    let report = diagnostics_report(&scalar_traces(panel, &runs, cfg.regional), &runs.iter().map(|r| r.stats).collect::<Vec<_>>())?;
    let diagnostics = serde_json::json!({
        "report": report,
        "per_chain_stationarity": hw,
        "pooled_chains": pooled_chains,
        "pooled_all_as_fallback": passing.is_empty() && !cfg.best_chain_only,
        "best_chain_only": cfg.best_chain_only,
        "plug_in": "maximum-posterior",
    });

    let mut draws = Vec::new();
    for &c in &pooled_chains {
        for s in &runs[c].samples {
            draws.push(DrawRecord {
                iteration: s.iteration,
                chain: c,
                log_lik: s.log_lik,
                log_prior: s.log_prior,
                params: s.params.clone(),
                psi: s.psi.clone(),
            });
        }
    }
    let art = FitArtifact {
        site_names: panel.site_names().to_vec(),
        thresholds: cfg.thresholds.clone(),
        zetas: estimate_zeta(panel, &tc)?.zetas,
        days_per_year: cfg.days_per_year,
        mean_cluster_size: summary.mean_cluster_size,
        draws,
    };
    Ok((art, diagnostics))
}

fn scalar_traces(
    panel: &SeriesPanel,
    runs: &[ChainRun],
    regional: bool,
) -> Vec<(String, Vec<Vec<f64>>)> {
    let d = panel.n_sites();
    let mut traces: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    let collect = |f: &dyn Fn(&mevpot::mcmc::PosteriorSample) -> f64| -> Vec<Vec<f64>> {
        runs.iter()
            .map(|r| r.samples.iter().map(f).collect())
            .collect()
    };
    traces.push(("log_lik".into(), collect(&|s| s.log_lik)));
    for j in 0..d {
        let name = format!("log_sigma_{}", panel.site_names()[j]);
        traces.push((name, collect(&move |s| s.params.log_scales[j])));
    }
    if regional {
        traces.push(("xi".into(), collect(&|s| s.params.shapes[0])));
    } else {
        for j in 0..d {
            let name = format!("xi_{}", panel.site_names()[j]);
            traces.push((name, collect(&move |s| s.params.shapes[j])));
        }
    }
    traces.push(("k".into(), collect(&|s| s.psi.k() as f64)));
    traces
}

fn write_posterior_csv(art: &FitArtifact, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Data(format!("posterior.csv: {e}")))?;
    let io_err = |e: csv::Error| CliError::Data(format!("posterior.csv: {e}"));
    let mut header = vec!["iteration".to_string(), "chain".to_string()];
    header.push("log_lik".into());
    header.push("log_prior".into());
    for s in &art.site_names {
        header.push(format!("log_sigma_{s}"));
    }
    for s in &art.site_names {
        header.push(format!("xi_{s}"));
    }
    header.push("k".into());
    w.write_record(&header).map_err(io_err)?;
    for d in &art.draws {
        let mut row = vec![
            d.iteration.to_string(),
            d.chain.to_string(),
            format!("{}", d.log_lik),
            format!("{}", d.log_prior),
        ];
        for &ls in &d.params.log_scales {
            row.push(format!("{ls}"));
        }
        for &xi in &d.params.shapes {
            row.push(format!("{xi}"));
        }
        row.push(d.psi.k().to_string());
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("posterior.csv: {e}")))?;
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let panel = load_panel(cfg)?;
    let (art, diagnostics) = fit_pooled(cfg, &panel)?;
    write_posterior_csv(&art, &out.join("posterior.csv"))?;
    art.save(out)?;
    fs::write(
        out.join("diagnostics.json"),
        serde_json::to_string_pretty(&diagnostics)
            .map_err(|e| CliError::Numerical(format!("serialize diagnostics: {e}")))?,
    )
    .map_err(|e| CliError::Data(format!("write diagnostics.json: {e}")))?;
    let spec = cfg.to_mcmc_config(PriorSpec::diffuse(0.0)).quad;
    let mut outputs = emit_products(
        &art,
        &cfg.return_periods,
        cfg.angular_grid_points,
        cfg.cond_tail_levels,
        cfg.product_draw_cap,
        &spec,
        out,
    )?;
    outputs.extend([
        "posterior.csv".to_string(),
        "draws.json".to_string(),
        "diagnostics.json".to_string(),
    ]);
    write_manifest(out, "fit", cfg, outputs)
}

/// The 2x2 experiment grid: {regional, local} x {full period, recent only}.
/// A failing variant is reported and skipped; the others still run.
fn cmd_fit_grid(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let variants = [
        ("regional-full", true, true),
        ("regional-recent", true, false),
        ("local-full", false, true),
        ("local-recent", false, false),
    ];
    let mut rl_rows: Vec<Vec<String>> = Vec::new();
    let mut par_rows: Vec<Vec<String>> = Vec::new();
    let mut any_ok = false;
    for (name, regional, full) in variants {
        let mut vcfg = cfg.clone();
        vcfg.regional = regional;
        vcfg.include_historical = full;
        let vout = out.join(name);
        fs::create_dir_all(&vout)
            .map_err(|e| CliError::Data(format!("create {}: {e}", vout.display())))?;
        let result = load_panel(&vcfg).and_then(|panel| {
            let (art, diagnostics) = fit_pooled(&vcfg, &panel)?;
            write_posterior_csv(&art, &vout.join("posterior.csv"))?;
            art.save(&vout)?;
            fs::write(
                vout.join("diagnostics.json"),
                serde_json::to_string_pretty(&diagnostics)
                    .map_err(|e| CliError::Numerical(e.to_string()))?,
            )
            .map_err(|e| CliError::Data(e.to_string()))?;
            write_return_levels(&art, &cfg.return_periods, &vout.join("return_levels.csv"))?;
            write_chi(&art, &vout.join("chi.csv"))?;
            write_summary(&art, &vout.join("summary.csv"))?;
            Ok(art)
        });
        match result {
            Ok(art) => {
                any_ok = true;
                let rates = art.rates()?;
                for (j, site) in art.site_names.iter().enumerate() {
                    for &t in &cfg.return_periods {
                        let mut levels = Vec::with_capacity(art.draws.len());
                        for dr in &art.draws {
                            let m = MarginalModel::new(&dr.params, &rates, &art.thresholds);
                            levels.push(m.return_level(j, t, art.days_per_year)?);
                        }
                        let s = mevpot::mcmc::summarize_scalar(&levels);
                        rl_rows.push(vec![
                            site.clone(),
                            format!("{t}"),
                            name.to_string(),
                            format!("{}", s.mean),
                            format!("{}", s.q05),
                            format!("{}", s.q95),
                        ]);
                    }
                    let xi: Vec<f64> = art.draws.iter().map(|dr| dr.params.shapes[j]).collect();
                    let sxi = mevpot::mcmc::summarize_scalar(&xi);
                    let (_, sd) = mevpot::stats::mean_sd(&xi);
                    par_rows.push(vec![
                        format!("xi_{site}"),
                        name.to_string(),
                        format!("{}", sxi.mean),
                        format!("{sd}"),
                        format!("{}", sxi.q05),
                        format!("{}", sxi.q95),
                    ]);
                }
            }
            Err(e) => {
                eprintln!("variant {name} failed: {e}");
                fs::write(vout.join("error.txt"), format!("{e}\n"))
                    .map_err(|io| CliError::Data(format!("write error.txt: {io}")))?;
            }
        }
    }
    if !any_ok {
        return Err(CliError::Numerical("every grid variant failed".into()));
    }
    let mut w = csv::Writer::from_path(out.join("comparison.csv"))
        .map_err(|e| CliError::Data(format!("comparison.csv: {e}")))?;
    let io_err = |e: csv::Error| CliError::Data(format!("comparison.csv: {e}"));
    w.write_record(["site", "T_years", "variant", "posterior_mean", "q05", "q95"])
        .map_err(io_err)?;
    for r in &rl_rows {
        w.write_record(r).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("comparison.csv: {e}")))?;
    let mut w = csv::Writer::from_path(out.join("params_comparison.csv"))
        .map_err(|e| CliError::Data(format!("params_comparison.csv: {e}")))?;
    let io_err = |e: csv::Error| CliError::Data(format!("params_comparison.csv: {e}"));
    w.write_record(["parameter", "variant", "mean", "sd", "q05", "q95"])
        .map_err(io_err)?;
    for r in &par_rows {
        w.write_record(r).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("params_comparison.csv: {e}")))?;
    write_manifest(
        out,
        "fit-grid",
        cfg,
        vec!["comparison.csv".into(), "params_comparison.csv".into()],
    )
}

fn cmd_summarize(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let art = FitArtifact::load(out)?;
    write_summary(&art, &out.join("summary.csv"))?;
    write_manifest(out, "summarize", cfg, vec!["summary.csv".into()])
}

fn cmd_return_levels(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let art = FitArtifact::load(out)?;
    write_return_levels(&art, &cfg.return_periods, &out.join("return_levels.csv"))?;
    write_manifest(out, "return-levels", cfg, vec!["return_levels.csv".into()])
}

fn cmd_chi(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let art = FitArtifact::load(out)?;
    write_chi(&art, &out.join("chi.csv"))?;
    write_manifest(out, "chi", cfg, vec!["chi.csv".into()])
}

#[derive(Debug, Deserialize)]
struct ThetaFile {
    params: MarginalParams,
    psi: DMParams,
}

fn cmd_loglik(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let theta_path = cfg
        .theta
        .as_ref()
        .ok_or_else(|| CliError::Config("config is missing a theta path".into()))?;
    let text = fs::read_to_string(theta_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", theta_path.display())))?;
    let mut theta: ThetaFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("bad theta file: {e}")))?;
    rehydrate(&mut theta.psi);

    let panel = load_panel(cfg)?;
    let tc = threshold_config(cfg, panel.n_sites())?;
    let data = FitData::from_panel(&panel, &tc)?;
    if theta.psi.dim() != panel.n_sites() || theta.params.n_sites() != panel.n_sites() {
        return Err(CliError::Config("theta dimension does not match the panel".into()));
    }
    let model = MarginalModel::new(&theta.params, &data.rates, &data.thresholds);
    let aug = init_augmented(&model, &data.maxima)?;
    let quad = cfg.to_mcmc_config(PriorSpec::diffuse(0.0)).quad;
    let parts = total_log_likelihood(&theta.psi, &model, &data.maxima, &aug, &data.ctx, &quad)?;
    let doc = serde_json::json!({
        "clusters": parts.clusters,
        "void_below": parts.void_below,
        "blocks": parts.blocks,
        "total": parts.total(),
        "n_clusters": data.maxima.len(),
        "tau_hat": data.ctx.tau_hat,
        "augmentation": "interval midpoints",
    });
    let rendered = serde_json::to_string_pretty(&doc)
        .map_err(|e| CliError::Numerical(format!("serialize loglik: {e}")))?;
    println!("{rendered}");
    fs::write(out.join("loglik.json"), rendered)
        .map_err(|e| CliError::Data(format!("write loglik.json: {e}")))?;
    write_manifest(out, "loglik", cfg, vec!["loglik.json".into()])
}
