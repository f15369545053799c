//! Trans-dimensional MCMC over margins, mixture dependence, and augmented
//! censored coordinates.
//!
//! One sweep = imputation refresh, marginal random walk, within-model mixture
//! moves (weights, centers, shapes), and a birth/death jump on the number of
//! components. Every mixture proposal re-solves the last center so the
//! center-of-mass condition holds exactly in every visited state; proposals
//! whose solved center leaves the simplex are rejected outright.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma as GammaDist, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::angular::{
    exponent_measure_region, solve_last_center, DMParams, DirichletComponent, QuadratureSpec,
};
use crate::data_model::{CensorKind, SeriesPanel, ThresholdConfig};
use crate::decluster::{decluster, ClusterMaximum};
use crate::error::{Error, Result};
use crate::likelihood::{
    block_log_term, cluster_log_term, frechet_interval, init_augmented, void_below_log_term,
    AugmentedState, LikelihoodContext,
};
use crate::margins::{ExceedanceRates, MarginalModel, MarginalParams};
use crate::numeric::{ln_factorial, log_sum_exp};

/// Hyperparameters of the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub xi_mean: f64,
    pub xi_sd: f64,
    pub log_sigma_mean: f64,
    pub log_sigma_sd: f64,
    pub nu_shape: f64,
    pub nu_rate: f64,
    pub k_rate: f64,
    pub k_max: usize,
}

impl PriorSpec {
    /// Diffuse defaults; the log-scale prior centers on the spread of the
    /// observed exact excesses.
    pub fn diffuse(log_sigma_mean: f64) -> PriorSpec {
        PriorSpec {
            xi_mean: 0.0,
            xi_sd: 10.0,
            log_sigma_mean,
            log_sigma_sd: 10.0,
            nu_shape: 1.0,
            nu_rate: 0.01,
            k_rate: 1.0,
            k_max: 15,
        }
    }

    fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
        let z = (x - mean) / sd;
        -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn log_prior_margins(&self, params: &MarginalParams) -> f64 {
        let mut acc = 0.0;
        for j in 0..params.n_sites() {
            acc += Self::log_normal_pdf(params.log_scales[j], self.log_sigma_mean, self.log_sigma_sd);
        }
        if params.regional {
            acc += Self::log_normal_pdf(params.shapes[0], self.xi_mean, self.xi_sd);
        } else {
            for &xi in &params.shapes {
                acc += Self::log_normal_pdf(xi, self.xi_mean, self.xi_sd);
            }
        }
        acc
    }

    pub fn log_prior_nu(&self, nu: f64) -> f64 {
        (self.nu_shape - 1.0) * nu.ln() - self.nu_rate * nu + self.nu_shape * self.nu_rate.ln()
            - ln_gamma(self.nu_shape)
    }

    /// Truncated Poisson over the component count (unnormalized is enough for
    /// ratios; the normalizer is included for reporting).
    pub fn log_prior_k(&self, k: usize) -> f64 {
        if k == 0 || k > self.k_max {
            return f64::NEG_INFINITY;
        }
        let log_unnorm = |k: usize| k as f64 * self.k_rate.ln() - ln_factorial(k);
        let norm = log_sum_exp(&(1..=self.k_max).map(log_unnorm).collect::<Vec<_>>());
        log_unnorm(k) - norm
    }

    /// Log prior of the mixture's free parameters: component count, flat
    /// Dirichlet over weights, uniform free centers, Gamma shapes. The solved
    /// last center carries no density of its own.
    pub fn log_prior_mixture(&self, psi: &DMParams) -> f64 {
        let k = psi.k();
        let d = psi.dim();
        let mut acc = self.log_prior_k(k);
        acc += ln_factorial(k - 1); // Dir(1,..,1) density on the weight simplex
        acc += (k as f64 - 1.0) * ln_factorial(d - 1); // uniform free centers
        for c in psi.components() {
            acc += self.log_prior_nu(c.shape);
        }
        acc
    }
}

/// Declustered inputs of a fit.
#[derive(Debug, Clone)]
pub struct FitData {
    pub maxima: Vec<ClusterMaximum>,
    pub ctx: LikelihoodContext,
    pub thresholds: Vec<f64>,
    pub rates: ExceedanceRates,
    pub exact_excess_log_sd: f64,
    pub n_sites: usize,
}

impl FitData {
    pub fn from_panel(panel: &SeriesPanel, cfg: &ThresholdConfig) -> Result<FitData> {
        let summary = decluster(panel, cfg)?;
        let rates = crate::margins::estimate_zeta(panel, cfg)?;
        let mut excesses = Vec::new();
        for cm in &summary.clusters {
            for (j, obs) in cm.coords.iter().enumerate() {
                if obs.kind == CensorKind::Exact {
                    if let Some(y) = obs.value {
                        if y > cfg.thresholds[j] {
                            excesses.push(y - cfg.thresholds[j]);
                        }
                    }
                }
            }
        }
        let log_sd = if excesses.len() >= 2 {
            crate::stats::mean_sd(&excesses).1.max(1e-6).ln()
        } else {
            0.0
        };
        Ok(FitData {
            maxima: summary.clusters.clone(),
            ctx: LikelihoodContext::from_summary(&summary),
            thresholds: cfg.thresholds.clone(),
            rates,
            exact_excess_log_sd: log_sd,
            n_sites: summary.n_sites,
        })
    }

    /// Empty data set (prior simulation): the likelihood is identically zero.
    pub fn empty(d: usize) -> FitData {
        FitData {
            maxima: vec![],
            ctx: LikelihoodContext {
                below_days: 0.0,
                tau_hat: 1.0,
                block_groups: vec![],
            },
            thresholds: vec![1.0; d],
            rates: ExceedanceRates::from_zetas(vec![0.01; d]).expect("valid zeta"),
            exact_excess_log_sd: 0.0,
            n_sites: d,
        }
    }
}

/// Sampler controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub regional_shape: bool,
    pub adapt: bool,
    pub impute_grid: usize,
    pub quad: QuadratureSpec,
    pub prior: PriorSpec,
}

impl McmcConfig {
    pub fn standard(prior: PriorSpec) -> McmcConfig {
        McmcConfig {
            iterations: 20_000,
            burn_in: 5_000,
            thin: 10,
            n_chains: 3,
            seed: 1,
            regional_shape: true,
            adapt: true,
            impute_grid: 48,
            quad: QuadratureSpec {
                rel_tol: 1e-7,
                abs_tol: 1e-12,
                qmc_nodes: 1 << 12,
                qmc_shifts: 2,
            },
            prior,
        }
    }
}

/// Complete sampler state with cached likelihood pieces.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub params: MarginalParams,
    pub psi: DMParams,
    pub aug: AugmentedState,
    cluster_terms: Vec<f64>,
    lambda_u: f64,
    block_term: f64,
}

impl ChainState {
    pub fn log_lik(&self, ctx: &LikelihoodContext) -> f64 {
        self.cluster_terms.iter().sum::<f64>()
            + void_below_log_term(self.lambda_u, ctx.below_days, ctx.tau_hat)
            + self.block_term
    }

    /// Recomputes the log-likelihood from scratch, bypassing every cache.
    /// Used to audit cache consistency during long runs.
    pub fn recompute_log_lik(&self, data: &FitData, cfg: &McmcConfig) -> Result<f64> {
        if data.ctx.below_days == 0.0 && data.maxima.is_empty() {
            return Ok(0.0);
        }
        let m = MarginalModel::new(&self.params, &data.rates, &data.thresholds);
        let parts = crate::likelihood::total_log_likelihood(
            &self.psi,
            &m,
            &data.maxima,
            &self.aug,
            &data.ctx,
            &cfg.quad,
        )?;
        Ok(parts.total())
    }
}

/// One retained posterior draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub iteration: usize,
    pub log_lik: f64,
    pub log_prior: f64,
    pub params: MarginalParams,
    pub psi: DMParams,
}

/// Acceptance counters per move family: (accepted, proposed).
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub margins: (u64, u64),
    pub weights: (u64, u64),
    pub centers: (u64, u64),
    pub shapes: (u64, u64),
    pub rj: (u64, u64),
    pub impute: (u64, u64),
}

fn rate(c: (u64, u64)) -> f64 {
    if c.1 == 0 {
        f64::NAN
    } else {
        c.0 as f64 / c.1 as f64
    }
}

impl AcceptanceStats {
    pub fn rates(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("margins", rate(self.margins)),
            ("weights", rate(self.weights)),
            ("centers", rate(self.centers)),
            ("shapes", rate(self.shapes)),
            ("rj", rate(self.rj)),
            ("impute", rate(self.impute)),
        ]
    }
}

/// Output of one chain.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub samples: Vec<PosteriorSample>,
    pub stats: AcceptanceStats,
    pub final_state: ChainState,
}

// Robbins-Monro scale adaptation toward a target acceptance rate.
#[derive(Debug, Clone)]
struct AdaptiveScale {
    scale: f64,
    target: f64,
    t: u64,
}

impl AdaptiveScale {
    fn new(scale: f64, target: f64) -> AdaptiveScale {
        AdaptiveScale { scale, target, t: 0 }
    }

    fn update(&mut self, accept_prob: f64) {
        self.t += 1;
        let eta = 1.0 / (10.0 + self.t as f64).powf(0.6);
        self.scale *= ((accept_prob - self.target) * eta).exp();
        self.scale = self.scale.clamp(1e-6, 1e3);
    }
}

struct Mover<'a> {
    data: &'a FitData,
    cfg: &'a McmcConfig,
    s_scales: Vec<AdaptiveScale>,
    s_shapes_xi: Vec<AdaptiveScale>,
    s_ridge: Vec<AdaptiveScale>,
    s_weights: AdaptiveScale,
    s_centers: AdaptiveScale,
    s_shapes: AdaptiveScale,
    stats: AcceptanceStats,
}

impl<'a> Mover<'a> {
    fn new(data: &'a FitData, cfg: &'a McmcConfig) -> Mover<'a> {
        let d = data.n_sites;
        let n_xi = if cfg.regional_shape { 1 } else { d };
        Mover {
            data,
            cfg,
            s_scales: vec![AdaptiveScale::new(0.1, 0.25); d],
            s_shapes_xi: vec![AdaptiveScale::new(0.1, 0.25); n_xi],
            s_ridge: vec![AdaptiveScale::new(0.1, 0.25); n_xi],
            s_weights: AdaptiveScale::new(0.5, 0.25),
            s_centers: AdaptiveScale::new(0.3, 0.25),
            s_shapes: AdaptiveScale::new(0.4, 0.25),
            stats: AcceptanceStats::default(),
        }
    }

    fn margins_view<'b>(&'b self, params: &'b MarginalParams) -> MarginalModel<'b> {
        MarginalModel::new(params, &self.data.rates, &self.data.thresholds)
    }

    /// All cluster point terms under given parameters; `-inf` short-circuits.
    fn cluster_terms(
        &self,
        psi: &DMParams,
        params: &MarginalParams,
        aug: &AugmentedState,
    ) -> Result<Vec<f64>> {
        let m = self.margins_view(params);
        let mut out = Vec::with_capacity(self.data.maxima.len());
        for (cm, x) in self.data.maxima.iter().zip(&aug.clusters) {
            let t = cluster_log_term(psi, &m, cm, x)?;
            out.push(t);
            if t == f64::NEG_INFINITY {
                break;
            }
        }
        while out.len() < self.data.maxima.len() {
            out.push(f64::NEG_INFINITY);
        }
        Ok(out)
    }

    fn lambda_u(&self, psi: &DMParams) -> Result<f64> {
        if self.data.ctx.below_days == 0.0 && self.data.maxima.is_empty() {
            return Ok(0.0);
        }
        let u: Vec<f64> = (0..self.data.n_sites)
            .map(|j| self.data.rates.frechet_thresholds[j])
            .collect();
        Ok(exponent_measure_region(&u, psi, &self.cfg.quad)?.value)
    }

    fn block_term(&self, psi: &DMParams, params: &MarginalParams) -> Result<f64> {
        let m = self.margins_view(params);
        let mut acc = 0.0;
        for (bounds, days) in &self.data.ctx.block_groups {
            acc += block_log_term(psi, &m, bounds, *days, self.data.ctx.tau_hat, &self.cfg.quad)?;
        }
        Ok(acc)
    }

    /// Method-of-moments starting values from each site's exact excesses;
    /// sites with too few excesses fall back to the prior mean.
    fn moment_starts(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.data.n_sites;
        let mut log_scales = vec![self.cfg.prior.log_sigma_mean; d];
        let mut shapes = vec![0.1; d];
        for j in 0..d {
            let mut exc = Vec::new();
            for cm in &self.data.maxima {
                if cm.coords[j].kind == CensorKind::Exact {
                    if let Some(y) = cm.coords[j].value {
                        if y > self.data.thresholds[j] {
                            exc.push(y - self.data.thresholds[j]);
                        }
                    }
                }
            }
            if exc.len() < 3 {
                continue;
            }
            let (m, s) = crate::stats::mean_sd(&exc);
            if !(s > 0.0) {
                continue;
            }
            let r = m * m / (s * s);
            let xi = (0.5 * (1.0 - r)).clamp(-0.4, 0.9);
            let sigma = (0.5 * m * (r + 1.0)).max(1e-6);
            log_scales[j] = sigma.ln();
            shapes[j] = xi;
        }
        if self.cfg.regional_shape {
            let mean_xi = shapes.iter().sum::<f64>() / d as f64;
            shapes = vec![mean_xi; d];
        }
        (log_scales, shapes)
    }

    fn build_state(&self, log_scales: Vec<f64>, shapes: Vec<f64>) -> Result<ChainState> {
        let d = self.data.n_sites;
        let params = MarginalParams::new(log_scales, shapes, self.cfg.regional_shape)?;
        let psi = DMParams::barycentric(d, 2.0 * d as f64)?;
        let m = self.margins_view(&params);
        let aug = init_augmented(&m, &self.data.maxima)?;
        let cluster_terms = self.cluster_terms(&psi, &params, &aug)?;
        let lambda_u = self.lambda_u(&psi)?;
        let block_term = self.block_term(&psi, &params)?;
        Ok(ChainState {
            params,
            psi,
            aug,
            cluster_terms,
            lambda_u,
            block_term,
        })
    }

    /// Overdispersed start: jitter the moment-based point per chain so that
    /// between-chain diagnostics can see slow joint drift, which identical
    /// starting points would hide. Falls back to the unjittered point if no
    /// jittered attempt yields a finite posterior.
    fn init_state(&self, rng: &mut ChaCha8Rng) -> Result<ChainState> {
        let (base_log_scales, base_shapes) = self.moment_starts();
        for attempt in 0..16 {
            let spread = if attempt < 15 { 1.0 } else { 0.0 };
            let mut log_scales = base_log_scales.clone();
            let mut shapes = base_shapes.clone();
            for ls in log_scales.iter_mut() {
                *ls += spread * 0.25 * rng.sample::<f64, _>(StandardNormal);
            }
            if self.cfg.regional_shape {
                let delta = spread * 0.1 * rng.sample::<f64, _>(StandardNormal);
                for xi in shapes.iter_mut() {
                    *xi = (*xi + delta).clamp(-0.4, 0.9);
                }
            } else {
                for xi in shapes.iter_mut() {
                    let delta = spread * 0.1 * rng.sample::<f64, _>(StandardNormal);
                    *xi = (*xi + delta).clamp(-0.4, 0.9);
                }
            }
            let state = match self.build_state(log_scales, shapes) {
                Ok(s) => s,
                Err(e) if spread == 0.0 => return Err(e),
                Err(_) => continue,
            };
            let post = state.log_lik(&self.data.ctx) + self.log_prior(&state);
            if post.is_finite() || spread == 0.0 {
                return Ok(state);
            }
        }
        Err(Error::Numerical("no finite starting point found".into()))
    }

    /// Independence Metropolis refresh of every augmented coordinate, using a
    /// gridded approximation of its full conditional as the proposal.
    fn impute(&mut self, state: &mut ChainState, rng: &mut ChaCha8Rng) -> Result<()> {
        let n = self.cfg.impute_grid;
        let m = MarginalModel::new(&state.params, &self.data.rates, &self.data.thresholds);
        for (i, cm) in self.data.maxima.iter().enumerate() {
            let d = cm.coords.len();
            for j in 0..d {
                if cm.coords[j].kind == CensorKind::Exact {
                    continue;
                }
                let (lo, hi) = frechet_interval(&m, j, &cm.coords[j])?;
                if hi <= lo {
                    // degenerate interval: the coordinate is pinned
                    state.aug.clusters[i][j] = lo;
                    continue;
                }
                // substitution for an unbounded interval: x = lo + c s/(1-s)
                let c_scale = if hi.is_finite() {
                    0.0
                } else {
                    (state.aug.clusters[i].iter().sum::<f64>()).max(1.0)
                };
                let to_x = |s: f64| -> (f64, f64) {
                    if hi.is_finite() {
                        (lo + (hi - lo) * s, hi - lo)
                    } else {
                        let x = lo + c_scale * s / (1.0 - s);
                        (x, c_scale / ((1.0 - s) * (1.0 - s)))
                    }
                };
                let mut xvec = state.aug.clusters[i].clone();
                let log_cond = |x: f64, xv: &mut Vec<f64>| -> f64 {
                    xv[j] = x;
                    state.psi.log_exponent_density(xv)
                };
                // cell masses at midpoints
                let mut log_mass = vec![f64::NEG_INFINITY; n];
                for (cell, lm) in log_mass.iter_mut().enumerate() {
                    let s = (cell as f64 + 0.5) / n as f64;
                    let (x, jac) = to_x(s);
                    let lf = log_cond(x, &mut xvec);
                    if lf.is_finite() {
                        *lm = lf + jac.ln();
                    }
                }
                let log_total = log_sum_exp(&log_mass);
                if !log_total.is_finite() {
                    continue;
                }
                // draw a cell, then uniform within it
                let mut u = rng.gen::<f64>();
                let mut cell = n - 1;
                for (c, &lm) in log_mass.iter().enumerate() {
                    let p = (lm - log_total).exp();
                    if u < p {
                        cell = c;
                        break;
                    }
                    u -= p;
                }
                let s_new = (cell as f64 + rng.gen::<f64>()) / n as f64;
                let (x_new, jac_new) = to_x(s_new);
                // proposal density in x within the chosen cell
                let log_q_new = log_mass[cell] - log_total - jac_new.ln() + (n as f64).ln();
                // density of the current value under the same proposal
                let x_cur = state.aug.clusters[i][j];
                let s_cur = if hi.is_finite() {
                    ((x_cur - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    let t = x_cur - lo;
                    t / (c_scale + t)
                };
                let cell_cur = ((s_cur * n as f64) as usize).min(n - 1);
                let (_, jac_cur) = to_x(s_cur);
                let log_q_cur = log_mass[cell_cur] - log_total - jac_cur.ln() + (n as f64).ln();
                let lf_new = log_cond(x_new, &mut xvec);
                let lf_cur = log_cond(x_cur, &mut xvec);
                let log_alpha = (lf_new + log_q_cur) - (lf_cur + log_q_new);
                self.stats.impute.1 += 1;
                if log_alpha >= 0.0 || rng.gen::<f64>() < log_alpha.exp() {
                    self.stats.impute.0 += 1;
                    state.aug.clusters[i][j] = x_new;
                }
            }
            // refresh the cached point term for this cluster
            state.cluster_terms[i] =
                cluster_log_term(&state.psi, &m, cm, &state.aug.clusters[i])?;
        }
        Ok(())
    }

    /// Metropolis step for one marginal proposal; updates cached terms.
    fn margins_step(
        &mut self,
        state: &mut ChainState,
        proposed: MarginalParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let new_cluster = self.cluster_terms(&state.psi, &proposed, &state.aug)?;
        let new_block = self.block_term(&state.psi, &proposed)?;
        let cur_ll: f64 = state.cluster_terms.iter().sum::<f64>() + state.block_term;
        let new_ll: f64 = new_cluster.iter().sum::<f64>() + new_block;
        let log_alpha = new_ll + self.cfg.prior.log_prior_margins(&proposed)
            - cur_ll
            - self.cfg.prior.log_prior_margins(&state.params);
        self.stats.margins.1 += 1;
        let ap = log_alpha.exp().min(1.0);
        let ap = if ap.is_nan() { 0.0 } else { ap };
        if rng.gen::<f64>() < ap {
            self.stats.margins.0 += 1;
            state.params = proposed;
            state.cluster_terms = new_cluster;
            state.block_term = new_block;
        }
        Ok(ap)
    }

    /// Random walk on each log-scale and each shape in turn, with one
    /// adaptive step size per parameter. A regional shape moves as a single
    /// shared parameter.
    fn update_margins(&mut self, state: &mut ChainState, rng: &mut ChaCha8Rng, adapting: bool) -> Result<()> {
        let d = state.params.n_sites();
        for j in 0..d {
            let mut log_scales = state.params.log_scales.clone();
            log_scales[j] += self.s_scales[j].scale * rng.sample::<f64, _>(StandardNormal);
            let proposed = MarginalParams::new(log_scales, state.params.shapes.clone(), state.params.regional)?;
            let ap = self.margins_step(state, proposed, rng)?;
            if adapting {
                self.s_scales[j].update(ap);
            }
        }
        let n_xi = if state.params.regional { 1 } else { d };
        for i in 0..n_xi {
            let step = self.s_shapes_xi[i].scale * rng.sample::<f64, _>(StandardNormal);
            let mut shapes = state.params.shapes.clone();
            if state.params.regional {
                for xi in shapes.iter_mut() {
                    *xi += step;
                }
            } else {
                shapes[i] += step;
            }
            let proposed = MarginalParams::new(state.params.log_scales.clone(), shapes, state.params.regional)?;
            let ap = self.margins_step(state, proposed, rng)?;
            if adapting {
                self.s_shapes_xi[i].update(ap);
            }
        }
        // Shear along the scale/shape ridge: shift the shape and move each
        // affected log-scale by ln((1-xi')/(1-xi)), holding the mean excess
        // sigma/(1-xi) fixed. In (log sigma, xi) coordinates the map is a
        // translation with a symmetric step, so no Hastings correction is
        // needed. This is the slow direction of the marginal posterior; the
        // single-parameter walks above mix along it only diffusively.
        for i in 0..n_xi {
            let step = self.s_ridge[i].scale * rng.sample::<f64, _>(StandardNormal);
            let mut shapes = state.params.shapes.clone();
            let mut log_scales = state.params.log_scales.clone();
            let sites: Vec<usize> = if state.params.regional {
                (0..d).collect()
            } else {
                vec![i]
            };
            let mut ok = true;
            for &j in &sites {
                let xi_old = shapes[j];
                let xi_new = xi_old + step;
                if 1.0 - xi_old <= 1e-8 || 1.0 - xi_new <= 1e-8 {
                    ok = false;
                    break;
                }
                shapes[j] = xi_new;
                log_scales[j] += ((1.0 - xi_new) / (1.0 - xi_old)).ln();
            }
            let ap = if ok {
                let proposed = MarginalParams::new(log_scales, shapes, state.params.regional)?;
                self.margins_step(state, proposed, rng)?
            } else {
                0.0
            };
            if adapting {
                self.s_ridge[i].update(ap);
            }
        }
        Ok(())
    }

    /// Accept/reject a fully formed mixture proposal with an extra log
    /// Hastings correction.
    fn try_accept_mixture(
        &mut self,
        state: &mut ChainState,
        proposal: Result<DMParams>,
        log_hastings: f64,
        log_prior_ratio: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let psi_new = match proposal {
            Ok(p) => p,
            Err(_) => return Ok(0.0), // infeasible solve: auto-reject
        };
        let new_cluster = self.cluster_terms(&psi_new, &state.params, &state.aug)?;
        let new_lambda = self.lambda_u(&psi_new)?;
        let new_block = self.block_term(&psi_new, &state.params)?;
        let void = |l: f64| void_below_log_term(l, self.data.ctx.below_days, self.data.ctx.tau_hat);
        let cur_ll = state.cluster_terms.iter().sum::<f64>() + void(state.lambda_u) + state.block_term;
        let new_ll = new_cluster.iter().sum::<f64>() + void(new_lambda) + new_block;
        let log_alpha = new_ll - cur_ll + log_prior_ratio + log_hastings;
        let ap = log_alpha.exp().min(1.0);
        if rng.gen::<f64>() < ap {
            state.psi = psi_new;
            state.cluster_terms = new_cluster;
            state.lambda_u = new_lambda;
            state.block_term = new_block;
            return Ok(if ap.is_nan() { 0.0 } else { -ap }); // negative flags acceptance
        }
        Ok(if ap.is_nan() { 0.0 } else { ap })
    }

    /// Rebuild a mixture from free pieces, re-solving the last center.
    fn assemble(
        d: usize,
        weights: Vec<f64>,
        free_centers: Vec<Vec<f64>>,
        shapes: Vec<f64>,
    ) -> Result<DMParams> {
        let k = weights.len();
        let last = solve_last_center(d, &weights, &free_centers)?;
        let mut comps = Vec::with_capacity(k);
        for m in 0..k - 1 {
            comps.push(DirichletComponent::new(free_centers[m].clone(), shapes[m])?);
        }
        comps.push(DirichletComponent::new(last, shapes[k - 1])?);
        DMParams::new(weights, comps)
    }

    fn free_centers(psi: &DMParams) -> Vec<Vec<f64>> {
        psi.components()[..psi.k() - 1]
            .iter()
            .map(|c| c.center.clone())
            .collect()
    }

    fn shapes(psi: &DMParams) -> Vec<f64> {
        psi.components().iter().map(|c| c.shape).collect()
    }

    /// Logit random walk on one pair of weights, holding the rest fixed.
    fn update_weights(&mut self, state: &mut ChainState, rng: &mut ChaCha8Rng, adapting: bool) -> Result<()> {
        let k = state.psi.k();
        if k < 2 {
            return Ok(());
        }
        let d = state.psi.dim();
        let a = rng.gen_range(0..k);
        let mut b = rng.gen_range(0..k - 1);
        if b >= a {
            b += 1;
        }
        let mut weights = state.psi.weights().to_vec();
        let pair = weights[a] + weights[b];
        let t = weights[a] / pair;
        let z = (t / (1.0 - t)).ln() + self.s_weights.scale * rng.sample::<f64, _>(StandardNormal);
        let t_new = 1.0 / (1.0 + (-z).exp());
        if !(t_new > 0.0 && t_new < 1.0) {
            self.stats.weights.1 += 1;
            return Ok(());
        }
        let (pa, pb) = (weights[a], weights[b]);
        weights[a] = pair * t_new;
        weights[b] = pair * (1.0 - t_new);
        // keep the simplex sum exact: rounding drift here would otherwise
        // accumulate across sweeps and poison later rescaling moves
        let total: f64 = weights.iter().sum();
        for wi in weights.iter_mut() {
            *wi /= total;
        }
        // symmetric walk in logit space: Hastings = (pa' pb')/(pa pb)
        let log_h = (weights[a] * weights[b]).ln() - (pa * pb).ln();
        let proposal = Self::assemble(
            d,
            weights,
            Self::free_centers(&state.psi),
            Self::shapes(&state.psi),
        );
        let ap = self.try_accept_mixture(state, proposal, log_h, 0.0, rng)?;
        self.stats.weights.1 += 1;
        if ap < 0.0 {
            self.stats.weights.0 += 1;
        }
        if adapting {
            self.s_weights.update(ap.abs());
        }
        Ok(())
    }

    /// Additive-log-ratio random walk on one free center.
    fn update_center(&mut self, state: &mut ChainState, rng: &mut ChaCha8Rng, adapting: bool) -> Result<()> {
        let k = state.psi.k();
        if k < 2 {
            return Ok(());
        }
        let d = state.psi.dim();
        let m = rng.gen_range(0..k - 1);
        let mut centers = Self::free_centers(&state.psi);
        let old = centers[m].clone();
        let mut z: Vec<f64> = old[..d - 1]
            .iter()
            .map(|&mu| (mu / old[d - 1]).ln())
            .collect();
        for zi in z.iter_mut() {
            *zi += self.s_centers.scale * rng.sample::<f64, _>(StandardNormal);
        }
        let denom = 1.0 + z.iter().map(|&zi| zi.exp()).sum::<f64>();
        let mut new_center: Vec<f64> = z.iter().map(|&zi| zi.exp() / denom).collect();
        new_center.push(1.0 / denom);
        if new_center.iter().any(|&mu| !(mu > 0.0 && mu < 1.0)) {
            self.stats.centers.1 += 1;
            return Ok(());
        }
        // ALR Jacobian: uniform density maps to prod(mu_j) in z-space
        let log_h = new_center.iter().map(|&mu| mu.ln()).sum::<f64>()
            - old.iter().map(|&mu| mu.ln()).sum::<f64>();
        centers[m] = new_center;
        let proposal = Self::assemble(
            d,
            state.psi.weights().to_vec(),
            centers,
            Self::shapes(&state.psi),
        );
        let ap = self.try_accept_mixture(state, proposal, log_h, 0.0, rng)?;
        self.stats.centers.1 += 1;
        if ap < 0.0 {
            self.stats.centers.0 += 1;
        }
        if adapting {
            self.s_centers.update(ap.abs());
        }
        Ok(())
    }

    /// Log random walk on one component shape.
    fn update_shape(&mut self, state: &mut ChainState, rng: &mut ChaCha8Rng, adapting: bool) -> Result<()> {
        let k = state.psi.k();
        let d = state.psi.dim();
        let m = rng.gen_range(0..k);
        let mut shapes = Self::shapes(&state.psi);
        let old = shapes[m];
        let new = old * (self.s_shapes.scale * rng.sample::<f64, _>(StandardNormal)).exp();
        shapes[m] = new;
        // log-walk Hastings nu'/nu; Gamma prior ratio on the shape
        let log_h = (new / old).ln();
        let log_prior = self.cfg.prior.log_prior_nu(new) - self.cfg.prior.log_prior_nu(old);
        let proposal = Self::assemble(
            d,
            state.psi.weights().to_vec(),
            Self::free_centers(&state.psi),
            shapes,
        );
        let ap = self.try_accept_mixture(state, proposal, log_h, log_prior, rng)?;
        self.stats.shapes.1 += 1;
        if ap < 0.0 {
            self.stats.shapes.0 += 1;
        }
        if adapting {
            self.s_shapes.update(ap.abs());
        }
        Ok(())
    }

    /// Birth/death jump. Proposals draw the new component from its prior and
    /// a Beta(1, k) weight, so the Beta density cancels the rescaling
    /// Jacobian and the new-component priors cancel the proposal densities.
    /// The free components are exchangeable under the target, and appending
    /// the newcomer is distributionally equivalent to inserting it at a
    /// uniformly chosen free slot; with the positional factors matched
    /// between birth and death, the acceptance collapses to the Poisson
    /// ratio times the flat-Dirichlet dimension factor times the likelihood
    /// ratio: birth accepts with `L'/L / (k + 1)`, death with `L'/L * k`.
    fn rj_move(&mut self, state: &mut ChainState, rng: &mut ChaCha8Rng) -> Result<()> {
        let k = state.psi.k();
        let d = state.psi.dim();
        self.stats.rj.1 += 1;
        let birth = rng.gen::<f64>() < 0.5;
        if birth {
            if k + 1 > self.cfg.prior.k_max {
                return Ok(());
            }
            // new free center uniform on the simplex; shape from the prior
            let mut gamma_draws: Vec<f64> = (0..d)
                .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                .collect();
            let tot: f64 = gamma_draws.iter().sum();
            for g in gamma_draws.iter_mut() {
                *g /= tot;
            }
            let nu_new = GammaDist::new(self.cfg.prior.nu_shape, 1.0 / self.cfg.prior.nu_rate)
                .map_err(|e| Error::Numerical(e.to_string()))?
                .sample(rng);
            // w ~ Beta(1, k): inverse cdf
            let w = 1.0 - (1.0 - rng.gen::<f64>()).powf(1.0 / k as f64);
            if !(w > 0.0 && w < 1.0) {
                return Ok(());
            }
            let mut weights: Vec<f64> = state.psi.weights().iter().map(|&p| p * (1.0 - w)).collect();
            let solved_weight = weights.pop().expect("k >= 1");
            weights.push(w);
            weights.push(solved_weight);
            let total: f64 = weights.iter().sum();
            for wi in weights.iter_mut() {
                *wi /= total;
            }
            let mut centers = Self::free_centers(&state.psi);
            centers.push(gamma_draws);
            let mut shapes = Self::shapes(&state.psi);
            let solved_shape = shapes.pop().expect("k >= 1");
            shapes.push(nu_new);
            shapes.push(solved_shape);
            let log_h = -((k + 1) as f64).ln();
            let proposal = Self::assemble(d, weights, centers, shapes);
            if self.try_accept_mixture(state, proposal, log_h, 0.0, rng)? < 0.0 {
                self.stats.rj.0 += 1;
            }
        } else {
            if k < 2 {
                return Ok(());
            }
            let m = rng.gen_range(0..k - 1); // only free components can die
            let w = state.psi.weights()[m];
            if !(w < 1.0) {
                return Ok(());
            }
            let mut weights = Vec::with_capacity(k - 1);
            for (i, &p) in state.psi.weights().iter().enumerate() {
                if i != m {
                    weights.push(p);
                }
            }
            let total: f64 = weights.iter().sum();
            for wi in weights.iter_mut() {
                *wi /= total;
            }
            let mut centers = Self::free_centers(&state.psi);
            centers.remove(m);
            let mut shapes = Self::shapes(&state.psi);
            shapes.remove(m);
            let log_h = (k as f64).ln();
            let proposal = Self::assemble(d, weights, centers, shapes);
            if self.try_accept_mixture(state, proposal, log_h, 0.0, rng)? < 0.0 {
                self.stats.rj.0 += 1;
            }
        }
        Ok(())
    }

    fn log_prior(&self, state: &ChainState) -> f64 {
        self.cfg.prior.log_prior_margins(&state.params)
            + self.cfg.prior.log_prior_mixture(&state.psi)
    }
}

/// Runs one chain; the seed is mixed with the chain index so parallel chains
/// are deterministic and independent.
pub fn run_chain(data: &FitData, cfg: &McmcConfig, chain_id: u64) -> Result<ChainRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e3779b9).wrapping_add(chain_id));
    let mut mover = Mover::new(data, cfg);
    let state = mover.init_state(&mut rng)?;
    let init_post = state.log_lik(&data.ctx) + mover.log_prior(&state);
    if !init_post.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite log-posterior {init_post} at the initial state: {state:?}"
        )));
    }
    let mut state = state;
    let mut samples = Vec::new();
    for iter in 0..cfg.iterations {
        let adapting = cfg.adapt && iter < cfg.burn_in;
        mover.impute(&mut state, &mut rng)?;
        mover.update_margins(&mut state, &mut rng, adapting)?;
        mover.update_weights(&mut state, &mut rng, adapting)?;
        mover.update_center(&mut state, &mut rng, adapting)?;
        mover.update_shape(&mut state, &mut rng, adapting)?;
        mover.rj_move(&mut state, &mut rng)?;
        if iter >= cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0 {
            samples.push(PosteriorSample {
                iteration: iter,
                log_lik: state.log_lik(&data.ctx),
                log_prior: mover.log_prior(&state),
                params: state.params.clone(),
                psi: state.psi.clone(),
            });
        }
    }
    Ok(ChainRun {
        samples,
        stats: mover.stats,
        final_state: state,
    })
}

/// Runs `cfg.n_chains` chains sequentially.
pub fn run_chains(data: &FitData, cfg: &McmcConfig) -> Result<Vec<ChainRun>> {
    (0..cfg.n_chains as u64)
        .map(|c| run_chain(data, cfg, c))
        .collect()
}

/// In-chain hook variant of [`run_chain`] for state-invariant checks: calls
/// the inspector after every sweep.
pub fn run_chain_with_inspector<F: FnMut(usize, &ChainState)>(
    data: &FitData,
    cfg: &McmcConfig,
    chain_id: u64,
    mut inspect: F,
) -> Result<ChainRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e3779b9).wrapping_add(chain_id));
    let mut mover = Mover::new(data, cfg);
    let mut state = mover.init_state(&mut rng)?;
    let mut samples = Vec::new();
    for iter in 0..cfg.iterations {
        let adapting = cfg.adapt && iter < cfg.burn_in;
        mover.impute(&mut state, &mut rng)?;
        inspect(iter, &state);
        mover.update_margins(&mut state, &mut rng, adapting)?;
        inspect(iter, &state);
        mover.update_weights(&mut state, &mut rng, adapting)?;
        inspect(iter, &state);
        mover.update_center(&mut state, &mut rng, adapting)?;
        inspect(iter, &state);
        mover.update_shape(&mut state, &mut rng, adapting)?;
        inspect(iter, &state);
        mover.rj_move(&mut state, &mut rng)?;
        inspect(iter, &state);
        if iter >= cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0 {
            samples.push(PosteriorSample {
                iteration: iter,
                log_lik: state.log_lik(&data.ctx),
                log_prior: mover.log_prior(&state),
                params: state.params.clone(),
                psi: state.psi.clone(),
            });
        }
    }
    Ok(ChainRun {
        samples,
        stats: mover.stats,
        final_state: state,
    })
}

/// Split-chain potential scale reduction factor. Errors on fewer than two
/// chains, mismatched or too-short chains, or zero within-chain variance
/// (constant chains give no information about mixing).
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Config("scale-reduction factor needs at least 2 chains".into()));
    }
    if chains.iter().any(|c| c.len() != chains[0].len()) {
        return Err(Error::Config("chains must have equal lengths".into()));
    }
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        if h < 2 {
            return Err(Error::Config("chains too short to split".into()));
        }
        halves.push(&c[..h]);
        halves.push(&c[h..2 * h]);
    }
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|&mu| (mu - grand) * (mu - grand)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, &mu)| h.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return Err(Error::Numerical(
            "zero within-chain variance: constant chains".into(),
        ));
    }
    Ok((((n - 1.0) / n * w + b / n) / w).sqrt())
}

/// Effective sample size by Geyer's initial positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return n as f64;
    }
    let auto = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|t| (x[t] - mean) * (x[t + lag] - mean))
            .sum::<f64>()
            / n as f64
            / var
    };
    let mut sum = 0.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = auto(lag) + auto(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    n as f64 / (1.0 + 2.0 * sum)
}

/// Heidelberger-Welch stationarity check: a Cramér-von-Mises statistic on the
/// standardized partial-sum bridge, with the long-run variance estimated by
/// batch means. The initial 10% is discarded repeatedly (up to half the
/// chain) until the statistic clears the 5% critical value 0.461.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HeidelbergerWelch {
    pub converged: bool,
    /// Index of the first usable draw after discarding the non-stationary head.
    pub start_index: usize,
    pub discard_fraction: f64,
    pub cramer_von_mises: f64,
}

fn spectral_variance(x: &[f64]) -> f64 {
    // long-run variance via batch means
    let n = x.len();
    let b = ((n as f64).sqrt() as usize).max(2);
    let nb = n / b;
    if nb < 2 {
        let mean = x.iter().sum::<f64>() / n as f64;
        return x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    }
    let means: Vec<f64> = (0..nb)
        .map(|i| x[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / nb as f64;
    b as f64 * means.iter().map(|&m| (m - grand) * (m - grand)).sum::<f64>() / (nb as f64 - 1.0)
}

fn cvm_statistic(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let s0 = spectral_variance(x);
    if s0 <= 0.0 {
        return 0.0;
    }
    let mut partial = 0.0;
    let mut acc = 0.0;
    for (t, &v) in x.iter().enumerate() {
        partial += v;
        let bridge = (partial - (t as f64 + 1.0) * mean) / (n * s0).sqrt();
        acc += bridge * bridge;
    }
    acc / n
}

pub fn heidelberger_welch(x: &[f64]) -> HeidelbergerWelch {
    let n = x.len();
    let mut start = 0;
    loop {
        let slice = &x[start..];
        let stat = cvm_statistic(slice);
        if stat < 0.461 {
            return HeidelbergerWelch {
                converged: true,
                start_index: start,
                discard_fraction: start as f64 / n as f64,
                cramer_von_mises: stat,
            };
        }
        let next = start + n / 10;
        if next * 2 > n || slice.len() < 20 {
            return HeidelbergerWelch {
                converged: false,
                start_index: start,
                discard_fraction: start as f64 / n as f64,
                cramer_von_mises: stat,
            };
        }
        start = next;
    }
}

/// Likelihood-ratio p-value for a shared shape across the `d` sites:
/// twice the maximized log-likelihood gap against chi-squared with `d - 1`
/// degrees of freedom.
pub fn lrt_regional_shape(ll_regional: f64, ll_free: f64, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::Config("regional shape test needs at least 2 sites".into()));
    }
    let stat = 2.0 * (ll_free - ll_regional);
    if stat < 0.0 {
        // the restricted model can never out-fit the free one; a negative gap
        // means one of the two maximizations failed
        return Err(Error::Numerical(format!(
            "negative likelihood-ratio statistic {stat}: optimization failure"
        )));
    }
    Ok(crate::stats::chi2_sf(stat, d - 1))
}

/// Convergence verdict for one monitored scalar across chains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarDiagnostic {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
    pub hw_converged: bool,
    pub hw_start_index: usize,
}

/// Per-scalar convergence report plus acceptance rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub scalars: Vec<ScalarDiagnostic>,
    pub acceptance: Vec<AcceptanceStats>,
    pub all_converged: bool,
}

/// Builds a convergence report over named traces, one trace per chain.
/// Each entry of `traces` is `(name, per-chain series)`.
pub fn diagnostics_report(
    traces: &[(String, Vec<Vec<f64>>)],
    acceptance: &[AcceptanceStats],
) -> Result<DiagnosticsReport> {
    let mut scalars = Vec::with_capacity(traces.len());
    let mut all_ok = true;
    for (name, chains) in traces {
        let rhat = match gelman_rubin(chains) {
            Ok(r) => r,
            // a constant trace (e.g. k pinned at 1) carries no mixing signal
            Err(Error::Numerical(_)) => 1.0,
            Err(e) => return Err(e),
        };
        let ess: f64 = chains.iter().map(|c| effective_sample_size(c)).sum();
        let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        let hw = heidelberger_welch(&pooled);
        if rhat > 1.1 || !hw.converged {
            all_ok = false;
        }
        scalars.push(ScalarDiagnostic {
            name: name.clone(),
            rhat,
            ess,
            hw_converged: hw.converged,
            hw_start_index: hw.start_index,
        });
    }
    Ok(DiagnosticsReport {
        scalars,
        acceptance: acceptance.to_vec(),
        all_converged: all_ok,
    })
}

/// Posterior summary of one scalar: mean and central credible bounds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

pub fn summarize_scalar(draws: &[f64]) -> ScalarSummary {
    let mean = draws.iter().sum::<f64>() / draws.len().max(1) as f64;
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    ScalarSummary {
        mean,
        q05: crate::stats::quantile(&sorted, 0.05),
        q50: crate::stats::quantile(&sorted, 0.5),
        q95: crate::stats::quantile(&sorted, 0.95),
    }
}
