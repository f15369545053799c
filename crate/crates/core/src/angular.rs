//! Dirichlet mixture angular measure on the unit simplex: densities, the
//! center-of-mass constraint, sampling, exponent-measure integrals, and
//! dependence coefficients.
//!
//! All densities are computed in log space; mixtures via log-sum-exp.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::margins::MarginalModel;
use crate::numeric::{log_sum_exp, IntegralEstimate, LatticeRule};

pub const WEIGHT_TOL: f64 = 1e-12;
pub const MOMENT_TOL: f64 = 1e-10;

/// One Dirichlet component: center of mass on the open simplex and a shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletComponent {
    pub center: Vec<f64>,
    pub shape: f64,
}

impl DirichletComponent {
    pub fn new(center: Vec<f64>, shape: f64) -> Result<DirichletComponent> {
        if !(shape > 0.0) || !shape.is_finite() {
            return Err(Error::Config("component shape must be positive".into()));
        }
        let sum: f64 = center.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Config(format!(
                "component center must sum to 1 (got {sum})"
            )));
        }
        if center.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config(
                "component center must lie in the open simplex".into(),
            ));
        }
        Ok(DirichletComponent { center, shape })
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.center.iter().map(|&m| m * self.shape).collect()
    }
}

// Stirling tail of ln Gamma beyond the leading terms.
fn stirling_tail(x: f64) -> f64 {
    1.0 / (12.0 * x) - 1.0 / (360.0 * x * x * x)
}

/// Log density at the component center:
/// `log_norm + sum_j (alpha_j - 1) log mu_j`. For concentrated components the
/// ln-Gamma differences cancel catastrophically, so a Stirling form (exact
/// cancellation done symbolically) takes over.
fn component_log_peak(c: &DirichletComponent) -> f64 {
    let d = c.center.len() as f64;
    let nu = c.shape;
    let min_alpha = c
        .center
        .iter()
        .fold(f64::INFINITY, |m, &mu| m.min(mu * nu));
    if min_alpha > 1e4 {
        let sum_log_mu: f64 = c.center.iter().map(|&mu| mu.ln()).sum();
        let tails: f64 = c.center.iter().map(|&mu| stirling_tail(mu * nu)).sum();
        0.5 * (d - 1.0) * (nu.ln() - (2.0 * std::f64::consts::PI).ln()) - 0.5 * sum_log_mu
            + stirling_tail(nu)
            - tails
    } else {
        let mut acc = ln_gamma(nu);
        for &mu in &c.center {
            acc -= ln_gamma(mu * nu);
            acc += (mu * nu - 1.0) * mu.ln();
        }
        acc
    }
}

// Centered evaluation anchored at the peak: the varying part
// `(alpha_j - 1) log(w_j / mu_j)` stays well-scaled near the center even for
// very large shapes.
fn centered_log_density(w: &[f64], center: &[f64], alphas: &[f64], log_peak: f64) -> Option<f64> {
    let mut acc = log_peak;
    for ((&wj, &mu), &a) in w.iter().zip(center).zip(alphas) {
        if wj <= 0.0 {
            return if a < 1.0 {
                Some(f64::INFINITY)
            } else if a > 1.0 {
                None // zero density from this component
            } else {
                Some(acc)
            };
        }
        acc += (a - 1.0) * ((wj - mu) / mu).ln_1p();
    }
    Some(acc)
}

/// Log Dirichlet density at a point of the simplex. Boundary points with a
/// negative exponent come out as `+inf`.
pub fn dirichlet_log_density(w: &[f64], c: &DirichletComponent) -> f64 {
    centered_log_density(w, &c.center, &c.alphas(), component_log_peak(c))
        .unwrap_or(f64::NEG_INFINITY)
}

pub fn dirichlet_density(w: &[f64], c: &DirichletComponent) -> f64 {
    dirichlet_log_density(w, c).exp()
}

/// Solves the center-of-mass condition for the last component:
/// `mu_k = (barycenter - sum_{m<k} p_m mu_m) / p_k`. Errors when the solved
/// center leaves the open simplex (constraint-infeasible proposal).
pub fn solve_last_center(d: usize, weights: &[f64], partial_centers: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = weights.len();
    if partial_centers.len() + 1 != k {
        return Err(Error::Config(format!(
            "need {} leading centers for k = {k}",
            k - 1
        )));
    }
    let pk = weights[k - 1];
    if !(pk > 0.0) {
        return Err(Error::Config("last weight must be positive".into()));
    }
    let mut center = vec![1.0 / d as f64; d];
    for (m, mu) in partial_centers.iter().enumerate() {
        for j in 0..d {
            center[j] -= weights[m] * mu[j];
        }
    }
    for slot in &mut center {
        *slot /= pk;
    }
    if center.iter().any(|&m| !(m > 0.0 && m < 1.0)) {
        return Err(Error::Data(format!(
            "solved center {center:?} outside the open simplex"
        )));
    }
    // renormalize away accumulated rounding
    let sum: f64 = center.iter().sum();
    for slot in &mut center {
        *slot /= sum;
    }
    Ok(center)
}

/// Dirichlet mixture parameter: weights plus components, satisfying the
/// center-of-mass condition. Log normalizers are cached at construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DMParams {
    weights: Vec<f64>,
    components: Vec<DirichletComponent>,
    #[serde(skip)]
    cache: DMCache,
}

// deserialization re-validates the invariants and rebuilds the cache
impl<'de> Deserialize<'de> for DMParams {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            weights: Vec<f64>,
            components: Vec<DirichletComponent>,
        }
        let raw = Raw::deserialize(de)?;
        DMParams::new(raw.weights, raw.components).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct DMCache {
    log_weights: Vec<f64>,
    alphas: Vec<Vec<f64>>,
    log_peaks: Vec<f64>,
}

impl DMParams {
    pub fn new(weights: Vec<f64>, components: Vec<DirichletComponent>) -> Result<DMParams> {
        let k = weights.len();
        if k == 0 || components.len() != k {
            return Err(Error::Config("weights/components length mismatch".into()));
        }
        if weights.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Config("mixture weights must be positive".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Config(format!(
                "mixture weights must sum to 1 (got {sum})"
            )));
        }
        let d = components[0].center.len();
        if d < 2 || components.iter().any(|c| c.center.len() != d) {
            return Err(Error::Config("component dimension mismatch".into()));
        }
        for j in 0..d {
            let com: f64 = weights
                .iter()
                .zip(&components)
                .map(|(&p, c)| p * c.center[j])
                .sum();
            if (com - 1.0 / d as f64).abs() > MOMENT_TOL {
                return Err(Error::Config(format!(
                    "center-of-mass condition violated at coordinate {j}: {com}"
                )));
            }
        }
        let mut dm = DMParams {
            weights,
            components,
            cache: DMCache::default(),
        };
        dm.rebuild_cache();
        Ok(dm)
    }

    /// Single component pinned at the barycenter (the only feasible k = 1
    /// mixture).
    pub fn barycentric(d: usize, shape: f64) -> Result<DMParams> {
        DMParams::new(
            vec![1.0],
            vec![DirichletComponent::new(vec![1.0 / d as f64; d], shape)?],
        )
    }

    fn rebuild_cache(&mut self) {
        let alphas: Vec<Vec<f64>> = self.components.iter().map(|c| c.alphas()).collect();
        let log_peaks = self.components.iter().map(component_log_peak).collect();
        self.cache = DMCache {
            log_weights: self.weights.iter().map(|&p| p.ln()).collect(),
            alphas,
            log_peaks,
        };
    }

    pub fn dim(&self) -> usize {
        self.components[0].center.len()
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[DirichletComponent] {
        &self.components
    }

    /// Worst-coordinate deviation from the center-of-mass condition.
    pub fn moment_residual(&self) -> f64 {
        let d = self.dim();
        (0..d)
            .map(|j| {
                let com: f64 = self
                    .weights
                    .iter()
                    .zip(&self.components)
                    .map(|(&p, c)| p * c.center[j])
                    .sum();
                (com - 1.0 / d as f64).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn log_dm_density(&self, w: &[f64]) -> f64 {
        let mut terms = Vec::with_capacity(self.k());
        for m in 0..self.k() {
            match centered_log_density(
                w,
                &self.components[m].center,
                &self.cache.alphas[m],
                self.cache.log_peaks[m],
            ) {
                Some(f64::INFINITY) => return f64::INFINITY,
                Some(v) => terms.push(self.cache.log_weights[m] + v),
                None => terms.push(f64::NEG_INFINITY),
            }
        }
        log_sum_exp(&terms)
    }

    pub fn dm_density(&self, w: &[f64]) -> f64 {
        self.log_dm_density(w).exp()
    }

    /// One draw from the mixture: component by weight, then normalized Gamma
    /// variates.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut u: f64 = rng.gen();
        let mut m = 0;
        for (i, &p) in self.weights.iter().enumerate() {
            if u < p || i == self.k() - 1 {
                m = i;
                break;
            }
            u -= p;
        }
        let alphas = &self.cache.alphas[m];
        let mut w: Vec<f64> = alphas
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("positive alpha").sample(rng))
            .collect();
        let total: f64 = w.iter().sum();
        for slot in &mut w {
            *slot /= total;
        }
        w
    }

    /// Log intensity of the exponent measure: `log(d h(w)) - (d+1) log r`.
    pub fn log_exponent_density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        let r: f64 = x.iter().sum();
        if !(r > 0.0) {
            return f64::NEG_INFINITY;
        }
        let w: Vec<f64> = x.iter().map(|&xi| xi / r).collect();
        (d as f64).ln() + self.log_dm_density(&w) - (d as f64 + 1.0) * r.ln()
    }

    pub fn exponent_density(&self, x: &[f64]) -> f64 {
        self.log_exponent_density(x).exp()
    }

    /// Bivariate margin of the mixture for a coordinate pair, obtained by
    /// Dirichlet aggregation (exact for Dirichlet components).
    pub fn pair_margin(&self, i: usize, j: usize) -> Result<DMParams> {
        let d = self.dim();
        if i == j || i >= d || j >= d {
            return Err(Error::Config("pair margin needs two distinct coordinates".into()));
        }
        let mut weights = Vec::with_capacity(self.k());
        let mut comps = Vec::with_capacity(self.k());
        for m in 0..self.k() {
            let a = &self.cache.alphas[m];
            let aij = a[i] + a[j];
            weights.push(self.weights[m] * (d as f64 / 2.0) * aij / self.components[m].shape);
            comps.push(DirichletComponent::new(
                vec![a[i] / aij, a[j] / aij],
                aij,
            )?);
        }
        // numerically renormalize; mass identity guarantees sum = 1
        let sum: f64 = weights.iter().sum();
        for p in &mut weights {
            *p /= sum;
        }
        DMParams::new(weights, comps)
    }
}

/// Restores cached normalizers; deserialization already does this, so the
/// call is only needed after direct field surgery.
pub fn rehydrate(dm: &mut DMParams) {
    dm.rebuild_cache();
}

/// Independent angular points drawn from the mixture under a fixed seed.
pub fn sample_dm(psi: &DMParams, count: usize, rng_seed: u64) -> Vec<Vec<f64>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    (0..count).map(|_| psi.sample(&mut rng)).collect()
}

/// Integration controls for exponent-measure evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub qmc_nodes: u64,
    pub qmc_shifts: u32,
}

impl Default for QuadratureSpec {
    fn default() -> QuadratureSpec {
        QuadratureSpec {
            rel_tol: 1e-9,
            abs_tol: 1e-14,
            qmc_nodes: 1 << 13,
            qmc_shifts: 8,
        }
    }
}

/// `lambda(A_u) = d * int max_j (w_j / u_j) H(dw)`: intensity mass of the
/// region where any coordinate exceeds its Fréchet threshold.
///
/// Adaptive quadrature for d <= 3, randomized rank-1 lattice rule for d >= 4.
/// Coordinates with infinite thresholds drop out of the maximum.
pub fn exponent_measure_region(
    u: &[f64],
    psi: &DMParams,
    spec: &QuadratureSpec,
) -> Result<IntegralEstimate> {
    let d = psi.dim();
    if u.len() != d {
        return Err(Error::Config("threshold dimension mismatch".into()));
    }
    if u.iter().any(|&uj| !(uj > 0.0)) {
        return Err(Error::Config("Fréchet thresholds must be positive".into()));
    }
    if u.iter().all(|&uj| uj.is_infinite()) {
        return Ok(IntegralEstimate {
            value: 0.0,
            error: 0.0,
        });
    }
    let max_ratio = |w: &[f64]| -> f64 {
        w.iter()
            .zip(u)
            .map(|(&wj, &uj)| if uj.is_infinite() { 0.0 } else { wj / uj })
            .fold(0.0, f64::max)
    };
    let est = match d {
        2 => {
            // Closed form: with W ~ Beta(a, b) per component and kink
            // w* = u1/(u1+u2),
            //   E[max(W/u1, (1-W)/u2)]
            //     = (1/u1) E[W 1{W > w*}] + (1/u2) E[(1-W) 1{W <= w*}]
            //     = (1/u1)(a/nu)(1 - I_{w*}(a+1, b))
            //       + (1/u2)(b/nu) I_{w*}(a, b+1),
            // using x f_{a,b}(x) = (a/nu) f_{a+1,b}(x) and its mirror.
            let inv1 = if u[0].is_finite() { 1.0 / u[0] } else { 0.0 };
            let inv2 = if u[1].is_finite() { 1.0 / u[1] } else { 0.0 };
            let w_star = if !u[0].is_finite() {
                1.0
            } else if !u[1].is_finite() {
                0.0
            } else {
                u[0] / (u[0] + u[1])
            };
            let mut total = 0.0;
            let mut err = 0.0;
            for (p, c) in psi.weights().iter().zip(psi.components()) {
                let nu = c.shape;
                let a = c.center[0] * nu;
                let b = c.center[1] * nu;
                let (upper, lower, rel_err) = if nu > 1e5 {
                    // Gaussian limit: the incomplete-beta routines lose all
                    // precision for very concentrated components, while the
                    // normal approximation error shrinks like 1/nu.
                    use statrs::function::erf::erfc;
                    let mu = a / nu;
                    let sd = (a * b / (nu * nu * (nu + 1.0))).sqrt();
                    let z = (w_star - mu) / sd;
                    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                    let cdf = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
                    (
                        mu * (1.0 - cdf) + sd * pdf,
                        (1.0 - mu) * cdf + sd * pdf,
                        10.0 / nu,
                    )
                } else {
                    (
                        (a / nu) * (1.0 - beta_reg(a + 1.0, b, w_star)),
                        (b / nu) * beta_reg(a, b + 1.0, w_star),
                        1e-14,
                    )
                };
                let contrib = p * (inv1 * upper + inv2 * lower);
                total += contrib;
                err += contrib * rel_err;
            }
            IntegralEstimate {
                value: total,
                error: err,
            }
        }
        _ => {
            // Randomized rank-1 lattice rule in stick-breaking coordinates:
            // per mixture component, map the unit cube through inverse Beta
            // transforms so the nodes are Dirichlet-distributed and the
            // integrand (the bounded max of coordinate ratios) needs no
            // density weight. This stays accurate when some concentration
            // products drop below one and the density blows up at the
            // simplex boundary.
            use rand::SeedableRng;
            use statrs::distribution::{Beta as BetaDist, ContinuousCDF};
            let rule = LatticeRule::new(d - 1);
            let mut shift_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15);
            let sticks: Vec<Vec<BetaDist>> = psi
                .components()
                .iter()
                .map(|c| {
                    let alphas: Vec<f64> = c.center.iter().map(|&m| m * c.shape).collect();
                    (0..d - 1)
                        .map(|j| {
                            let tail: f64 = alphas[j + 1..].iter().sum();
                            BetaDist::new(alphas[j], tail).expect("positive alphas")
                        })
                        .collect()
                })
                .collect();
            let mut shift = vec![0.0; d - 1];
            let mut pt = vec![0.0; d - 1];
            let mut w = vec![0.0; d];
            let mut shift_means = Vec::with_capacity(spec.qmc_shifts as usize);
            for _ in 0..spec.qmc_shifts.max(1) {
                for s in &mut shift {
                    *s = shift_rng.gen::<f64>();
                }
                let mut acc = 0.0;
                for i in 0..spec.qmc_nodes {
                    rule.point(i, &shift, &mut pt);
                    for (p, comp_sticks) in psi.weights().iter().zip(&sticks) {
                        let mut remaining = 1.0;
                        for j in 0..d - 1 {
                            let t = pt[j].clamp(1e-12, 1.0 - 1e-12);
                            let frac = comp_sticks[j].inverse_cdf(t);
                            w[j] = remaining * frac;
                            remaining *= 1.0 - frac;
                        }
                        w[d - 1] = remaining.max(0.0);
                        acc += p * max_ratio(&w);
                    }
                }
                shift_means.push(acc / spec.qmc_nodes as f64);
            }
            let (mean, sd) = crate::stats::mean_sd(&shift_means);
            IntegralEstimate {
                value: mean,
                error: if shift_means.len() > 1 {
                    sd / (shift_means.len() as f64).sqrt()
                } else {
                    f64::NAN
                },
            }
        }
    };
    let value = est.value * d as f64;
    let error = est.error * d as f64;
    if !value.is_finite() {
        return Err(Error::Numerical("exponent measure integral diverged".into()));
    }
    Ok(IntegralEstimate { value, error })
}

/// Monte Carlo companion estimate of `lambda(A_u)`: importance samples from
/// the mixture itself. Returns (estimate, standard error).
pub fn exponent_measure_region_mc<R: Rng + ?Sized>(
    u: &[f64],
    psi: &DMParams,
    n: usize,
    rng: &mut R,
) -> (f64, f64) {
    let d = psi.dim() as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let w = psi.sample(rng);
        let v = w
            .iter()
            .zip(u)
            .map(|(&wj, &uj)| if uj.is_infinite() { 0.0 } else { wj / uj })
            .fold(0.0, f64::max);
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0) / n as f64;
    (d * mean, d * var.sqrt())
}

/// Pairwise asymptotic dependence coefficient via the incomplete-Beta closed
/// form: `chi_ij = 2 - V_ij(1,1)` with
/// `V_ij(1,1) = d sum_m p_m (a_i + a_j)/nu_m E[max(U, 1-U)]`,
/// `U ~ Beta(a_i, a_j)`.
pub fn chi_coefficient(psi: &DMParams, i: usize, j: usize) -> Result<f64> {
    let d = psi.dim();
    if i == j || i >= d || j >= d {
        return Err(Error::Config("chi needs two distinct coordinates".into()));
    }
    let mut v = 0.0;
    for (m, c) in psi.components().iter().enumerate() {
        let a = c.center[i] * c.shape;
        let b = c.center[j] * c.shape;
        // E[max(U, 1-U)] = E[U; U > 1/2] + E[1-U; U < 1/2]
        let e_hi = a / (a + b) * (1.0 - beta_reg(a + 1.0, b, 0.5));
        let e_lo = b / (a + b) * (1.0 - beta_reg(b + 1.0, a, 0.5));
        v += psi.weights()[m] * d as f64 * (a + b) / c.shape * (e_hi + e_lo);
    }
    Ok((2.0 - v).clamp(0.0, 1.0))
}

/// Quadrature route for `chi`: pairwise exponent measure of the aggregated
/// bivariate margin at thresholds (1, 1).
pub fn chi_coefficient_quadrature(
    psi: &DMParams,
    i: usize,
    j: usize,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let pair = psi.pair_margin(i, j)?;
    let v = exponent_measure_region(&[1.0, 1.0], &pair, spec)?;
    Ok((2.0 - v.value).clamp(0.0, 1.0))
}

/// Return period of a joint excess of the two sites' T-year levels under the
/// fitted dependence: `T / chi`.
pub fn joint_return_period(t_marginal: f64, chi: f64) -> Result<f64> {
    if !(t_marginal > 0.0) {
        return Err(Error::Config("return period must be positive".into()));
    }
    if !(0.0..=1.0).contains(&chi) {
        return Err(Error::Config(format!("chi out of range: {chi}")));
    }
    if chi == 0.0 {
        return Ok(f64::INFINITY); // asymptotic independence
    }
    Ok(t_marginal / chi)
}

/// Same joint return period under the independence assumption, corrected for
/// short-term clustering: `T^2 * days_per_year / tau_hat`.
pub fn independent_joint_return_period(
    t_marginal: f64,
    mean_cluster_size: f64,
    days_per_year: f64,
) -> Result<f64> {
    if !(t_marginal > 0.0) || !(mean_cluster_size >= 1.0) {
        return Err(Error::Config("invalid joint return period inputs".into()));
    }
    Ok(t_marginal * t_marginal * days_per_year / mean_cluster_size)
}

/// `P(Y_i > y | Y_j > v_j)` from the pairwise exponent measure at
/// Fréchet-transformed levels.
pub fn conditional_tail(
    psi: &DMParams,
    margins: &MarginalModel<'_>,
    i: usize,
    j: usize,
    y: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if y < margins.thresholds[i] {
        return Err(Error::Data("conditional tail level below threshold".into()));
    }
    let a = margins.frechet_transform(i, y)?;
    let uj = margins.frechet_threshold(j);
    let pair = psi.pair_margin(i, j)?;
    if a.is_infinite() {
        return Ok(0.0);
    }
    // lambda(x_i > a AND x_j > uj) = 1/a + 1/uj - V(a, uj)
    let v = exponent_measure_region(&[a, uj], &pair, spec)?;
    let joint = (1.0 / a + 1.0 / uj - v.value).max(0.0);
    Ok((joint * uj).clamp(0.0, 1.0))
}
