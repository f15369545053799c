//! Generalized Pareto marginal models above threshold, exceedance-rate
//! estimation, Fréchet standardization, and return levels.
//!
//! Below-threshold evaluation is deliberately out of scope: the model censors
//! at threshold, so any request for the cdf below `v_j` is an error rather
//! than a silent extrapolation.

use serde::{Deserialize, Serialize};

use crate::data_model::{CensorKind, SeriesPanel, ThresholdConfig};
use crate::decluster::{self, Cluster};
use crate::error::{Error, Result};

/// Shape values closer to zero than this use the exponential limit branch.
pub const XI_EPS: f64 = 1e-6;

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Per-site GPD parameters on the log-scale/shape parametrization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalParams {
    pub log_scales: Vec<f64>,
    pub shapes: Vec<f64>,
    /// When set, all shapes are constrained equal.
    pub regional: bool,
}

impl MarginalParams {
    pub fn new(log_scales: Vec<f64>, shapes: Vec<f64>, regional: bool) -> Result<MarginalParams> {
        if log_scales.len() != shapes.len() {
            return Err(Error::Config("scale/shape dimension mismatch".into()));
        }
        if regional && shapes.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Config(
                "regional model requires identical shapes".into(),
            ));
        }
        Ok(MarginalParams {
            log_scales,
            shapes,
            regional,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.shapes.len()
    }

    pub fn scale(&self, j: usize) -> f64 {
        self.log_scales[j].exp()
    }
}

/// Empirical exceedance rates and the matching Fréchet thresholds
/// `u_j = -1/log(1 - zeta_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceRates {
    pub zetas: Vec<f64>,
    pub frechet_thresholds: Vec<f64>,
}

impl ExceedanceRates {
    pub fn from_zetas(zetas: Vec<f64>) -> Result<ExceedanceRates> {
        if zetas.iter().any(|&z| !(z > 0.0 && z < 1.0)) {
            return Err(Error::Data(
                "threshold too high: exceedance rate must lie in (0,1)".into(),
            ));
        }
        let frechet_thresholds = zetas.iter().map(|&z| -1.0 / (1.0 - z).ln()).collect();
        Ok(ExceedanceRates {
            zetas,
            frechet_thresholds,
        })
    }
}

/// Exceedance rate per site: intra-cluster days (univariate declustering)
/// over non-missing days.
pub fn estimate_zeta(p: &SeriesPanel, c: &ThresholdConfig) -> Result<ExceedanceRates> {
    let mut zetas = Vec::with_capacity(p.n_sites());
    for j in 0..p.n_sites() {
        let non_missing = (0..p.n_days())
            .filter(|&t| p.obs(t, j).kind != CensorKind::Missing)
            .count();
        if non_missing == 0 {
            return Err(Error::Data(format!(
                "site {} has no non-missing days",
                p.site_names()[j]
            )));
        }
        let clusters = decluster::univariate_clusters(p, j, c.thresholds[j], c.run_length);
        let intra: usize = clusters.iter().map(Cluster::len).sum();
        if intra == 0 {
            return Err(Error::Data(format!(
                "threshold too high at site {}: no excesses",
                p.site_names()[j]
            )));
        }
        zetas.push(intra as f64 / non_missing as f64);
    }
    ExceedanceRates::from_zetas(zetas)
}

/// Marginal model view: parameters plus fixed exceedance rates and thresholds.
#[derive(Debug, Clone, Copy)]
pub struct MarginalModel<'a> {
    pub params: &'a MarginalParams,
    pub rates: &'a ExceedanceRates,
    pub thresholds: &'a [f64],
}

impl<'a> MarginalModel<'a> {
    pub fn new(
        params: &'a MarginalParams,
        rates: &'a ExceedanceRates,
        thresholds: &'a [f64],
    ) -> MarginalModel<'a> {
        MarginalModel {
            params,
            rates,
            thresholds,
        }
    }

    pub fn frechet_threshold(&self, j: usize) -> f64 {
        self.rates.frechet_thresholds[j]
    }

    /// GPD survival multiplier `(1 + xi z / sigma)^(-1/xi)` with the
    /// exponential limit at small `|xi|`; 0 above a negative-shape endpoint.
    fn tail_factor(&self, j: usize, z: f64) -> f64 {
        let xi = self.params.shapes[j];
        let sigma = self.params.scale(j);
        if xi.abs() < XI_EPS {
            (-z / sigma).exp()
        } else {
            let base = 1.0 + xi * z / sigma;
            if base <= 0.0 {
                if xi < 0.0 {
                    0.0 // above the upper endpoint
                } else {
                    f64::NAN
                }
            } else {
                base.powf(-1.0 / xi)
            }
        }
    }

    /// `F_j(y) = 1 - zeta_j (1 + xi_j (y - v_j)/sigma_j)^(-1/xi_j)` for
    /// `y >= v_j`.
    pub fn gpd_cdf(&self, j: usize, y: f64) -> Result<f64> {
        let v = self.thresholds[j];
        if y < v {
            return Err(Error::Data(format!(
                "cdf requested below threshold ({y} < {v})"
            )));
        }
        Ok(1.0 - self.rates.zetas[j] * self.tail_factor(j, y - v))
    }

    /// Marginal density above threshold: `zeta_j` times the GPD density.
    pub fn density(&self, j: usize, y: f64) -> Result<f64> {
        let v = self.thresholds[j];
        if y <= v {
            return Err(Error::Data(format!(
                "density requested at or below threshold ({y} <= {v})"
            )));
        }
        let xi = self.params.shapes[j];
        let sigma = self.params.scale(j);
        let z = y - v;
        let f = if xi.abs() < XI_EPS {
            (-z / sigma).exp() / sigma
        } else {
            let base = 1.0 + xi * z / sigma;
            if base <= 0.0 {
                return Ok(0.0);
            }
            base.powf(-1.0 / xi - 1.0) / sigma
        };
        Ok(self.rates.zetas[j] * f)
    }

    /// `T_j(y) = -1/log F_j(y)`; maps `(v_j, inf)` onto `(u_j, inf)`.
    /// Returns the infinity sentinel at a negative-shape upper endpoint.
    pub fn frechet_transform(&self, j: usize, y: f64) -> Result<f64> {
        let f = self.gpd_cdf(j, y)?;
        if f >= 1.0 {
            return Ok(f64::INFINITY);
        }
        Ok(-1.0 / f.ln())
    }

    /// Inverse of `frechet_transform` on `x >= u_j`.
    pub fn frechet_inverse(&self, j: usize, x: f64) -> Result<f64> {
        if x.is_infinite() {
            return Err(Error::Numerical("cannot invert infinite Fréchet value".into()));
        }
        // survival 1 - F = -expm1(-1/x), computed without cancellation
        let s = -(-1.0 / x).exp_m1();
        self.invert_survival(j, s)
    }

    /// Level with survival `s`; requires `s <= zeta_j`.
    fn invert_survival(&self, j: usize, s: f64) -> Result<f64> {
        let zeta = self.rates.zetas[j];
        if s > zeta * (1.0 + 1e-12) {
            return Err(Error::Data(format!(
                "survival {s} exceeds exceedance rate {zeta}: level below threshold"
            )));
        }
        let s = s.min(zeta);
        let xi = self.params.shapes[j];
        let sigma = self.params.scale(j);
        let v = self.thresholds[j];
        let ratio = s / zeta;
        if xi.abs() < XI_EPS {
            Ok(v - sigma * ratio.ln())
        } else {
            Ok(v + sigma / xi * (ratio.powf(-xi) - 1.0))
        }
    }

    /// Jacobian `dT_j/dy = f_j(y) / (F_j(y) log^2 F_j(y))` for `y > v_j`.
    pub fn frechet_jacobian(&self, j: usize, y: f64) -> Result<f64> {
        let f_cdf = self.gpd_cdf(j, y)?;
        if f_cdf >= 1.0 {
            return Err(Error::Numerical(
                "Jacobian undefined at distribution endpoint".into(),
            ));
        }
        let dens = self.density(j, y)?;
        let log_f = f_cdf.ln();
        Ok(dens / (f_cdf * log_f * log_f))
    }

    /// Return level for a `t_years` return period: the level whose marginal
    /// survival equals one exceedance per period.
    pub fn return_level(&self, j: usize, t_years: f64, days_per_year: f64) -> Result<f64> {
        if t_years <= 0.0 {
            return Err(Error::Config("return period must be positive".into()));
        }
        let s = 1.0 / (t_years * days_per_year);
        if s > self.rates.zetas[j] * (1.0 + 1e-12) {
            return Err(Error::Data(format!(
                "return period {t_years} y shorter than threshold exceedance return period"
            )));
        }
        self.invert_survival(j, s)
    }
}

/// Weibull plotting positions over exact values at one site, largest first.
/// Ties share the plotting position of the deepest tied rank.
pub fn empirical_return_period(
    p: &SeriesPanel,
    j: usize,
    days_per_year: f64,
) -> Vec<(f64, f64)> {
    let mut values: Vec<f64> = (0..p.n_days())
        .filter_map(|t| {
            let o = p.obs(t, j);
            (o.kind == CensorKind::Exact).then(|| o.value.unwrap())
        })
        .collect();
    if values.is_empty() {
        return Vec::new();
    }
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let m = values.len();
    let span_years = p.n_days() as f64 / days_per_year;
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(m);
    let mut i = 0;
    while i < m {
        let mut k = i;
        while k + 1 < m && values[k + 1] == values[i] {
            k += 1;
        }
        // deepest rank in the tie group (1-based)
        let period = span_years * (m as f64 + 1.0) / (k as f64 + 1.0);
        for _ in i..=k {
            out.push((values[i], period));
        }
        i = k + 1;
    }
    out
}
