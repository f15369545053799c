//! Censored Poisson-process likelihood for declustered multivariate excesses.
//!
//! The observation window decomposes into cluster days (point terms), fully
//! sub-threshold days (a void term over the standard extreme region),
//! undetermined blocks (void terms over enlarged regions shaped by the known
//! upper bounds), and missing days (no contribution). Censored or missing
//! cluster-maximum coordinates are handled by data augmentation on the
//! Fréchet scale; the cluster point term evaluates the exponent-measure
//! intensity at the completed point.

use serde::{Deserialize, Serialize};

use crate::angular::{exponent_measure_region, DMParams, QuadratureSpec};
use crate::data_model::{CensorKind, Observation};
use crate::decluster::{ClusterMaximum, DeclusterSummary};
use crate::error::{Error, Result};
use crate::margins::MarginalModel;

/// Fréchet-scale interval compatible with one censored or missing coordinate
/// of a cluster maximum. Sub-threshold information collapses to `[0, u_j]`;
/// bounds above the threshold transform exactly.
pub fn frechet_interval(
    margins: &MarginalModel<'_>,
    j: usize,
    obs: &Observation,
) -> Result<(f64, f64)> {
    let v = margins.thresholds[j];
    let u = margins.frechet_threshold(j);
    match obs.kind {
        CensorKind::Exact => Err(Error::Data(
            "exact coordinate does not need an augmentation interval".into(),
        )),
        CensorKind::Missing => Ok((0.0, f64::INFINITY)),
        CensorKind::RightCensored => {
            let l = obs.lower;
            if l > v {
                Ok((margins.frechet_transform(j, l)?, f64::INFINITY))
            } else {
                Ok((0.0, f64::INFINITY))
            }
        }
        CensorKind::IntervalCensored => {
            let lo = if obs.lower > v {
                margins.frechet_transform(j, obs.lower)?
            } else {
                0.0
            };
            let hi = if obs.upper > v {
                margins.frechet_transform(j, obs.upper)?
            } else {
                u
            };
            Ok((lo, hi))
        }
    }
}

/// Data-augmentation state: one Fréchet-scale value per cluster and site.
/// Entries at exact coordinates are ignored (recomputed from the data at
/// every evaluation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub clusters: Vec<Vec<f64>>,
}

/// Initial augmentation: interval midpoints, or a unit step above the lower
/// bound when the interval is unbounded.
pub fn init_augmented(
    margins: &MarginalModel<'_>,
    maxima: &[ClusterMaximum],
) -> Result<AugmentedState> {
    let mut clusters = Vec::with_capacity(maxima.len());
    for cm in maxima {
        let mut x = Vec::with_capacity(cm.coords.len());
        for (j, obs) in cm.coords.iter().enumerate() {
            if obs.kind == CensorKind::Exact {
                let y = obs.value.ok_or_else(|| Error::Data("exact without value".into()))?;
                x.push(margins.frechet_transform(j, y)?);
            } else {
                let (lo, hi) = frechet_interval(margins, j, obs)?;
                x.push(if hi.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    lo.max(margins.frechet_threshold(j) * 0.5) + 1.0
                });
            }
        }
        clusters.push(x);
    }
    Ok(AugmentedState { clusters })
}

/// Additive pieces of the log likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodParts {
    pub clusters: f64,
    pub void_below: f64,
    pub blocks: f64,
}

impl LikelihoodParts {
    pub fn total(&self) -> f64 {
        self.clusters + self.void_below + self.blocks
    }
}

/// Static inputs of the void terms, extracted once from a declustering
/// summary. Blocks sharing identical upper-bound vectors are merged so the
/// exponent-measure integral runs once per distinct pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodContext {
    pub below_days: f64,
    pub tau_hat: f64,
    pub block_groups: Vec<(Vec<f64>, f64)>,
}

impl LikelihoodContext {
    pub fn from_summary(summary: &DeclusterSummary) -> LikelihoodContext {
        let mut groups: Vec<(Vec<f64>, f64)> = Vec::new();
        for b in &summary.blocks {
            match groups.iter_mut().find(|(u, _)| *u == b.upper_bounds) {
                Some((_, days)) => *days += b.length as f64,
                None => groups.push((b.upper_bounds.clone(), b.length as f64)),
            }
        }
        LikelihoodContext {
            below_days: summary.below_days as f64,
            tau_hat: summary.mean_cluster_size,
            block_groups: groups,
        }
    }
}

/// Log point term of one cluster maximum at the completed Fréchet point:
/// exponent-measure intensity plus the transformation Jacobians of the exact
/// coordinates. Augmented values falling outside their current intervals
/// yield `-inf` (the proposal is incompatible with the data).
pub fn cluster_log_term(
    psi: &DMParams,
    margins: &MarginalModel<'_>,
    cm: &ClusterMaximum,
    aug: &[f64],
) -> Result<f64> {
    let d = cm.coords.len();
    let mut x = vec![0.0; d];
    let mut log_jac = 0.0;
    for j in 0..d {
        let obs = &cm.coords[j];
        if obs.kind == CensorKind::Exact {
            let y = obs.value.ok_or_else(|| Error::Data("exact without value".into()))?;
            x[j] = margins.frechet_transform(j, y)?;
            if !x[j].is_finite() {
                return Ok(f64::NEG_INFINITY); // at or past the GPD endpoint
            }
            let jac = margins.frechet_jacobian(j, y)?;
            if !(jac > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            log_jac += jac.ln();
        } else {
            let (lo, hi) = frechet_interval(margins, j, obs)?;
            if aug[j] < lo || aug[j] > hi || !aug[j].is_finite() {
                return Ok(f64::NEG_INFINITY);
            }
            x[j] = aug[j];
        }
    }
    Ok(psi.log_exponent_density(&x) + log_jac)
}

/// Void term for the fully sub-threshold days: `-(days / tau) lambda(A_u)`.
pub fn void_below_log_term(lambda_u: f64, below_days: f64, tau_hat: f64) -> f64 {
    -below_days / tau_hat * lambda_u
}

/// Enlarged Fréchet thresholds of an undetermined block: an upper bound `R_j`
/// rules out exceedances only above it, so the unobserved-event region starts
/// at `max(u_j, T_j(R_j))`; an infinite bound removes the coordinate.
pub fn block_thresholds(
    margins: &MarginalModel<'_>,
    upper_bounds: &[f64],
) -> Result<Vec<f64>> {
    let d = upper_bounds.len();
    let mut u_tilde = vec![0.0; d];
    for j in 0..d {
        let r = upper_bounds[j];
        u_tilde[j] = if r.is_infinite() {
            f64::INFINITY
        } else if r > margins.thresholds[j] {
            let t = margins.frechet_transform(j, r)?;
            t.max(margins.frechet_threshold(j))
        } else {
            margins.frechet_threshold(j)
        };
    }
    Ok(u_tilde)
}

/// Void term of one block group: `-(days / tau) lambda(A_{u_tilde})`.
pub fn block_log_term(
    psi: &DMParams,
    margins: &MarginalModel<'_>,
    upper_bounds: &[f64],
    days: f64,
    tau_hat: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let u_tilde = block_thresholds(margins, upper_bounds)?;
    let lambda = exponent_measure_region(&u_tilde, psi, spec)?;
    Ok(-days / tau_hat * lambda.value)
}

/// Full log likelihood of the augmented model given current parameters.
pub fn total_log_likelihood(
    psi: &DMParams,
    margins: &MarginalModel<'_>,
    maxima: &[ClusterMaximum],
    aug: &AugmentedState,
    ctx: &LikelihoodContext,
    spec: &QuadratureSpec,
) -> Result<LikelihoodParts> {
    if aug.clusters.len() != maxima.len() {
        return Err(Error::Config("augmentation/cluster count mismatch".into()));
    }
    let mut clusters = 0.0;
    for (cm, x) in maxima.iter().zip(&aug.clusters) {
        clusters += cluster_log_term(psi, margins, cm, x)?;
        if clusters == f64::NEG_INFINITY {
            break;
        }
    }
    let u: Vec<f64> = (0..margins.thresholds.len())
        .map(|j| margins.frechet_threshold(j))
        .collect();
    let lambda_u = exponent_measure_region(&u, psi, spec)?.value;
    let void_below = void_below_log_term(lambda_u, ctx.below_days, ctx.tau_hat);
    let mut blocks = 0.0;
    for (bounds, days) in &ctx.block_groups {
        blocks += block_log_term(psi, margins, bounds, *days, ctx.tau_hat, spec)?;
    }
    Ok(LikelihoodParts {
        clusters,
        void_below,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular::solve_last_center;
    use crate::data_model::Observation;
    use crate::decluster::UndeterminedBlock;
    use crate::margins::{ExceedanceRates, MarginalParams};
    use approx::assert_relative_eq;

    fn margins_fixture<'a>(
        params: &'a MarginalParams,
        rates: &'a ExceedanceRates,
        thresholds: &'a [f64],
    ) -> MarginalModel<'a> {
        MarginalModel::new(params, rates, thresholds)
    }

    fn psi2() -> DMParams {
        let mu2 = solve_last_center(2, &[0.4, 0.6], &[vec![0.3, 0.7]]).unwrap();
        DMParams::new(
            vec![0.4, 0.6],
            vec![
                crate::angular::DirichletComponent::new(vec![0.3, 0.7], 5.0).unwrap(),
                crate::angular::DirichletComponent::new(mu2, 8.0).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn interval_rules() {
        let params = MarginalParams::new(vec![100f64.ln(); 2], vec![0.1; 2], true).unwrap();
        let rates = ExceedanceRates::from_zetas(vec![0.002, 0.002]).unwrap();
        let thresholds = [300.0, 300.0];
        let m = margins_fixture(&params, &rates, &thresholds);
        let u = m.frechet_threshold(0);

        let (lo, hi) = frechet_interval(&m, 0, &Observation::missing()).unwrap();
        assert_eq!((lo, hi), (0.0, f64::INFINITY));

        // right-censored above threshold: lower bound transforms
        let (lo, hi) = frechet_interval(&m, 0, &Observation::right_censored(400.0)).unwrap();
        assert_relative_eq!(lo, m.frechet_transform(0, 400.0).unwrap());
        assert!(hi.is_infinite());

        // right-censored below threshold carries no usable bound
        let (lo, _) = frechet_interval(&m, 0, &Observation::right_censored(100.0)).unwrap();
        assert_eq!(lo, 0.0);

        // fully sub-threshold interval collapses to [0, u]
        let (lo, hi) =
            frechet_interval(&m, 0, &Observation::interval_censored(0.0, 300.0)).unwrap();
        assert_eq!(lo, 0.0);
        assert_relative_eq!(hi, u);

        // straddling interval: lower part collapses, upper part transforms
        let (lo, hi) =
            frechet_interval(&m, 0, &Observation::interval_censored(200.0, 500.0))
                .unwrap();
        assert_eq!(lo, 0.0);
        assert_relative_eq!(hi, m.frechet_transform(0, 500.0).unwrap());
    }

    #[test]
    fn exact_interval_consistency() {
        // shrinking an interval around y reproduces the exact-coordinate term
        // up to the change of variables: dT = J dy
        let params = MarginalParams::new(vec![100f64.ln(); 2], vec![0.1; 2], true).unwrap();
        let rates = ExceedanceRates::from_zetas(vec![0.002, 0.002]).unwrap();
        let thresholds = [300.0, 300.0];
        let m = margins_fixture(&params, &rates, &thresholds);
        let psi = psi2();
        let y = 420.0;
        let eps = 1e-4;

        let exact = ClusterMaximum {
            start_day: 0,
            coords: vec![Observation::exact(y), Observation::exact(380.0)],
        };
        let x1 = m.frechet_transform(1, 380.0).unwrap();
        let t_exact = cluster_log_term(&psi, &m, &exact, &[f64::NAN, x1]).unwrap();

        let interval = ClusterMaximum {
            start_day: 0,
            coords: vec![
                Observation::interval_censored(y - eps, y + eps),
                Observation::exact(380.0),
            ],
        };
        let x0 = m.frechet_transform(0, y).unwrap();
        let t_int = cluster_log_term(&psi, &m, &interval, &[x0, x1]).unwrap();
        let log_j = m.frechet_jacobian(0, y).unwrap().ln();
        assert_relative_eq!(t_exact, t_int + log_j, max_relative = 1e-9);
    }

    #[test]
    fn out_of_interval_is_neg_inf() {
        let params = MarginalParams::new(vec![100f64.ln(); 2], vec![0.1; 2], true).unwrap();
        let rates = ExceedanceRates::from_zetas(vec![0.002, 0.002]).unwrap();
        let thresholds = [300.0, 300.0];
        let m = margins_fixture(&params, &rates, &thresholds);
        let psi = psi2();
        let cm = ClusterMaximum {
            start_day: 0,
            coords: vec![
                Observation::exact(400.0),
                Observation::interval_censored(0.0, 300.0),
            ],
        };
        // augmented value above u_1 contradicts the sub-threshold interval
        let bad = m.frechet_threshold(1) * 2.0;
        assert_eq!(
            cluster_log_term(&psi, &m, &cm, &[f64::NAN, bad]).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn block_thresholds_drop_and_clamp() {
        let params = MarginalParams::new(vec![100f64.ln(); 2], vec![0.1; 2], true).unwrap();
        let rates = ExceedanceRates::from_zetas(vec![0.002, 0.002]).unwrap();
        let thresholds = [300.0, 300.0];
        let m = margins_fixture(&params, &rates, &thresholds);
        let u = m.frechet_threshold(0);

        // infinite bound drops the coordinate; sub-threshold bound clamps to u
        let ut = block_thresholds(&m, &[f64::INFINITY, 100.0]).unwrap();
        assert!(ut[0].is_infinite());
        assert_relative_eq!(ut[1], u);

        // informative bound enlarges the threshold
        let ut = block_thresholds(&m, &[500.0, 100.0]).unwrap();
        assert!(ut[0] > u);
        assert_relative_eq!(ut[0], m.frechet_transform(0, 500.0).unwrap());
    }

    #[test]
    fn block_term_monotone_in_bound() {
        // a weaker (larger) upper bound carries less information: the void
        // penalty shrinks toward zero
        let params = MarginalParams::new(vec![100f64.ln(); 2], vec![0.1; 2], true).unwrap();
        let rates = ExceedanceRates::from_zetas(vec![0.002, 0.002]).unwrap();
        let thresholds = [300.0, 300.0];
        let m = margins_fixture(&params, &rates, &thresholds);
        let psi = psi2();
        let spec = QuadratureSpec::default();
        let t_tight = block_log_term(&psi, &m, &[400.0, 400.0], 365.0, 1.2, &spec).unwrap();
        let t_loose = block_log_term(&psi, &m, &[900.0, 900.0], 365.0, 1.2, &spec).unwrap();
        let t_none =
            block_log_term(&psi, &m, &[f64::INFINITY, f64::INFINITY], 365.0, 1.2, &spec).unwrap();
        assert!(t_tight < t_loose);
        assert!(t_loose < t_none);
        assert_eq!(t_none, 0.0);
    }

    #[test]
    fn void_term_scales_with_days() {
        assert_relative_eq!(void_below_log_term(0.004, 730.0, 1.25), -730.0 / 1.25 * 0.004);
        assert_eq!(void_below_log_term(0.004, 0.0, 1.25), 0.0);
    }

    #[test]
    fn context_groups_identical_blocks() {
        let blocks = vec![
            UndeterminedBlock {
                start_day: 0,
                length: 365,
                upper_bounds: vec![f64::INFINITY, 500.0],
            },
            UndeterminedBlock {
                start_day: 400,
                length: 200,
                upper_bounds: vec![f64::INFINITY, 500.0],
            },
            UndeterminedBlock {
                start_day: 700,
                length: 10,
                upper_bounds: vec![600.0, 500.0],
            },
        ];
        let summary = DeclusterSummary {
            clusters: vec![],
            blocks,
            below_days: 1000,
            missing_days: 50,
            cluster_days: 0,
            mean_cluster_size: 1.3,
            n_days: 2000,
            n_sites: 2,
        };
        let ctx = LikelihoodContext::from_summary(&summary);
        assert_eq!(ctx.block_groups.len(), 2);
        assert_relative_eq!(ctx.block_groups[0].1, 565.0);
        assert_relative_eq!(ctx.block_groups[1].1, 10.0);
    }

    #[test]
    fn total_is_sum_of_parts() {
        let params = MarginalParams::new(vec![100f64.ln(); 2], vec![0.1; 2], true).unwrap();
        let rates = ExceedanceRates::from_zetas(vec![0.002, 0.002]).unwrap();
        let thresholds = [300.0, 300.0];
        let m = margins_fixture(&params, &rates, &thresholds);
        let psi = psi2();
        let spec = QuadratureSpec::default();
        let maxima = vec![ClusterMaximum {
            start_day: 3,
            coords: vec![
                Observation::exact(400.0),
                Observation::interval_censored(0.0, 300.0),
            ],
        }];
        let aug = init_augmented(&m, &maxima).unwrap();
        let ctx = LikelihoodContext {
            below_days: 500.0,
            tau_hat: 1.2,
            block_groups: vec![(vec![f64::INFINITY, 450.0], 365.0)],
        };
        let parts = total_log_likelihood(&psi, &m, &maxima, &aug, &ctx, &spec).unwrap();
        assert!(parts.total().is_finite());
        assert_relative_eq!(
            parts.total(),
            parts.clusters + parts.void_below + parts.blocks
        );
        let point = cluster_log_term(&psi, &m, &maxima[0], &aug.clusters[0]).unwrap();
        assert_relative_eq!(parts.clusters, point);
        assert!(parts.void_below < 0.0 && parts.blocks < 0.0);
    }

    #[test]
    fn more_sub_threshold_days_lower_likelihood() {
        let params = MarginalParams::new(vec![100f64.ln(); 2], vec![0.1; 2], true).unwrap();
        let rates = ExceedanceRates::from_zetas(vec![0.002, 0.002]).unwrap();
        let thresholds = [300.0, 300.0];
        let m = margins_fixture(&params, &rates, &thresholds);
        let psi = psi2();
        let spec = QuadratureSpec::default();
        let maxima: Vec<ClusterMaximum> = vec![];
        let aug = AugmentedState { clusters: vec![] };
        let mk = |days: f64| LikelihoodContext {
            below_days: days,
            tau_hat: 1.2,
            block_groups: vec![],
        };
        let a = total_log_likelihood(&psi, &m, &maxima, &aug, &mk(100.0), &spec).unwrap();
        let b = total_log_likelihood(&psi, &m, &maxima, &aug, &mk(1000.0), &spec).unwrap();
        assert!(b.total() < a.total());
    }
}
