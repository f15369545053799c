//! Multivariate run declustering of censored panels.
//!
//! A cluster opens on the first day any site is above its threshold and
//! closes after `run_length` consecutive days with no site above; the trailing
//! quiet days are excluded from the cluster range. Non-cluster days are split
//! into fully-below days, fully-missing days, and homogeneous undetermined
//! blocks that contribute void probabilities to the likelihood.

use serde::{Deserialize, Serialize};

use crate::data_model::{
    classify_position, CensorKind, Observation, Position, SeriesPanel, ThresholdConfig,
};
use crate::error::{Error, Result};

/// Contiguous day range (inclusive) containing at least one excess.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cluster {
    pub start: usize,
    pub end: usize,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Componentwise cluster maximum with merged censoring types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMaximum {
    pub start_day: usize,
    pub coords: Vec<Observation>,
}

/// Run of consecutive non-cluster days sharing identical information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndeterminedBlock {
    pub start_day: usize,
    pub length: usize,
    /// Per-site least upper bound valid on every day of the block. Bounds
    /// below threshold are clamped at the likelihood stage, not here.
    pub upper_bounds: Vec<f64>,
}

/// Full declustering output: the exact partition of the panel's days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclusterSummary {
    pub clusters: Vec<ClusterMaximum>,
    pub blocks: Vec<UndeterminedBlock>,
    pub below_days: usize,
    pub missing_days: usize,
    pub cluster_days: usize,
    pub mean_cluster_size: f64,
    pub n_days: usize,
    pub n_sites: usize,
}

fn any_above(p: &SeriesPanel, c: &ThresholdConfig, day: usize) -> bool {
    (0..p.n_sites())
        .any(|j| classify_position(p.obs(day, j), c.thresholds[j]) == Position::Above)
}

/// Run declustering over the joint (any-site) excess indicator.
pub fn extract_clusters(p: &SeriesPanel, c: &ThresholdConfig) -> Result<Vec<Cluster>> {
    if c.thresholds.len() != p.n_sites() {
        return Err(Error::Config(format!(
            "threshold count {} does not match site count {}",
            c.thresholds.len(),
            p.n_sites()
        )));
    }
    Ok(run_clusters(p.n_days(), |t| any_above(p, c, t), c.run_length))
}

/// Generic run rule: clusters span the first to the last active day, closing
/// after `tau` consecutive inactive days.
fn run_clusters<F: Fn(usize) -> bool>(n: usize, active: F, tau: usize) -> Vec<Cluster> {
    let mut clusters = Vec::new();
    let mut open: Option<(usize, usize)> = None; // (start, last_active)
    let mut quiet = 0usize;
    for t in 0..n {
        if active(t) {
            match open {
                Some((_, ref mut last)) => *last = t,
                None => open = Some((t, t)),
            }
            quiet = 0;
        } else if let Some((start, last)) = open {
            quiet += 1;
            if quiet >= tau {
                clusters.push(Cluster { start, end: last });
                open = None;
                quiet = 0;
            }
        }
    }
    if let Some((start, last)) = open {
        clusters.push(Cluster { start, end: last });
    }
    clusters
}

/// Componentwise maximum over a cluster with the type-merging priority:
/// exact beats bounds, finite intervals beat lower bounds, anything beats
/// missing.
pub fn cluster_maximum(p: &SeriesPanel, cl: &Cluster) -> ClusterMaximum {
    let d = p.n_sites();
    let mut coords = Vec::with_capacity(d);
    for j in 0..d {
        let mut y_max = f64::NEG_INFINITY; // max of exact values
        let mut l_max = 0.0f64; // max of censored lower bounds
        let mut r_max = 0.0f64; // max of censored upper bounds
        let mut saw_exact = false;
        let mut saw_censored = false;
        for t in cl.start..=cl.end {
            let o = p.obs(t, j);
            match o.kind {
                CensorKind::Exact => {
                    saw_exact = true;
                    y_max = y_max.max(o.value.expect("exact value"));
                }
                CensorKind::RightCensored => {
                    saw_censored = true;
                    l_max = l_max.max(o.lower);
                    r_max = f64::INFINITY;
                }
                CensorKind::IntervalCensored => {
                    saw_censored = true;
                    l_max = l_max.max(o.lower);
                    r_max = r_max.max(o.upper);
                }
                CensorKind::Missing => {}
            }
        }
        let obs = if saw_exact && (!saw_censored || y_max > l_max) {
            Observation::exact(y_max)
        } else if saw_censored && l_max < r_max && r_max.is_finite() {
            Observation::interval_censored(l_max.max(0.0), r_max)
        } else if saw_censored && l_max > 0.0 {
            Observation::right_censored(l_max)
        } else {
            Observation::missing()
        };
        coords.push(obs);
    }
    ClusterMaximum {
        start_day: cl.start,
        coords,
    }
}

/// Replaces below-threshold coordinates by interval censoring at `[0, v_j]`,
/// so the marginal model below threshold never has to be estimated.
pub fn censor_below_threshold(cm: &ClusterMaximum, c: &ThresholdConfig) -> ClusterMaximum {
    let coords = cm
        .coords
        .iter()
        .zip(&c.thresholds)
        .map(|(o, &v)| match classify_position(o, v) {
            Position::Below => Observation::interval_censored(0.0, v),
            _ => *o,
        })
        .collect();
    ClusterMaximum {
        start_day: cm.start_day,
        coords,
    }
}

/// Day-wise upper bound used for block void probabilities.
fn day_upper_bound(o: &Observation) -> f64 {
    match o.kind {
        CensorKind::Exact => o.value.expect("exact value"),
        CensorKind::IntervalCensored => o.upper,
        CensorKind::RightCensored | CensorKind::Missing => f64::INFINITY,
    }
}

/// Splits non-cluster days into undetermined blocks, fully-below days, and
/// fully-missing days.
pub fn partition_undetermined(
    p: &SeriesPanel,
    clusters: &[Cluster],
    c: &ThresholdConfig,
) -> Result<(Vec<UndeterminedBlock>, usize, usize)> {
    let d = p.n_sites();
    let mut in_cluster = vec![false; p.n_days()];
    for cl in clusters {
        for slot in &mut in_cluster[cl.start..=cl.end] {
            *slot = true;
        }
    }

    let mut blocks: Vec<UndeterminedBlock> = Vec::new();
    let mut below_days = 0usize;
    let mut missing_days = 0usize;
    // Current open block: (start, length, per-site day tuples).
    let mut open: Option<(usize, usize, Vec<Observation>)> = None;

    for t in 0..p.n_days() {
        if in_cluster[t] {
            flush_block(&mut open, &mut blocks);
            continue;
        }
        let mut all_below = true;
        let mut all_missing = true;
        for j in 0..d {
            let o = p.obs(t, j);
            if classify_position(o, c.thresholds[j]) != Position::Below {
                all_below = false;
            }
            if o.kind != CensorKind::Missing {
                all_missing = false;
            }
        }
        if all_below {
            below_days += 1;
            flush_block(&mut open, &mut blocks);
        } else if all_missing {
            missing_days += 1;
            flush_block(&mut open, &mut blocks);
        } else {
            let tuples: Vec<Observation> = (0..d).map(|j| *p.obs(t, j)).collect();
            match open {
                Some((_, ref mut len, ref prev)) if *prev == tuples => {
                    *len += 1;
                }
                _ => {
                    flush_block(&mut open, &mut blocks);
                    open = Some((t, 1, tuples));
                }
            }
        }
    }
    flush_block(&mut open, &mut blocks);
    Ok((blocks, below_days, missing_days))
}

fn flush_block(
    open: &mut Option<(usize, usize, Vec<Observation>)>,
    blocks: &mut Vec<UndeterminedBlock>,
) {
    if let Some((start, length, tuples)) = open.take() {
        blocks.push(UndeterminedBlock {
            start_day: start,
            length,
            upper_bounds: tuples.iter().map(day_upper_bound).collect(),
        });
    }
}

/// Univariate run clusters at one site; shared with the exceedance-rate
/// estimator.
pub(crate) fn univariate_clusters(
    p: &SeriesPanel,
    site: usize,
    threshold: f64,
    tau: usize,
) -> Vec<Cluster> {
    run_clusters(
        p.n_days(),
        |t| classify_position(p.obs(t, site), threshold) == Position::Above,
        tau,
    )
}

/// Empirical mean cluster size: per-site intra-cluster days over cluster
/// count from univariate declustering, averaged across sites with excesses.
pub fn mean_cluster_size(p: &SeriesPanel, c: &ThresholdConfig) -> Result<f64> {
    let mut per_site = Vec::new();
    for j in 0..p.n_sites() {
        let clusters = univariate_clusters(p, j, c.thresholds[j], c.run_length);
        if clusters.is_empty() {
            continue;
        }
        let days: usize = clusters.iter().map(Cluster::len).sum();
        per_site.push(days as f64 / clusters.len() as f64);
    }
    if per_site.is_empty() {
        return Err(Error::Data("no excesses at given thresholds".into()));
    }
    Ok(per_site.iter().sum::<f64>() / per_site.len() as f64)
}

/// Full declustering pipeline: censored cluster maxima plus the exact
/// partition of the remaining days.
pub fn decluster(p: &SeriesPanel, c: &ThresholdConfig) -> Result<DeclusterSummary> {
    let clusters = extract_clusters(p, c)?;
    let maxima: Vec<ClusterMaximum> = clusters
        .iter()
        .map(|cl| censor_below_threshold(&cluster_maximum(p, cl), c))
        .collect();
    let (blocks, below_days, missing_days) = partition_undetermined(p, &clusters, c)?;
    let cluster_days: usize = clusters.iter().map(Cluster::len).sum();
    let mean_cluster_size = if clusters.is_empty() {
        1.0
    } else {
        mean_cluster_size(p, c)?
    };
    Ok(DeclusterSummary {
        clusters: maxima,
        blocks,
        below_days,
        missing_days,
        cluster_days,
        mean_cluster_size,
        n_days: p.n_days(),
        n_sites: p.n_sites(),
    })
}
