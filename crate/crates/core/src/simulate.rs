//! Synthetic daily panels with known margins and dependence.
//!
//! Extreme days arrive as a Poisson process on the Fréchet-scale region
//! beyond the thresholds, sampled by thinning a radial Pareto proposal;
//! remaining days are sub-threshold filler. A perception-threshold era turns
//! early records into censored observations.

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::angular::DMParams;
use crate::data_model::{Observation, SeriesPanel};
use crate::error::{Error, Result};
use crate::margins::{ExceedanceRates, MarginalModel, MarginalParams};

/// Ground truth of a simulated panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub site_names: Vec<String>,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    /// First day of the fully observed era; days before it are filtered
    /// through the perception thresholds.
    pub recent_from: Option<NaiveDate>,
    pub thresholds: Vec<f64>,
    pub zetas: Vec<f64>,
    pub margins: MarginalParams,
    pub psi: DMParams,
    /// Perception thresholds of the historical era, at or above the model
    /// thresholds.
    pub perception: Vec<f64>,
    pub seed: u64,
}

impl SimConfig {
    pub fn n_days(&self) -> usize {
        (self.end_date - self.start_date).num_days() as usize + 1
    }

    fn validate(&self) -> Result<()> {
        let d = self.site_names.len();
        if d == 0
            || self.thresholds.len() != d
            || self.zetas.len() != d
            || self.perception.len() != d
            || self.margins.n_sites() != d
            || self.psi.dim() != d
        {
            return Err(Error::Config("simulation dimension mismatch".into()));
        }
        if self.end_date < self.start_date {
            return Err(Error::Config("simulation period is empty".into()));
        }
        for j in 0..d {
            if self.perception[j] < self.thresholds[j] {
                return Err(Error::Config(
                    "perception threshold below model threshold".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One emitted extreme day.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtremeDay {
    pub day: usize,
    pub frechet: Vec<f64>,
    pub values: Vec<f64>,
}

/// Emission ledger: everything needed to score a recovery.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub config: SimConfig,
    pub extremes: Vec<ExtremeDay>,
}

/// Simulates a panel plus its ground truth.
pub fn simulate_panel(cfg: &SimConfig) -> Result<(SeriesPanel, SyntheticTruth)> {
    cfg.validate()?;
    let d = cfg.site_names.len();
    let n_days = cfg.n_days();
    let rates = ExceedanceRates::from_zetas(cfg.zetas.clone())?;
    let model = MarginalModel::new(&cfg.margins, &rates, &cfg.thresholds);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Radial proposal beyond r0 = min_j u_j dominates the extreme region:
    // mass d / r0, points r ~ Pareto(r0), w ~ H; keep those crossing some
    // threshold. Same-day points merge by componentwise maximum.
    let r0 = (0..d)
        .map(|j| rates.frechet_thresholds[j])
        .fold(f64::INFINITY, f64::min);
    let mean_points = n_days as f64 * d as f64 / r0;
    let n_points = poisson_draw(mean_points, &mut rng);
    let mut day_extremes: std::collections::BTreeMap<usize, Vec<f64>> =
        std::collections::BTreeMap::new();
    for _ in 0..n_points {
        let r = r0 / (1.0 - rng.gen::<f64>());
        let w = cfg.psi.sample(&mut rng);
        let x: Vec<f64> = w.iter().map(|&wj| r * wj).collect();
        if !x
            .iter()
            .zip(&rates.frechet_thresholds)
            .any(|(&xj, &uj)| xj > uj)
        {
            continue;
        }
        let day = rng.gen_range(0..n_days);
        day_extremes
            .entry(day)
            .and_modify(|cur| {
                for (c, &xi) in cur.iter_mut().zip(&x) {
                    *c = c.max(xi);
                }
            })
            .or_insert(x);
    }

    let recent_start_day = cfg
        .recent_from
        .map(|date| (date - cfg.start_date).num_days().max(0) as usize)
        .unwrap_or(0);

    let mut cells = Vec::with_capacity(n_days * d);
    let mut extremes = Vec::new();
    for day in 0..n_days {
        let frechet = day_extremes.get(&day);
        let mut values = vec![0.0; d];
        for j in 0..d {
            let above = frechet.map_or(false, |x| x[j] > rates.frechet_thresholds[j]);
            values[j] = if above {
                model.frechet_inverse(j, frechet.expect("checked")[j])?
            } else {
                // sub-threshold filler, comfortably below the threshold
                rng.gen::<f64>() * 0.8 * cfg.thresholds[j]
            };
        }
        if let Some(x) = frechet {
            extremes.push(ExtremeDay {
                day,
                frechet: x.clone(),
                values: values.clone(),
            });
        }
        let historical = day < recent_start_day;
        for j in 0..d {
            cells.push(if !historical {
                Observation::exact(values[j])
            } else if values[j] > cfg.perception[j] {
                Observation::exact(values[j])
            } else {
                Observation::interval_censored(0.0, cfg.perception[j])
            });
        }
    }
    let panel = SeriesPanel::new(cfg.site_names.clone(), Some(cfg.start_date), cells)?;
    Ok((
        panel,
        SyntheticTruth {
            config: cfg.clone(),
            extremes,
        },
    ))
}

fn poisson_draw(mean: f64, rng: &mut ChaCha8Rng) -> usize {
    // normal approximation is fine at the rates used here; exact inversion
    // below a modest mean
    if mean > 1000.0 {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        return (mean + mean.sqrt() * z).round().max(0.0) as usize;
    }
    let limit = (-mean).exp();
    let mut product = 1.0;
    let mut count = 0;
    loop {
        product *= rng.gen::<f64>();
        if product < limit {
            return count;
        }
        count += 1;
    }
}

/// Four-site panel shaped like a long Cévennes flood record: a short exact
/// era preceded by three centuries of perception-filtered history.
pub fn make_gardons_lookalike(seed: u64) -> SimConfig {
    let d = 4;
    let psi = {
        use crate::angular::{solve_last_center, DirichletComponent};
        let weights = vec![0.45, 0.55];
        let mu1 = vec![0.31, 0.27, 0.22, 0.20];
        let mu2 = solve_last_center(d, &weights, &[mu1.clone()]).expect("feasible by construction");
        DMParams::new(
            weights,
            vec![
                DirichletComponent::new(mu1, 9.0).expect("valid"),
                DirichletComponent::new(mu2, 14.0).expect("valid"),
            ],
        )
        .expect("constraint holds by construction")
    };
    SimConfig {
        site_names: vec![
            "Saint-Jean".into(),
            "Mialet".into(),
            "Anduze".into(),
            "Ales".into(),
        ],
        start_date: NaiveDate::from_ymd_opt(1604, 9, 10).expect("valid date"),
        end_date: NaiveDate::from_ymd_opt(2010, 12, 31).expect("valid date"),
        recent_from: Some(NaiveDate::from_ymd_opt(1892, 1, 1).expect("valid date")),
        thresholds: vec![300.0, 320.0, 520.0, 380.0],
        zetas: vec![0.0021, 0.0021, 0.0021, 0.0021],
        margins: MarginalParams::new(
            vec![170f64.ln(), 190f64.ln(), 280f64.ln(), 130f64.ln()],
            vec![0.18; 4],
            true,
        )
        .expect("valid margins"),
        psi,
        perception: vec![850.0, 900.0, 1450.0, 1050.0],
        seed,
    }
}
