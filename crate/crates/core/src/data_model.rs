//! Typed representation and ingestion of censored multivariate daily series.
//!
//! Each site-day record is an [`Observation`]: a censoring type plus a value
//! or bounds. Panels are dense `n x d` grids; gaps in the input become
//! [`CensorKind::Missing`] cells.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Censoring type of a daily record. Integer codes are part of the file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CensorKind {
    Missing = 0,
    Exact = 1,
    RightCensored = 2,
    IntervalCensored = 3,
}

impl CensorKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<CensorKind> {
        match code {
            0 => Some(CensorKind::Missing),
            1 => Some(CensorKind::Exact),
            2 => Some(CensorKind::RightCensored),
            3 => Some(CensorKind::IntervalCensored),
            _ => None,
        }
    }
}

/// One site-day record: censoring type, value (exact records only) and bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub kind: CensorKind,
    pub value: Option<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl Observation {
    pub fn missing() -> Observation {
        Observation {
            kind: CensorKind::Missing,
            value: None,
            lower: 0.0,
            upper: f64::INFINITY,
        }
    }

    pub fn exact(value: f64) -> Observation {
        Observation {
            kind: CensorKind::Exact,
            value: Some(value),
            lower: 0.0,
            upper: f64::INFINITY,
        }
    }

    pub fn right_censored(lower: f64) -> Observation {
        Observation {
            kind: CensorKind::RightCensored,
            value: None,
            lower,
            upper: f64::INFINITY,
        }
    }

    pub fn interval_censored(lower: f64, upper: f64) -> Observation {
        Observation {
            kind: CensorKind::IntervalCensored,
            value: None,
            lower,
            upper,
        }
    }

    /// Checks the per-kind field invariants.
    pub fn validate(&self) -> std::result::Result<(), String> {
        match self.kind {
            CensorKind::Exact => {
                match self.value {
                    None => return Err("exact record missing value".into()),
                    Some(v) if !v.is_finite() => return Err("exact value not finite".into()),
                    _ => {}
                }
                if self.upper.is_finite() {
                    return Err("exact record must have infinite upper bound".into());
                }
            }
            CensorKind::RightCensored => {
                if self.value.is_some() {
                    return Err("right-censored record must not carry a value".into());
                }
                if !(self.lower > 0.0) || !self.lower.is_finite() {
                    return Err("right-censored record needs finite lower bound > 0".into());
                }
                if self.upper.is_finite() {
                    return Err("right-censored record must have infinite upper bound".into());
                }
            }
            CensorKind::IntervalCensored => {
                if self.value.is_some() {
                    return Err("interval-censored record must not carry a value".into());
                }
                if !(self.lower >= 0.0) || !self.upper.is_finite() || self.lower > self.upper {
                    return Err("interval-censored record needs 0 <= lower <= upper < inf".into());
                }
            }
            CensorKind::Missing => {
                if self.value.is_some() || self.lower != 0.0 || self.upper.is_finite() {
                    return Err("missing record must carry no information".into());
                }
            }
        }
        Ok(())
    }
}

/// Position of a censored record relative to a declustering threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Above,
    Below,
    Undetermined,
}

/// Classifies a record against a threshold. Exact ties at the threshold count
/// as below: the excess model applies to strict excesses only.
pub fn classify_position(o: &Observation, v: f64) -> Position {
    match o.kind {
        CensorKind::Exact => {
            let y = o.value.expect("exact record carries a value");
            if y > v {
                Position::Above
            } else {
                Position::Below
            }
        }
        CensorKind::RightCensored => {
            if o.lower > v {
                Position::Above
            } else {
                Position::Undetermined
            }
        }
        CensorKind::IntervalCensored => {
            if o.lower > v {
                Position::Above
            } else if o.upper <= v {
                Position::Below
            } else {
                Position::Undetermined
            }
        }
        CensorKind::Missing => Position::Undetermined,
    }
}

/// Dense daily panel of censored observations at `d` sites over `n` days.
///
/// Dates are stored as day offsets from the first date; the first date itself
/// is kept so the CSV writer can restore calendar dates. Immutable after
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPanel {
    site_names: Vec<String>,
    start_date: Option<NaiveDate>,
    n_days: usize,
    cells: Vec<Observation>, // row-major, n_days x d
}

impl SeriesPanel {
    /// Builds a panel from explicit cells (row-major day-major order).
    pub fn new(
        site_names: Vec<String>,
        start_date: Option<NaiveDate>,
        cells: Vec<Observation>,
    ) -> Result<SeriesPanel> {
        let d = site_names.len();
        if d == 0 {
            if !cells.is_empty() {
                return Err(Error::Data("cells present but no sites named".into()));
            }
            return Ok(SeriesPanel {
                site_names,
                start_date,
                n_days: 0,
                cells,
            });
        }
        if cells.len() % d != 0 {
            return Err(Error::Data(format!(
                "cell count {} not divisible by site count {}",
                cells.len(),
                d
            )));
        }
        let n_days = cells.len() / d;
        let panel = SeriesPanel {
            site_names,
            start_date,
            n_days,
            cells,
        };
        for t in 0..panel.n_days {
            for j in 0..d {
                if let Err(msg) = panel.obs(t, j).validate() {
                    return Err(Error::InvalidObservation {
                        date: panel.date_label(t),
                        site: panel.site_names[j].clone(),
                        msg,
                    });
                }
            }
        }
        Ok(panel)
    }

    pub fn n_sites(&self) -> usize {
        self.site_names.len()
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn site_names(&self) -> &[String] {
        &self.site_names
    }

    pub fn start_date(&self) -> Option<NaiveDate> {
        self.start_date
    }

    pub fn obs(&self, day: usize, site: usize) -> &Observation {
        &self.cells[day * self.site_names.len() + site]
    }

    pub fn date_label(&self, day: usize) -> String {
        match self.start_date {
            Some(d0) => (d0 + chrono::Duration::days(day as i64)).to_string(),
            None => format!("day-{day}"),
        }
    }

    /// Panel restricted to days on or after `date`. Used for recent-only fits.
    pub fn truncate_before(&self, date: NaiveDate) -> Result<SeriesPanel> {
        let d0 = self
            .start_date
            .ok_or_else(|| Error::Data("panel has no calendar dates".into()))?;
        let skip = (date - d0).num_days().max(0) as usize;
        if skip >= self.n_days {
            return Err(Error::Data("truncation removes every day".into()));
        }
        let d = self.n_sites();
        SeriesPanel::new(
            self.site_names.clone(),
            Some(d0 + chrono::Duration::days(skip as i64)),
            self.cells[skip * d..].to_vec(),
        )
    }
}

/// Declustering thresholds and run length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub thresholds: Vec<f64>,
    pub run_length: usize,
}

impl ThresholdConfig {
    pub fn new(thresholds: Vec<f64>, run_length: usize) -> Result<ThresholdConfig> {
        if thresholds.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("all thresholds must be > 0".into()));
        }
        if run_length < 1 {
            return Err(Error::Config("run length must be >= 1".into()));
        }
        Ok(ThresholdConfig {
            thresholds,
            run_length,
        })
    }
}

/// Per-site tallies of censoring kinds; indexed by `CensorKind::code()`.
pub type PanelSummary = Vec<[usize; 4]>;

pub fn panel_summary(p: &SeriesPanel) -> PanelSummary {
    let d = p.n_sites();
    let mut counts = vec![[0usize; 4]; d];
    for t in 0..p.n_days() {
        for j in 0..d {
            counts[j][p.obs(t, j).kind.code() as usize] += 1;
        }
    }
    counts
}

fn parse_field(field: &str, what: &str, line: usize) -> Result<Option<f64>> {
    let trimmed = field.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    if trimmed == "+inf" || trimmed == "inf" {
        return Ok(Some(f64::INFINITY));
    }
    trimmed
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse {
            line,
            msg: format!("bad {what} field: {trimmed:?}"),
        })
}

/// Reads the `date,site,kind,value,lower,upper` schema into a panel.
///
/// Absent (date, site) rows become missing observations; sites are ordered as
/// first encountered; the date range is the closed span of dates seen.
pub fn parse_csv<R: Read>(reader: R) -> Result<SeriesPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    {
        let headers = rdr.headers()?;
        let expected = ["date", "site", "kind", "value", "lower", "upper"];
        let got: Vec<&str> = headers.iter().map(|h| h.trim()).collect();
        if got != expected {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {expected:?}, got {got:?}"),
            });
        }
    }

    struct Row {
        date: NaiveDate,
        site: String,
        obs: Observation,
    }

    let mut rows: Vec<Row> = Vec::new();
    let mut site_order: Vec<String> = Vec::new();

    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record?;
        if record.len() != 6 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 6 fields, got {}", record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(record[0].trim(), "%Y-%m-%d").map_err(|_| {
            Error::Parse {
                line,
                msg: format!("bad ISO date: {:?}", &record[0]),
            }
        })?;
        let site = record[1].trim().to_string();
        if site.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty site name".into(),
            });
        }
        let kind_code: u8 = record[2].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad kind code: {:?}", &record[2]),
        })?;
        let kind = CensorKind::from_code(kind_code).ok_or_else(|| Error::Parse {
            line,
            msg: format!("kind code out of range: {kind_code}"),
        })?;
        let value = parse_field(&record[3], "value", line)?;
        let lower = parse_field(&record[4], "lower", line)?.unwrap_or(0.0);
        let upper = parse_field(&record[5], "upper", line)?.unwrap_or(f64::INFINITY);

        let obs = Observation {
            kind,
            value,
            lower,
            upper,
        };
        if let Err(msg) = obs.validate() {
            return Err(Error::InvalidObservation {
                date: date.to_string(),
                site,
                msg,
            });
        }
        if !site_order.contains(&site) {
            site_order.push(site.clone());
        }
        rows.push(Row { date, site, obs });
    }

    if rows.is_empty() {
        return SeriesPanel::new(Vec::new(), None, Vec::new());
    }

    let start = rows.iter().map(|r| r.date).min().unwrap();
    let end = rows.iter().map(|r| r.date).max().unwrap();
    let n_days = (end - start).num_days() as usize + 1;
    let d = site_order.len();
    let site_index: HashMap<&str, usize> = site_order
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let mut cells = vec![Observation::missing(); n_days * d];
    let mut seen = vec![false; n_days * d];
    for row in &rows {
        let t = (row.date - start).num_days() as usize;
        let j = site_index[row.site.as_str()];
        let slot = t * d + j;
        if seen[slot] {
            return Err(Error::Duplicate {
                date: row.date.to_string(),
                site: row.site.clone(),
            });
        }
        seen[slot] = true;
        cells[slot] = row.obs;
    }

    SeriesPanel::new(site_order, Some(start), cells)
}

fn fmt_field(x: f64) -> String {
    if x.is_infinite() {
        "+inf".to_string()
    } else {
        format!("{x}")
    }
}

/// Writes the identical schema back out; `parse_csv` round-trips the result.
pub fn write_csv<W: Write>(p: &SeriesPanel, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["date", "site", "kind", "value", "lower", "upper"])?;
    for t in 0..p.n_days() {
        let date = p.date_label(t);
        for j in 0..p.n_sites() {
            let o = p.obs(t, j);
            wtr.write_record([
                date.as_str(),
                p.site_names()[j].as_str(),
                &o.kind.code().to_string(),
                &o.value.map(|v| format!("{v}")).unwrap_or_default(),
                &fmt_field(o.lower),
                &fmt_field(o.upper),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
