use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::calendar::{CalendarConfig, DayTable};
use crate::em::JointModel;
use crate::error::{Error, Result};
use crate::glm::special::ln_gamma;
use crate::triangle::RunoffTriangle;

/// Smallest `k` with `P(X <= k) >= prob` for `X ~ Poisson(mean)`, by summing
/// pmf terms in log space from well below the mode.
pub fn poisson_quantile(mean: f64, prob: f64) -> u64 {
    if mean <= 0.0 || prob <= 0.0 {
        return 0;
    }
    let sd = mean.sqrt();
    let start = (mean - 40.0 * sd - 10.0).max(0.0).floor();
    let stop = mean + 60.0 * sd + 60.0;
    let lm = mean.ln();
    let mut k = start;
    let mut lp = k * lm - mean - ln_gamma(k + 1.0);
    let mut cdf = 0.0;
    loop {
        cdf += lp.exp();
        if cdf >= prob || k >= stop {
            return k as u64;
        }
        k += 1.0;
        lp += lm - k.ln();
    }
}

/// Equal-tail Poisson interval at the plug-in mean.
pub fn poisson_interval(mean: f64, level: f64) -> (f64, f64) {
    let tail = (1.0 - level) / 2.0;
    (
        poisson_quantile(mean, tail) as f64,
        poisson_quantile(mean, 1.0 - tail) as f64,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Cell,
    Occurrence,
    ReportingDate,
    Week,
    Month,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::Cell => "cell",
            Grouping::Occurrence => "occurrence",
            Grouping::ReportingDate => "reporting_date",
            Grouping::Week => "week",
            Grouping::Month => "month",
        })
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cell" => Grouping::Cell,
            "occurrence" => Grouping::Occurrence,
            "reporting_date" => Grouping::ReportingDate,
            "week" => Grouping::Week,
            "month" => Grouping::Month,
            _ => return Err(Error::Parse(format!("unknown grouping '{s}'"))),
        })
    }
}

/// Expected unreported counts by occurrence day and by future reporting day.
#[derive(Clone, Debug, Serialize)]
pub struct IbnrSummary {
    pub tau: usize,
    /// `lambda_t p_t^IBNR` for `t = 1..tau`.
    pub by_occurrence: Vec<f64>,
    /// `sum_t lambda_t p_{t, rho - t}` for `rho = tau + 1, ...`.
    pub by_reporting: Vec<f64>,
    pub total: f64,
    /// Part of `total` not attributable to a reporting day within the model support.
    pub beyond_horizon: f64,
}

impl IbnrSummary {
    pub fn compute(model: &JointModel, tri: &RunoffTriangle, table: &DayTable) -> Self {
        let tau = tri.tau();
        let support = model.reporting.support();
        let mut by_occurrence = vec![0.0; tau];
        let mut by_reporting = vec![0.0; support];
        for t in 1..=tau {
            let lambda = model.occurrence.lambda(table, t, tri.exposure_at(t));
            let row = model.reporting.row(table, t, support);
            let seen: f64 = row[..(tau - t + 1).min(support)].iter().sum();
            by_occurrence[t - 1] = lambda * (1.0 - seen).max(0.0);
            for d in tau - t + 1..support {
                by_reporting[t + d - tau - 1] += lambda * row[d];
            }
        }
        while by_reporting.last() == Some(&0.0) {
            by_reporting.pop();
        }
        let total: f64 = by_occurrence.iter().sum();
        let within: f64 = by_reporting.iter().sum();
        Self {
            tau,
            by_occurrence,
            by_reporting,
            total,
            beyond_horizon: (total - within).max(0.0),
        }
    }

    /// Expected events reported on days `tau + 1 ..= horizon`.
    pub fn reported_by(&self, horizon: usize) -> f64 {
        let n = horizon.saturating_sub(self.tau).min(self.by_reporting.len());
        self.by_reporting[..n].iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NowcastGroup {
    pub group_key: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NowcastResult {
    pub tau: usize,
    pub grouping: Grouping,
    pub level: f64,
    pub simultaneous: bool,
    pub groups: Vec<NowcastGroup>,
    pub total: f64,
    pub total_lower: f64,
    pub total_upper: f64,
    pub beyond_horizon: f64,
}

impl NowcastResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for g in &self.groups {
            wtr.serialize(g)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Expected unreported counts per cell, with per-day totals that may include
/// mass not attributable to a cell.
#[derive(Clone, Debug, Serialize)]
pub struct CellForecast {
    pub tau: usize,
    /// `(t, d, mean)` with `t + d > tau`.
    pub cells: Vec<(usize, usize, f64)>,
    /// Expected unreported events per occurrence day `t = 1..tau`.
    pub by_occurrence: Vec<f64>,
}

impl CellForecast {
    pub fn from_model(model: &JointModel, tri: &RunoffTriangle, table: &DayTable) -> Self {
        let tau = tri.tau();
        let summary = IbnrSummary::compute(model, tri, table);
        let support = model.reporting.support();
        let mut cells = Vec::new();
        for t in 1..=tau {
            let lambda = model.occurrence.lambda(table, t, tri.exposure_at(t));
            let row = model.reporting.row(table, t, support);
            for (d, p) in row.iter().enumerate().skip(tau - t + 1) {
                if lambda * p > 0.0 {
                    cells.push((t, d, lambda * p));
                }
            }
        }
        Self {
            tau,
            cells,
            by_occurrence: summary.by_occurrence,
        }
    }
}

/// Point nowcasts per group with Poisson intervals; `simultaneous` applies a
/// Bonferroni adjustment over the groups.
pub fn nowcast(
    model: &JointModel,
    tri: &RunoffTriangle,
    table: &DayTable,
    grouping: Grouping,
    level: f64,
    simultaneous: bool,
) -> Result<NowcastResult> {
    group_forecast(tri.calendar(), &CellForecast::from_model(model, tri, table), grouping, level, simultaneous)
}

pub fn group_forecast(
    cal: &CalendarConfig,
    fc: &CellForecast,
    grouping: Grouping,
    level: f64,
    simultaneous: bool,
) -> Result<NowcastResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level {level} must lie in (0, 1)")));
    }
    let date = |t: usize| cal.date(t);
    let mut means: BTreeMap<String, f64> = BTreeMap::new();
    match grouping {
        Grouping::Occurrence => {
            for (i, v) in fc.by_occurrence.iter().enumerate() {
                means.insert(date(i + 1)?.to_string(), *v);
            }
        }
        Grouping::Cell => {
            for &(t, d, m) in &fc.cells {
                if m > 1e-9 {
                    means.insert(format!("{}|{}", date(t)?, date(t + d)?), m);
                }
            }
        }
        Grouping::ReportingDate | Grouping::Week | Grouping::Month => {
            for &(t, d, m) in &fc.cells {
                let day = date(t + d)?;
                let key = match grouping {
                    Grouping::ReportingDate => day.to_string(),
                    Grouping::Week => {
                        let w = day.iso_week();
                        format!("{:04}-W{:02}", w.year(), w.week())
                    }
                    _ => format!("{:04}-{:02}", day.year(), day.month()),
                };
                *means.entry(key).or_default() += m;
            }
        }
    }
    let m = means.len().max(1) as f64;
    let per_level = if simultaneous { 1.0 - (1.0 - level) / m } else { level };
    let groups = means
        .into_iter()
        .map(|(group_key, mean)| {
            let (lower, upper) = poisson_interval(mean, per_level);
            NowcastGroup {
                group_key,
                mean,
                lower,
                upper,
            }
        })
        .collect();
    let total: f64 = fc.by_occurrence.iter().sum();
    let in_cells: f64 = fc.cells.iter().map(|c| c.2).sum();
    let (total_lower, total_upper) = poisson_interval(total, level);
    Ok(NowcastResult {
        tau: fc.tau,
        grouping,
        level,
        simultaneous,
        groups,
        total,
        total_lower,
        total_upper,
        beyond_horizon: (total - in_cells).max(0.0),
    })
}
