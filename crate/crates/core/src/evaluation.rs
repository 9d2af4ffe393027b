//! Out-of-time evaluation: realized IBNR counts, single-date backtests and
//! moving windows over a range of evaluation dates.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::CalendarConfig;
use crate::chain_ladder::{fit_cl_em, fit_yearly_cl};
use crate::direct::{fit_direct, nowcast_direct, DirectSpec, DirectVariant, DEFAULT_POOL_AFTER};
use crate::em::{fit_em_with_table, EmOptions, ModelSpec, OccurrenceSpec};
use crate::error::{Error, Result};
use crate::inference::{poisson_interval, IbnrSummary};
use crate::reporting::{ReportingSpec, ReverseTimeCovariates, DEFAULT_W_MAX};
use crate::terms::DayCovariates;
use crate::triangle::{EventRecord, RunoffTriangle};

/// Model specifications compared in backtests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecName {
    EmMatrix,
    EmReverseTime,
    ChainLadder,
    YearlyCl,
    DirectStructured,
    DirectPerDay,
}

impl SpecName {
    pub const ALL: [SpecName; 6] = [
        SpecName::EmMatrix,
        SpecName::EmReverseTime,
        SpecName::ChainLadder,
        SpecName::YearlyCl,
        SpecName::DirectStructured,
        SpecName::DirectPerDay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpecName::EmMatrix => "em_matrix",
            SpecName::EmReverseTime => "em_reverse_time",
            SpecName::ChainLadder => "chain_ladder",
            SpecName::YearlyCl => "yearly_cl",
            SpecName::DirectStructured => "direct_structured",
            SpecName::DirectPerDay => "direct_per_day",
        }
    }

    /// Parse a comma-separated list; `all` selects every specification.
    pub fn parse_list(s: &str) -> Result<Vec<SpecName>> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        s.split(',').map(|x| x.trim().parse()).collect()
    }
}

impl fmt::Display for SpecName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpecName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown model spec '{s}'")))
    }
}

/// Options shared by all specifications in a backtest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub include_censoring: bool,
    pub w_max: usize,
    pub level: f64,
    pub max_iter: usize,
    /// Period length of the yearly chain ladder, in days.
    pub period_len: usize,
    pub pool_after: usize,
    pub occurrence: DayCovariates,
    pub week: DayCovariates,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            include_censoring: false,
            w_max: DEFAULT_W_MAX,
            level: 0.95,
            max_iter: EmOptions::default().max_iter,
            period_len: 365,
            pool_after: DEFAULT_POOL_AFTER,
            occurrence: DayCovariates::full(),
            week: DayCovariates::full(),
        }
    }
}

impl EvalSettings {
    /// Joint-model specification for the EM-based names.
    pub fn model_spec(&self, name: SpecName) -> Option<ModelSpec> {
        let reporting = match name {
            SpecName::EmMatrix => ReportingSpec::WeeklyMatrix {
                week: self.week,
                w_max: self.w_max,
                floor: 0.0,
            },
            SpecName::EmReverseTime => ReportingSpec::WeeklyReverseTime {
                week: self.week,
                w_max: self.w_max,
                reverse: ReverseTimeCovariates::default(),
            },
            _ => return None,
        };
        Some(ModelSpec {
            occurrence: OccurrenceSpec::Regression {
                covariates: self.occurrence,
            },
            reporting,
        })
    }

    pub fn direct_spec(&self, name: SpecName) -> Option<DirectSpec> {
        let base = match name {
            SpecName::DirectStructured => DirectSpec::structured(),
            SpecName::DirectPerDay => DirectSpec::per_day(),
            _ => return None,
        };
        let variant = match base.variant {
            DirectVariant::Structured { .. } => DirectVariant::Structured {
                covariates: self.occurrence,
            },
            v => v,
        };
        Some(DirectSpec {
            variant,
            pool_after: self.pool_after,
            ..base
        })
    }

    pub fn em_options(&self) -> EmOptions {
        EmOptions {
            max_iter: self.max_iter,
            include_censoring: self.include_censoring,
            ..Default::default()
        }
    }
}

/// Events that occurred by `tau_star` and are reported in `(tau_star, horizon]`.
pub fn actual_ibnr(events: &[EventRecord], tau_star: usize, horizon: usize) -> u64 {
    events
        .iter()
        .filter(|e| e.occurrence_day <= tau_star && e.report_day() > tau_star && e.report_day() <= horizon)
        .count() as u64
}

/// Triangle at `tau_star` holding exactly the events with `t + d <= tau_star`.
pub fn rebuild_triangle(
    events: &[EventRecord],
    tau_star: usize,
    exposure: &[f64],
    cal: &CalendarConfig,
) -> Result<RunoffTriangle> {
    if tau_star == 0 || tau_star > exposure.len() {
        return Err(Error::invalid(format!(
            "evaluation day {tau_star} outside the exposure range 1..={}",
            exposure.len()
        )));
    }
    let seen: Vec<EventRecord> = events.iter().filter(|e| e.report_day() <= tau_star).copied().collect();
    RunoffTriangle::aggregate_events(&seen, tau_star, exposure[..tau_star].to_vec(), cal.clone())
}

/// Total nowcast of one specification at one evaluation date.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpecNowcast {
    /// Expected events reported in `(tau, horizon]`.
    pub predicted: f64,
    /// Expected events reported after `tau`, without the horizon bound.
    pub unbounded: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Fit a named specification and nowcast the horizon-bounded IBNR total.
///
/// The yearly chain ladder has no reporting-date split, so its prediction is
/// the unbounded period total.
pub fn fit_and_nowcast(
    tri: &RunoffTriangle,
    name: SpecName,
    settings: &EvalSettings,
    horizon: usize,
) -> Result<SpecNowcast> {
    let tau = tri.tau();
    if tri.total() == 0 {
        return Err(Error::invalid(format!("no events observed by day {tau}")));
    }
    let (predicted, unbounded) = match name {
        SpecName::EmMatrix | SpecName::EmReverseTime => {
            let spec = settings.model_spec(name).expect("EM spec");
            let table = spec.day_table(tri)?;
            let fit = fit_em_with_table(tri, &spec, &settings.em_options(), &table)?;
            if !fit.converged {
                warn!("{name} at day {tau}: EM stopped after {} iterations", fit.iterations);
            }
            let s = IbnrSummary::compute(&fit.model, tri, &table);
            (s.reported_by(horizon), s.total)
        }
        SpecName::ChainLadder => {
            let fit = fit_cl_em(tri)?;
            let mut bounded = 0.0;
            let mut total = 0.0;
            for t in 1..=tau {
                for d in tau - t + 1..tau {
                    let m = fit.lambda[t - 1] * fit.p[d];
                    total += m;
                    if t + d <= horizon {
                        bounded += m;
                    }
                }
            }
            (bounded, total)
        }
        SpecName::YearlyCl => {
            let fit = fit_yearly_cl(tri, settings.period_len)?;
            let total = fit.total_ibnr();
            (total, total)
        }
        SpecName::DirectStructured | SpecName::DirectPerDay => {
            let spec = settings.direct_spec(name).expect("direct spec");
            let table = spec.day_table(tri)?;
            let fit = fit_direct(tri, &spec, &table)?;
            let now = nowcast_direct(&fit, tri, &table)?;
            (now.reported_by(horizon), now.total)
        }
    };
    // Sums of zero cells can come out as -0.0.
    let predicted = predicted + 0.0;
    if !predicted.is_finite() {
        return Err(Error::NonFinite(format!("{name} nowcast at day {tau}")));
    }
    let (lower, upper) = poisson_interval(predicted, settings.level);
    Ok(SpecNowcast {
        predicted,
        unbounded,
        lower,
        upper,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestRow {
    pub eval_date: String,
    pub spec_name: String,
    pub actual: u64,
    pub predicted: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
    pub fit_seconds: f64,
    pub horizon: String,
    /// Empty unless the fit failed.
    pub error: String,
}

impl BacktestRow {
    pub fn failed(&self) -> bool {
        !self.error.is_empty()
    }
}

/// Evaluation days `from, from + step, ..., <= to`.
pub fn eval_days(from: usize, to: usize, step: usize) -> Result<Vec<usize>> {
    if step == 0 || from == 0 || from > to {
        return Err(Error::invalid(format!("bad evaluation range {from}..={to} step {step}")));
    }
    Ok((from..=to).step_by(step).collect())
}

/// What to evaluate in a moving window.
#[derive(Clone, Debug)]
pub struct BacktestPlan {
    pub specs: Vec<SpecName>,
    pub days: Vec<usize>,
    /// Last reporting day counted in the realized IBNR.
    pub horizon: usize,
    pub settings: EvalSettings,
    pub workers: usize,
}

/// Refit every specification at every evaluation day and compare with the
/// realized late reports up to the horizon. Days run on a pool of
/// `plan.workers` threads; rows come back in date order.
pub fn moving_window(
    events: &[EventRecord],
    exposure: &[f64],
    cal: &CalendarConfig,
    plan: &BacktestPlan,
) -> Result<Vec<BacktestRow>> {
    let BacktestPlan {
        specs,
        days,
        horizon,
        settings,
        workers,
    } = plan;
    let (horizon, workers) = (*horizon, *workers);
    if let Some(&last) = days.iter().max() {
        if last > horizon {
            return Err(Error::invalid(format!("evaluation day {last} after the horizon {horizon}")));
        }
    }
    let horizon_date = cal.date(horizon)?.to_string();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let per_day: Vec<Result<Vec<BacktestRow>>> = pool.install(|| {
        days.par_iter()
            .map(|&tau| {
                let date = cal.date(tau)?.to_string();
                let actual = actual_ibnr(events, tau, horizon);
                let tri = rebuild_triangle(events, tau, exposure, cal);
                let mut rows = Vec::with_capacity(specs.len());
                for &name in specs {
                    let start = Instant::now();
                    let outcome = tri.as_ref().map_err(|e| e.to_string()).and_then(|tri| {
                        fit_and_nowcast(tri, name, settings, horizon).map_err(|e| e.to_string())
                    });
                    let fit_seconds = start.elapsed().as_secs_f64();
                    let row = match outcome {
                        Ok(n) => BacktestRow {
                            eval_date: date.clone(),
                            spec_name: name.to_string(),
                            actual,
                            predicted: n.predicted,
                            lower: n.lower,
                            upper: n.upper,
                            covered: n.lower <= actual as f64 && actual as f64 <= n.upper,
                            fit_seconds,
                            horizon: horizon_date.clone(),
                            error: String::new(),
                        },
                        Err(e) => {
                            warn!("{name} at {date}: {e}");
                            BacktestRow {
                                eval_date: date.clone(),
                                spec_name: name.to_string(),
                                actual,
                                predicted: f64::NAN,
                                lower: f64::NAN,
                                upper: f64::NAN,
                                covered: false,
                                fit_seconds,
                                horizon: horizon_date.clone(),
                                error: e,
                            }
                        }
                    };
                    rows.push(row);
                }
                info!("evaluated {date}");
                Ok(rows)
            })
            .collect()
    });
    let mut out = Vec::with_capacity(days.len() * specs.len());
    for r in per_day {
        out.extend(r?);
    }
    Ok(out)
}

pub fn write_backtest_csv<W: Write>(rows: &[BacktestRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecSummary {
    pub spec_name: String,
    pub dates: usize,
    pub failures: usize,
    /// Mean absolute percentage error of the total, over dates with a positive actual count.
    pub mape_percent: f64,
    pub coverage: f64,
}

/// Per-specification error and coverage, in order of first appearance.
pub fn summarize(rows: &[BacktestRow]) -> Vec<SpecSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.spec_name.as_str()) {
            names.push(&r.spec_name);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let mine: Vec<&BacktestRow> = rows.iter().filter(|r| r.spec_name == name).collect();
            let ok: Vec<&&BacktestRow> = mine.iter().filter(|r| !r.failed()).collect();
            let ape: Vec<f64> = ok
                .iter()
                .filter(|r| r.actual > 0)
                .map(|r| (r.predicted - r.actual as f64).abs() / r.actual as f64)
                .collect();
            let mape = if ape.is_empty() {
                f64::NAN
            } else {
                100.0 * ape.iter().sum::<f64>() / ape.len() as f64
            };
            let coverage = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().filter(|r| r.covered).count() as f64 / ok.len() as f64
            };
            SpecSummary {
                spec_name: name.to_string(),
                dates: mine.len(),
                failures: mine.len() - ok.len(),
                mape_percent: mape,
                coverage,
            }
        })
        .collect()
}
