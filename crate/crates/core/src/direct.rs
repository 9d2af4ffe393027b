//! Direct Poisson regressions of the cell counts `N_td` on covariates of the
//! occurrence day, the delay and the reporting day.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::calendar::{DayTable, HolidayClass};
use crate::error::{Error, Result};
use crate::glm::{fit_weighted_poisson, DesignMatrix, FitOptions, FitResult, TermDesignBuilder};
use crate::terms::{Coefficients, DayCovariates, DelayLevel, Term};
use crate::triangle::RunoffTriangle;

pub const DEFAULT_POOL_AFTER: usize = 28;

/// How the occurrence day enters the predictor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectVariant {
    /// Calendar covariates of `t`, with intercept.
    Structured { covariates: DayCovariates },
    /// One free effect per occurrence day.
    PerDay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirectSpec {
    pub variant: DirectVariant,
    pub holiday: bool,
    pub holiday_next: bool,
    pub report_dow: bool,
    /// Delays up to this value get their own level; later ones are pooled by week.
    pub pool_after: usize,
}

impl Default for DirectSpec {
    fn default() -> Self {
        Self::structured()
    }
}

impl DirectSpec {
    pub fn structured() -> Self {
        Self {
            variant: DirectVariant::Structured {
                covariates: DayCovariates::full(),
            },
            holiday: true,
            holiday_next: true,
            report_dow: true,
            pool_after: DEFAULT_POOL_AFTER,
        }
    }

    pub fn per_day() -> Self {
        Self {
            variant: DirectVariant::PerDay,
            ..Self::structured()
        }
    }

    pub fn with_report_dow(self) -> Self {
        Self {
            report_dow: true,
            ..self
        }
    }

    /// Calendar days needed to build and forecast at evaluation day `tau`.
    pub fn table_horizon(&self, tau: usize) -> usize {
        2 * tau + 2
    }

    pub fn day_table(&self, tri: &RunoffTriangle) -> Result<DayTable> {
        DayTable::new(tri.calendar(), self.table_horizon(tri.tau()))
    }

    pub fn cell_terms(&self, table: &DayTable, t: usize, d: usize, out: &mut Vec<Term>) {
        out.clear();
        match self.variant {
            DirectVariant::Structured { covariates } => covariates.push_terms(table.get(t), out),
            DirectVariant::PerDay => out.push(Term::Day(t)),
        }
        let r = table.get(t + d);
        if self.holiday && r.holiday_class != HolidayClass::None {
            out.push(Term::Holiday(r.holiday_class));
        }
        if self.holiday_next {
            let next = table.get(t + d + 1).holiday_class;
            if next != HolidayClass::None {
                out.push(Term::HolidayNext(next));
            }
        }
        if self.report_dow && r.dow != 1 {
            out.push(Term::ReportDow(r.dow));
        }
        let level = DelayLevel::of(d, self.pool_after);
        if !level.is_reference() {
            out.push(Term::Delay(level));
        }
    }
}

/// Design over every cell of the upper triangle, zero cells included, in
/// row-major order `(1,0), (1,1), ..., (tau,0)`.
pub struct DirectDesign {
    pub x: DesignMatrix,
    pub terms: Vec<Term>,
    pub y: Vec<f64>,
    pub cells: Vec<(usize, usize)>,
}

pub fn build_direct_design(tri: &RunoffTriangle, spec: &DirectSpec, table: &DayTable) -> Result<DirectDesign> {
    let tau = tri.tau();
    if table.last_day() < tau + 1 {
        return Err(Error::invalid("day table too short for the direct design"));
    }
    let mut builder = TermDesignBuilder::new();
    let mut y = Vec::with_capacity(tau * (tau + 1) / 2);
    let mut cells = Vec::with_capacity(y.capacity());
    let mut terms = Vec::new();
    for t in 1..=tau {
        let offset = tri.exposure_at(t).ln();
        let dense = tri.row_dense(t);
        for (d, n) in dense.iter().enumerate() {
            spec.cell_terms(table, t, d, &mut terms);
            builder.push(&terms, offset, 1.0);
            y.push(*n);
            cells.push((t, d));
        }
    }
    let (x, terms) = builder.finish()?;
    Ok(DirectDesign { x, terms, y, cells })
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectFit {
    pub spec: DirectSpec,
    pub tau: usize,
    pub coefficients: Coefficients,
    pub fit: FitResult,
    /// Coefficients fixed at the structural bound because their cells are all zero.
    pub separated: Vec<String>,
    /// Occurrence days whose `exp(alpha_t)` exceeds ten times the median.
    pub inflated_days: Vec<usize>,
}

pub fn fit_direct(tri: &RunoffTriangle, spec: &DirectSpec, table: &DayTable) -> Result<DirectFit> {
    let design = build_direct_design(tri, spec, table)?;
    let opts = FitOptions {
        structural_zeros: true,
        ..Default::default()
    };
    let fit = fit_weighted_poisson(&design.x, &design.y, &opts)?;
    if !fit.converged {
        warn!("direct regression did not converge in {} iterations", fit.iterations);
    }
    let separated: Vec<String> = fit.structural.iter().map(|&j| fit.names[j].clone()).collect();
    if !separated.is_empty() {
        warn!("direct regression: {} separated coefficients fixed", separated.len());
    }
    let coefficients = Coefficients::from_pairs(design.terms.iter().copied().zip(fit.coefficients.iter().copied()));
    let inflated_days = match spec.variant {
        DirectVariant::PerDay => inflated(&coefficients, tri.tau()),
        DirectVariant::Structured { .. } => Vec::new(),
    };
    if !inflated_days.is_empty() {
        warn!("direct regression: inflated day effects at {:?}", inflated_days);
    }
    Ok(DirectFit {
        spec: *spec,
        tau: tri.tau(),
        coefficients,
        fit,
        separated,
        inflated_days,
    })
}

fn inflated(coefs: &Coefficients, tau: usize) -> Vec<usize> {
    let mut alpha: Vec<f64> = (1..=tau).map(|t| coefs.get(&Term::Day(t))).collect();
    let values = alpha.clone();
    alpha.sort_by(f64::total_cmp);
    let mid = alpha.len() / 2;
    let median = if alpha.len() % 2 == 1 {
        alpha[mid]
    } else {
        0.5 * (alpha[mid - 1] + alpha[mid])
    };
    let bound = median + 10f64.ln();
    values
        .iter()
        .enumerate()
        .filter(|(_, a)| **a > bound)
        .map(|(i, _)| i + 1)
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectNowcast {
    pub tau: usize,
    /// `(t, d, mean)` for unreported cells with `d <= tau - 1`.
    pub cells: Vec<(usize, usize, f64)>,
    pub by_occurrence: Vec<f64>,
    pub total: f64,
    /// Cells whose delay level was never estimated.
    pub skipped: Vec<(usize, usize)>,
    /// Reporting-day terms absent from the fit, treated as reference levels.
    pub unseen_terms: Vec<String>,
}

impl DirectNowcast {
    /// Expected events reported on days `tau + 1 ..= horizon`.
    pub fn reported_by(&self, horizon: usize) -> f64 {
        self.cells
            .iter()
            .filter(|(t, d, _)| t + d <= horizon)
            .map(|(_, _, m)| m)
            .sum()
    }
}

pub fn nowcast_direct(fit: &DirectFit, tri: &RunoffTriangle, table: &DayTable) -> Result<DirectNowcast> {
    let tau = tri.tau();
    if fit.tau != tau {
        return Err(Error::invalid(format!("fit at day {} used with triangle at day {tau}", fit.tau)));
    }
    if table.last_day() < 2 * tau {
        return Err(Error::invalid("day table too short for the direct nowcast"));
    }
    let known: BTreeSet<Term> = fit.coefficients.iter().map(|(k, _)| *k).collect();
    let mut unseen = BTreeSet::new();
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    let mut by_occurrence = vec![0.0; tau];
    let mut terms = Vec::new();
    for t in 1..=tau {
        let offset = tri.exposure_at(t).ln();
        for d in tau - t + 1..tau {
            fit.spec.cell_terms(table, t, d, &mut terms);
            let mut skip = false;
            for term in &terms {
                if !known.contains(term) {
                    match term {
                        Term::Delay(_) | Term::Day(_) => skip = true,
                        other => {
                            unseen.insert(other.to_string());
                        }
                    }
                }
            }
            if skip {
                skipped.push((t, d));
                continue;
            }
            let m = (offset + fit.coefficients.linear(&terms)).exp();
            by_occurrence[t - 1] += m;
            cells.push((t, d, m));
        }
    }
    if !skipped.is_empty() {
        warn!("direct nowcast skipped {} cells with unestimated delay levels", skipped.len());
    }
    Ok(DirectNowcast {
        tau,
        total: by_occurrence.iter().sum(),
        cells,
        by_occurrence,
        skipped,
        unseen_terms: unseen.into_iter().collect(),
    })
}
