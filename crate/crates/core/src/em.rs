//! Joint EM estimation of occurrence intensities and reporting delays.

use std::collections::BTreeMap;
use std::io::Write;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::calendar::DayTable;
use crate::chain_ladder::{cl_forecast, development_factors};
use crate::error::{Error, Result};
use crate::glm::{fit_weighted_poisson, FitOptions, TermDesignBuilder};
use crate::reporting::{reporting_m_step, IntraModel, ReportingModel, ReportingSpec};
use crate::terms::{Coefficients, DayCovariates};
use crate::triangle::RunoffTriangle;

pub use crate::reporting::CompleteCounts;

/// Occurrence intensity `lambda_t = e_t exp(x_t' alpha)`, or a free `lambda_t` per day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OccurrenceModel {
    Regression { alpha: Coefficients, covariates: DayCovariates },
    Saturated { lambda: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OccurrenceSpec {
    Regression { covariates: DayCovariates },
    Saturated,
}

impl OccurrenceModel {
    pub fn lambda(&self, table: &DayTable, t: usize, exposure: f64) -> f64 {
        match self {
            OccurrenceModel::Regression { alpha, covariates } => {
                exposure * alpha.linear(&covariates.terms(table.get(t))).exp()
            }
            OccurrenceModel::Saturated { lambda } => lambda[t - 1],
        }
    }
}

/// Occurrence M-step: Poisson regression of `N_t` with offset `log e_t`.
pub fn occurrence_m_step(
    totals: &[f64],
    exposure: &[f64],
    spec: &OccurrenceSpec,
    table: &DayTable,
    previous: Option<&OccurrenceModel>,
) -> Result<OccurrenceModel> {
    match spec {
        OccurrenceSpec::Saturated => Ok(OccurrenceModel::Saturated { lambda: totals.to_vec() }),
        OccurrenceSpec::Regression { covariates } => {
            let mut builder = TermDesignBuilder::new();
            for (i, &e) in exposure.iter().enumerate() {
                builder.push(&covariates.terms(table.get(i + 1)), e.ln(), 1.0);
            }
            let (x, cols) = builder.finish()?;
            let mut opts = FitOptions {
                structural_zeros: true,
                ..Default::default()
            };
            if let Some(OccurrenceModel::Regression { alpha, .. }) = previous {
                opts.start = Some(cols.iter().map(|c| alpha.get(c)).collect());
            }
            let fit = fit_weighted_poisson(&x, totals, &opts)?;
            if !fit.converged {
                warn!("occurrence regression did not converge in {} iterations", fit.iterations);
            }
            Ok(OccurrenceModel::Regression {
                alpha: Coefficients::from_pairs(cols.into_iter().zip(fit.coefficients)),
                covariates: *covariates,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointModel {
    pub occurrence: OccurrenceModel,
    pub reporting: ReportingModel,
    pub tau: usize,
}

/// Occurrence and reporting structures to estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub occurrence: OccurrenceSpec,
    pub reporting: ReportingSpec,
}

impl ModelSpec {
    /// Calendar days needed to evaluate fitted models at evaluation day `tau`.
    pub fn table_horizon(&self, tau: usize) -> usize {
        tau + self.reporting.support(tau).max(tau) + 8
    }

    pub fn day_table(&self, tri: &RunoffTriangle) -> Result<DayTable> {
        DayTable::new(tri.calendar(), self.table_horizon(tri.tau()))
    }
}

impl JointModel {
    pub fn lambdas(&self, tri: &RunoffTriangle, table: &DayTable) -> Vec<f64> {
        (1..=tri.tau())
            .map(|t| self.occurrence.lambda(table, t, tri.exposure_at(t)))
            .collect()
    }

    /// Named parameter values: occurrence, week model (`ln_phi`), intra-week and stationary parts.
    pub fn parameter_map(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        match &self.occurrence {
            OccurrenceModel::Regression { alpha, .. } => {
                for (k, v) in alpha.iter() {
                    out.insert(format!("occurrence:{k}"), *v);
                }
            }
            OccurrenceModel::Saturated { lambda } => {
                for (i, v) in lambda.iter().enumerate() {
                    out.insert(format!("lambda:{}", i + 1), *v);
                }
            }
        }
        match &self.reporting {
            ReportingModel::Weekly { week, intra } => {
                for (k, v) in week.theta.iter() {
                    out.insert(format!("week:{k}"), *v);
                }
                out.insert("week:ln_phi".into(), week.phi.ln());
                match intra {
                    IntraModel::Matrix(m) => {
                        for (i, row) in m.p.iter().enumerate() {
                            for (j, v) in row.iter().enumerate() {
                                out.insert(format!("day:{}:{}", i + 1, j + 1), *v);
                            }
                        }
                    }
                    IntraModel::ReverseTime(rt) => {
                        for (k, v) in rt.gamma.iter() {
                            out.insert(format!("reverse:{k}"), *v);
                        }
                    }
                }
            }
            ReportingModel::Stationary(s) => {
                for (d, v) in s.p.iter().enumerate() {
                    out.insert(format!("p:{d}"), *v);
                }
            }
        }
        out
    }
}

fn max_change(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let mut m: f64 = 0.0;
    for (k, v) in a {
        m = m.max((v - b.get(k).copied().unwrap_or(0.0)).abs());
    }
    for (k, v) in b {
        if !a.contains_key(k) {
            m = m.max(v.abs());
        }
    }
    m
}

/// Observed-data log-likelihood, without the `log N_td!` constants.
pub fn observed_loglik(model: &JointModel, tri: &RunoffTriangle, table: &DayTable) -> Result<f64> {
    let tau = tri.tau();
    let mut ll = 0.0;
    for t in 1..=tau {
        let lambda = model.occurrence.lambda(table, t, tri.exposure_at(t));
        let row = model.reporting.row(table, t, tau - t + 1);
        ll += row_loglik(lambda, &row, tri, t)?;
    }
    Ok(ll)
}

fn row_loglik(lambda: f64, row: &[f64], tri: &RunoffTriangle, t: usize) -> Result<f64> {
    let mass: f64 = row.iter().sum();
    let reported = tri.reported(t) as f64;
    let mut ll = -lambda * mass;
    if reported > 0.0 {
        ll += reported * lambda.ln();
    }
    for &(d, n) in tri.row(t) {
        let p = row[d];
        if p <= 0.0 {
            return Err(Error::ZeroProbability { t, d, count: n as f64 });
        }
        ll += n as f64 * p.ln();
    }
    Ok(ll)
}

/// Expected complete-data counts given the current model.
pub fn e_step(model: &JointModel, tri: &RunoffTriangle, table: &DayTable) -> CompleteCounts {
    let tau = tri.tau();
    let mut expected = Vec::with_capacity(tau);
    let mut remainder = Vec::with_capacity(tau);
    for t in 1..=tau {
        let lambda = model.occurrence.lambda(table, t, tri.exposure_at(t));
        let row = model.reporting.row(table, t, tau);
        let (e, r) = e_step_row(lambda, &row, tri, t);
        expected.push(e);
        remainder.push(r);
    }
    CompleteCounts { tau, expected, remainder }
}

fn e_step_row(lambda: f64, row: &[f64], tri: &RunoffTriangle, t: usize) -> (Vec<f64>, f64) {
    let tau = tri.tau();
    let mut e: Vec<f64> = row.iter().map(|p| lambda * p).collect();
    let observed = tau - t + 1;
    e[..observed].iter_mut().for_each(|v| *v = 0.0);
    for &(d, n) in tri.row(t) {
        e[d] = n as f64;
    }
    (e, lambda * tail_mass(row))
}

/// Probability mass beyond the first `row.len()` delays; rounding residue counts as zero.
pub(crate) fn tail_mass(row: &[f64]) -> f64 {
    let tail = 1.0 - row.iter().sum::<f64>();
    if tail > 1e-12 {
        tail
    } else {
        0.0
    }
}

/// E-step and observed log-likelihood at the same parameters in one pass.
fn e_step_and_loglik(model: &JointModel, tri: &RunoffTriangle, table: &DayTable) -> Result<(CompleteCounts, f64)> {
    let tau = tri.tau();
    let mut expected = Vec::with_capacity(tau);
    let mut remainder = Vec::with_capacity(tau);
    let mut ll = 0.0;
    for t in 1..=tau {
        let lambda = model.occurrence.lambda(table, t, tri.exposure_at(t));
        let row = model.reporting.row(table, t, tau);
        ll += row_loglik(lambda, &row[..tau - t + 1], tri, t)?;
        let (e, r) = e_step_row(lambda, &row, tri, t);
        expected.push(e);
        remainder.push(r);
    }
    Ok((CompleteCounts { tau, expected, remainder }, ll))
}

/// Expected complete-data log-likelihood `Q` up to the `E log N_td!` constants.
///
/// With `include_censoring` the remainder contributes `R_t log sum_{d >= tau} p_td`.
pub fn q_function(
    model: &JointModel,
    counts: &CompleteCounts,
    tri: &RunoffTriangle,
    table: &DayTable,
    include_censoring: bool,
) -> f64 {
    let tau = counts.tau;
    let mut q = 0.0;
    for t in 1..=tau {
        let lambda = model.occurrence.lambda(table, t, tri.exposure_at(t));
        let total = counts.row_total(t);
        q += -lambda + if total > 0.0 { total * lambda.ln() } else { 0.0 };
        let row = model.reporting.row(table, t, tau);
        for (d, &n) in counts.expected[t - 1].iter().enumerate() {
            if n > 0.0 {
                q += n * row[d].ln();
            }
        }
        let r = counts.remainder[t - 1];
        let tail = tail_mass(&row);
        if include_censoring && r > 0.0 && tail > 0.0 {
            q += r * tail.ln();
        }
    }
    q
}

/// Complete-data maximization given expected counts.
pub fn m_step(
    counts: &CompleteCounts,
    spec: &ModelSpec,
    tri: &RunoffTriangle,
    table: &DayTable,
    previous: Option<&JointModel>,
    include_censoring: bool,
) -> Result<JointModel> {
    let totals = counts.row_totals();
    if totals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("expected row totals".into()));
    }
    let occurrence = occurrence_m_step(
        &totals,
        tri.exposure(),
        &spec.occurrence,
        table,
        previous.map(|m| &m.occurrence),
    )?;
    let reporting = reporting_m_step(
        counts,
        &spec.reporting,
        table,
        previous.map(|m| &m.reporting),
        include_censoring,
    )?;
    Ok(JointModel {
        occurrence,
        reporting,
        tau: counts.tau,
    })
}

/// Chain-ladder completion of the triangle: observed cells, development-factor
/// forecasts for the unobserved cells with `d <= tau - 1`, and zero remainder.
pub fn chain_ladder_counts(tri: &RunoffTriangle) -> CompleteCounts {
    let tau = tri.tau();
    let f = development_factors(tri);
    let forecast = cl_forecast(tri, &f);
    let expected = (1..=tau)
        .map(|t| {
            let mut row = tri.row_dense(t);
            row.extend_from_slice(&forecast[t - 1]);
            row
        })
        .collect();
    CompleteCounts {
        tau,
        expected,
        remainder: vec![0.0; tau],
    }
}

pub fn initialize_from_chain_ladder(
    tri: &RunoffTriangle,
    spec: &ModelSpec,
    table: &DayTable,
) -> Result<(CompleteCounts, JointModel)> {
    let counts = chain_ladder_counts(tri);
    let model = m_step(&counts, spec, tri, table, None, false)?;
    Ok((counts, model))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Absolute change in the log-likelihood accepted as convergence.
    pub abs_tol: f64,
    pub include_censoring: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            include_censoring: false,
        }
    }
}

/// Stopping rule `|l_k - l_{k-1}| / |0.1 + l_k| < rel_tol`, or an absolute change below `abs_tol`.
pub fn has_converged(previous: f64, current: f64, rel_tol: f64, abs_tol: f64) -> bool {
    let delta = (current - previous).abs();
    delta / (0.1 + current).abs() < rel_tol || delta < abs_tol
}

/// First iteration of a log-likelihood trace at which the stopping rule fires.
pub fn stopping_iteration(trace: &[f64], rel_tol: f64, abs_tol: f64) -> Option<usize> {
    trace
        .windows(2)
        .position(|w| has_converged(w[0], w[1], rel_tol, abs_tol))
        .map(|i| i + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub observed_loglik: f64,
    pub max_param_change: f64,
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub model: JointModel,
    /// Entry 0 is the chain-ladder start.
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub converged: bool,
    /// Expected counts at the fitted parameters.
    pub counts: CompleteCounts,
    pub loglik: f64,
}

impl EmFit {
    pub fn write_trace<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for e in &self.trace {
            wtr.serialize(e)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Iterate E- and M-steps from the chain-ladder start.
pub fn fit_em(tri: &RunoffTriangle, spec: &ModelSpec, opts: &EmOptions) -> Result<EmFit> {
    let table = spec.day_table(tri)?;
    fit_em_with_table(tri, spec, opts, &table)
}

pub fn fit_em_with_table(tri: &RunoffTriangle, spec: &ModelSpec, opts: &EmOptions, table: &DayTable) -> Result<EmFit> {
    let (_, mut model) = initialize_from_chain_ladder(tri, spec, table)?;
    let mut params = model.parameter_map();
    let (mut next_counts, mut ll) = e_step_and_loglik(&model, tri, table)?;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        observed_loglik: ll,
        max_param_change: f64::NAN,
    }];
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=opts.max_iter {
        iterations = k;
        let new = m_step(&next_counts, spec, tri, table, Some(&model), opts.include_censoring)?;
        let (c, new_ll) = e_step_and_loglik(&new, tri, table)?;
        next_counts = c;
        let new_params = new.parameter_map();
        let change = max_change(&params, &new_params);
        trace.push(TraceEntry {
            iteration: k,
            observed_loglik: new_ll,
            max_param_change: change,
        });
        debug!("em iteration {k}: loglik {new_ll:.10} change {change:.3e}");
        model = new;
        params = new_params;
        let prev_ll = ll;
        ll = new_ll;
        if has_converged(prev_ll, new_ll, opts.rel_tol, opts.abs_tol) {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("EM stopped after {iterations} iterations without meeting the convergence rule");
    }
    Ok(EmFit {
        model,
        trace,
        iterations,
        converged,
        counts: next_counts,
        loglik: ll,
    })
}

#[cfg(test)]
mod tests;
