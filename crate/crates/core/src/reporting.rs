//! Reporting-delay probabilities `p_td` and the reporting M-step.
//!
//! Three structures are supported: a negative binomial week model combined
//! with either a 7×7 intra-week matrix or a reverse-time logit model for the
//! day within the reporting week, and a stationary delay vector.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::calendar::{wday_level, DayFeatures, DayTable, HolidayClass};
use crate::error::{Error, Result};
use crate::glm::special::sigmoid;
use crate::glm::{fit_weighted_logistic, fit_weighted_negbin, FitOptions, TermDesignBuilder};
use crate::terms::{Coefficients, DayCovariates, Term};

/// Estimated day probabilities from the insurance case study, rows Monday..Sunday,
/// columns wday1..wday5, Saturday, Sunday (rounded to three decimals).
pub const CASE_STUDY_DAY_PROBABILITIES: [[f64; 7]; 7] = [
    [0.271, 0.331, 0.171, 0.119, 0.100, 0.008, 0.000],
    [0.282, 0.342, 0.158, 0.118, 0.090, 0.011, 0.000],
    [0.286, 0.316, 0.180, 0.112, 0.095, 0.011, 0.000],
    [0.278, 0.337, 0.156, 0.114, 0.097, 0.019, 0.000],
    [0.303, 0.264, 0.160, 0.120, 0.096, 0.057, 0.000],
    [0.389, 0.211, 0.148, 0.109, 0.097, 0.046, 0.000],
    [0.407, 0.222, 0.157, 0.109, 0.096, 0.009, 0.000],
];

pub const DEFAULT_W_MAX: usize = 104;

/// Expected complete-data counts for one E-step.
#[derive(Clone, Debug, PartialEq)]
pub struct CompleteCounts {
    pub tau: usize,
    /// `expected[t - 1][d]` for `d = 0..tau`.
    pub expected: Vec<Vec<f64>>,
    /// Expected count reported with delay `>= tau`, per occurrence day.
    pub remainder: Vec<f64>,
}

impl CompleteCounts {
    /// `N_t` including the remainder.
    pub fn row_total(&self, t: usize) -> f64 {
        self.expected[t - 1].iter().sum::<f64>() + self.remainder[t - 1]
    }

    pub fn row_totals(&self) -> Vec<f64> {
        (1..=self.tau).map(|t| self.row_total(t)).collect()
    }
}

/// Negative binomial probabilities for weeks `0..w_max`, with the survival
/// mass `P(W >= w_max)` in the final entry.
pub fn nb_week_probabilities(mu: f64, phi: f64, w_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w_max + 1);
    let log_ratio = (mu / (phi + mu)).ln();
    let mut lp = -phi * (mu / phi).ln_1p();
    let mut cum = 0.0;
    for w in 0..w_max {
        let p = lp.exp();
        out.push(p);
        cum += p;
        lp += (phi + w as f64).ln() - ((w + 1) as f64).ln() + log_ratio;
    }
    out.push((1.0 - cum).max(0.0));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeekDelayModel {
    pub theta: Coefficients,
    pub phi: f64,
    pub w_max: usize,
    pub covariates: DayCovariates,
}

impl WeekDelayModel {
    pub fn mu(&self, f: &DayFeatures) -> f64 {
        self.log_mu(f).exp()
    }

    pub fn log_mu(&self, f: &DayFeatures) -> f64 {
        self.theta.linear(&self.covariates.terms(f))
    }

    /// `p^W_tw`; `w = w_max` returns the survival mass and larger `w` zero.
    pub fn week_probability(&self, f: &DayFeatures, w: usize) -> f64 {
        if w > self.w_max {
            return 0.0;
        }
        nb_week_probabilities(self.mu(f), self.phi, self.w_max)[w]
    }

    pub fn week_vector(&self, f: &DayFeatures) -> Vec<f64> {
        nb_week_probabilities(self.mu(f), self.phi, self.w_max)
    }
}

/// Row-stochastic 7×7 matrix of day probabilities within the reporting week.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntraWeekMatrix {
    /// Rows: occurrence day of week Monday..Sunday; columns: wday1..wday5, Saturday, Sunday.
    pub p: [[f64; 7]; 7],
}

impl IntraWeekMatrix {
    /// Validate entries and renormalize rows to sum to one.
    pub fn new(mut p: [[f64; 7]; 7]) -> Result<Self> {
        for (i, row) in p.iter_mut().enumerate() {
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid(format!("day probability row {} has invalid entries", i + 1)));
            }
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(Error::invalid(format!("day probability row {} sums to zero", i + 1)));
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        Ok(Self { p })
    }

    pub fn uniform() -> Self {
        Self { p: [[1.0 / 7.0; 7]; 7] }
    }

    pub fn case_study() -> Self {
        Self::new(CASE_STUDY_DAY_PROBABILITIES).expect("valid table")
    }

    /// Probabilities by offset `j = 0..7` within the week for occurrence day of week `dow`.
    pub fn by_offset(&self, dow: u8) -> [f64; 7] {
        let row = &self.p[dow as usize - 1];
        let mut out = [0.0; 7];
        for (j, o) in out.iter_mut().enumerate() {
            *o = row[wday_level(dow, j).expect("offset < 7").index()];
        }
        out
    }
}

/// Which reporting-day covariates enter the reverse-time logit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReverseTimeCovariates {
    pub workdays: bool,
    pub report_dow: bool,
    pub holiday: bool,
}

impl Default for ReverseTimeCovariates {
    fn default() -> Self {
        Self {
            workdays: true,
            report_dow: true,
            holiday: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseTimeModel {
    pub gamma: Coefficients,
    pub covariates: ReverseTimeCovariates,
}

/// Covariate pattern of a reverse-time cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct QPattern {
    pub workdays: u8,
    pub report_dow: u8,
    pub holiday: HolidayClass,
}

impl ReverseTimeCovariates {
    pub(crate) fn pattern(&self, table: &DayTable, t: usize, r: usize) -> QPattern {
        let f = table.get(r);
        QPattern {
            workdays: if self.workdays { table.workdays(t, r) as u8 } else { 0 },
            report_dow: if self.report_dow { f.dow } else { 1 },
            holiday: if self.holiday { f.holiday_class } else { HolidayClass::None },
        }
    }

    pub(crate) fn terms(&self, p: QPattern) -> Vec<Term> {
        let mut out = vec![Term::Intercept];
        if p.workdays != 0 {
            out.push(Term::Workdays(p.workdays));
        }
        if p.report_dow != 1 {
            out.push(Term::ReportDow(p.report_dow));
        }
        if p.holiday != HolidayClass::None {
            out.push(Term::Holiday(p.holiday));
        }
        out
    }
}

/// Precomputed additive effects of a reverse-time model.
#[derive(Clone, Debug)]
pub(crate) struct QEffects {
    intercept: f64,
    workdays: [f64; 8],
    report_dow: [f64; 8],
    holiday: [f64; 3],
}

impl QEffects {
    pub(crate) fn new(m: &ReverseTimeModel) -> Self {
        let g = &m.gamma;
        let mut workdays = [0.0; 8];
        let mut report_dow = [0.0; 8];
        for k in 1..8u8 {
            workdays[k as usize] = g.get(&Term::Workdays(k));
            report_dow[k as usize] = g.get(&Term::ReportDow(k));
        }
        Self {
            intercept: g.get(&Term::Intercept),
            workdays,
            report_dow,
            holiday: [
                0.0,
                g.get(&Term::Holiday(HolidayClass::National)),
                g.get(&Term::Holiday(HolidayClass::Unofficial)),
            ],
        }
    }

    #[inline]
    pub(crate) fn eta(&self, p: QPattern) -> f64 {
        self.intercept
            + self.workdays[p.workdays as usize]
            + self.report_dow[p.report_dow as usize]
            + self.holiday[p.holiday as usize]
    }
}

impl ReverseTimeModel {
    /// `q_{t,7w+j}` for `j = 1..7` (index 0 holds `j = 1`).
    pub fn week_q(&self, table: &DayTable, t: usize, w: usize) -> [f64; 6] {
        let fx = QEffects::new(self);
        self.week_q_with(&fx, table, t, w)
    }

    pub(crate) fn week_q_with(&self, fx: &QEffects, table: &DayTable, t: usize, w: usize) -> [f64; 6] {
        let s = t + 7 * w;
        let mut q = [0.0; 6];
        for (k, qk) in q.iter_mut().enumerate() {
            *qk = sigmoid(fx.eta(self.covariates.pattern(table, t, s + k + 1)));
        }
        q
    }

    /// Intra-week probabilities of week `w` for occurrence day `t`.
    pub fn week_probabilities(&self, table: &DayTable, t: usize, w: usize) -> [f64; 7] {
        cascade(&self.week_q(table, t, w))
    }
}

/// Reconstruct the 7 intra-week probabilities from the reverse-time hazards
/// `q_1..q_6`: `p_j = q_j prod_{k>j} (1 - q_k)`, `p_0 = prod_{k>=1} (1 - q_k)`.
pub fn cascade(q: &[f64; 6]) -> [f64; 7] {
    let mut p = [0.0; 7];
    let mut tail = 1.0;
    for j in (1..7).rev() {
        p[j] = q[j - 1] * tail;
        tail *= 1.0 - q[j - 1];
    }
    p[0] = tail;
    p
}

/// Reverse-time hazards `q_j = p_j / sum_{k<=j} p_k` of a weekly vector.
pub fn decompose(p: &[f64; 7]) -> [f64; 6] {
    let mut q = [0.0; 6];
    let mut cum = p[0];
    for j in 1..7 {
        cum += p[j];
        q[j - 1] = if cum > 0.0 { p[j] / cum } else { 0.0 };
    }
    q
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryDelayModel {
    pub p: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntraModel {
    Matrix(IntraWeekMatrix),
    ReverseTime(ReverseTimeModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "structure", rename_all = "snake_case")]
pub enum ReportingModel {
    Weekly { week: WeekDelayModel, intra: IntraModel },
    Stationary(StationaryDelayModel),
}

impl ReportingModel {
    /// Number of delays with possibly nonzero probability.
    pub fn support(&self) -> usize {
        match self {
            ReportingModel::Weekly { week, .. } => 7 * (week.w_max + 1),
            ReportingModel::Stationary(s) => s.p.len(),
        }
    }

    /// `p_td` for `d = 0..len`; the table must cover day `t + len - 1` for weekly models.
    pub fn row(&self, table: &DayTable, t: usize, len: usize) -> Vec<f64> {
        match self {
            ReportingModel::Stationary(s) => {
                let mut out = vec![0.0; len];
                let n = len.min(s.p.len());
                out[..n].copy_from_slice(&s.p[..n]);
                out
            }
            ReportingModel::Weekly { week, intra } => {
                let f = table.get(t);
                let pw = week.week_vector(f);
                let mut out = vec![0.0; len];
                let n = len.min(self.support());
                match intra {
                    IntraModel::Matrix(m) => {
                        let by_j = m.by_offset(f.dow);
                        for (d, o) in out[..n].iter_mut().enumerate() {
                            *o = pw[d / 7] * by_j[d % 7];
                        }
                    }
                    IntraModel::ReverseTime(rt) => {
                        let fx = QEffects::new(rt);
                        for w in 0..n.div_ceil(7) {
                            let p = cascade(&rt.week_q_with(&fx, table, t, w));
                            for j in 0..7 {
                                let d = 7 * w + j;
                                if d < n {
                                    out[d] = pw[w] * p[j];
                                }
                            }
                        }
                    }
                }
                out
            }
        }
    }

    pub fn cell_probability(&self, table: &DayTable, t: usize, d: usize) -> f64 {
        match self {
            ReportingModel::Stationary(s) => s.p.get(d).copied().unwrap_or(0.0),
            ReportingModel::Weekly { week, intra } => {
                if d >= self.support() {
                    return 0.0;
                }
                let f = table.get(t);
                let (w, j) = (d / 7, d % 7);
                let pw = week.week_probability(f, w);
                let pi = match intra {
                    IntraModel::Matrix(m) => m.by_offset(f.dow)[j],
                    IntraModel::ReverseTime(rt) => rt.week_probabilities(table, t, w)[j],
                };
                pw * pi
            }
        }
    }

    /// `p_t^r = sum_{d <= tau - t} p_td`.
    pub fn reported_mass(&self, table: &DayTable, t: usize, tau: usize) -> f64 {
        self.row(table, t, tau - t + 1).iter().sum()
    }

    /// Last calendar day the evaluation of rows up to `tau` can touch.
    pub fn table_horizon(&self, tau: usize) -> usize {
        tau + self.support().max(tau) + 8
    }
}

/// Which reporting structure to estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "structure", rename_all = "snake_case")]
pub enum ReportingSpec {
    WeeklyMatrix {
        week: DayCovariates,
        w_max: usize,
        /// Lower bound applied to day probabilities after estimation.
        floor: f64,
    },
    WeeklyReverseTime {
        week: DayCovariates,
        w_max: usize,
        reverse: ReverseTimeCovariates,
    },
    Stationary,
}

impl ReportingSpec {
    pub fn weekly_matrix(week: DayCovariates) -> Self {
        ReportingSpec::WeeklyMatrix {
            week,
            w_max: DEFAULT_W_MAX,
            floor: 0.0,
        }
    }

    pub fn weekly_reverse_time(week: DayCovariates) -> Self {
        ReportingSpec::WeeklyReverseTime {
            week,
            w_max: DEFAULT_W_MAX,
            reverse: ReverseTimeCovariates::default(),
        }
    }

    /// Week cutoff actually used at evaluation day `tau`: never shorter than the triangle.
    pub fn effective_w_max(&self, tau: usize) -> usize {
        match self {
            ReportingSpec::WeeklyMatrix { w_max, .. } | ReportingSpec::WeeklyReverseTime { w_max, .. } => {
                (*w_max).max(1).max((tau.saturating_sub(1)) / 7 + 1)
            }
            ReportingSpec::Stationary => 0,
        }
    }

    /// Support of fitted models at evaluation day `tau`.
    pub fn support(&self, tau: usize) -> usize {
        match self {
            ReportingSpec::Stationary => tau,
            _ => 7 * (self.effective_w_max(tau) + 1),
        }
    }
}

/// Expected counts beyond `tau` spread over cells `d >= tau` in proportion to
/// the previous model; returns `(d, count)` pairs for one occurrence day.
fn censored_allocation(prev: &ReportingModel, table: &DayTable, t: usize, tau: usize, remainder: f64) -> Vec<(usize, f64)> {
    if remainder <= 0.0 {
        return Vec::new();
    }
    let support = prev.support();
    if support <= tau {
        return Vec::new();
    }
    let row = prev.row(table, t, support);
    let tail: f64 = row[tau..].iter().sum();
    if tail <= 0.0 {
        return Vec::new();
    }
    (tau..support)
        .filter(|&d| row[d] > 0.0)
        .map(|d| (d, remainder * row[d] / tail))
        .collect()
}

/// Maximize the reporting part of the expected complete-data log-likelihood.
///
/// `previous` supplies warm starts, fallback rows for empty matrix rows, and
/// the allocation of the remainder when `include_censoring` is set.
pub fn reporting_m_step(
    counts: &CompleteCounts,
    spec: &ReportingSpec,
    table: &DayTable,
    previous: Option<&ReportingModel>,
    include_censoring: bool,
) -> Result<ReportingModel> {
    let tau = counts.tau;
    match spec {
        ReportingSpec::Stationary => {
            let mut p = vec![0.0; tau];
            for row in &counts.expected {
                for (d, v) in row.iter().enumerate() {
                    p[d] += v;
                }
            }
            let total: f64 = p.iter().sum();
            if total <= 0.0 {
                return Err(Error::invalid("no reported events to estimate the delay distribution"));
            }
            p.iter_mut().for_each(|v| *v /= total);
            Ok(ReportingModel::Stationary(StationaryDelayModel { p }))
        }
        ReportingSpec::WeeklyMatrix { week, w_max, floor } => {
            let w_max = spec.effective_w_max(tau).max(*w_max);
            let (prev_week, prev_intra) = weekly_parts(previous);
            let censor = include_censoring.then_some(previous).flatten();
            let week_model = week_m_step(counts, week, w_max, table, prev_week, censor)?;
            let prev_matrix = match prev_intra {
                Some(IntraModel::Matrix(m)) => Some(m),
                _ => None,
            };
            let matrix = matrix_m_step(counts, table, prev_matrix, censor, *floor);
            Ok(ReportingModel::Weekly {
                week: week_model,
                intra: IntraModel::Matrix(matrix),
            })
        }
        ReportingSpec::WeeklyReverseTime { week, w_max, reverse } => {
            let w_max = spec.effective_w_max(tau).max(*w_max);
            let (prev_week, prev_intra) = weekly_parts(previous);
            let censor = include_censoring.then_some(previous).flatten();
            let week_model = week_m_step(counts, week, w_max, table, prev_week, censor)?;
            let prev_rt = match prev_intra {
                Some(IntraModel::ReverseTime(m)) => Some(m),
                _ => None,
            };
            let rt = reverse_time_m_step(counts, *reverse, table, prev_rt, censor)?;
            Ok(ReportingModel::Weekly {
                week: week_model,
                intra: IntraModel::ReverseTime(rt),
            })
        }
    }
}

fn weekly_parts(m: Option<&ReportingModel>) -> (Option<&WeekDelayModel>, Option<&IntraModel>) {
    match m {
        Some(ReportingModel::Weekly { week, intra }) => (Some(week), Some(intra)),
        _ => (None, None),
    }
}

/// Negative binomial fit of the reporting week with expected counts as weights.
pub(crate) fn week_m_step(
    counts: &CompleteCounts,
    covariates: &DayCovariates,
    w_max: usize,
    table: &DayTable,
    previous: Option<&WeekDelayModel>,
    censor: Option<&ReportingModel>,
) -> Result<WeekDelayModel> {
    let tau = counts.tau;
    let mut builder = TermDesignBuilder::new();
    let mut response = Vec::new();
    let mut terms = Vec::new();
    for t in 1..=tau {
        let f = table.get(t);
        terms.clear();
        covariates.push_terms(f, &mut terms);
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (d, &v) in counts.expected[t - 1].iter().enumerate() {
            if v > 0.0 {
                *acc.entry(d / 7).or_default() += v;
            }
        }
        if let Some(prev) = censor {
            let alloc = censored_allocation(prev, table, t, tau, counts.remainder[t - 1]);
            let mut bucket = 0.0;
            for (d, v) in alloc {
                let w = d / 7;
                if w >= w_max {
                    bucket += v;
                } else {
                    *acc.entry(w).or_default() += v;
                }
            }
            if bucket > 0.0 {
                let (mu, phi) = match prev {
                    ReportingModel::Weekly { week, .. } => (week.mu(f), week.phi),
                    ReportingModel::Stationary(_) => unreachable!("stationary support ends before tau"),
                };
                for (w, share) in nb_tail_shares(mu, phi, w_max) {
                    *acc.entry(w).or_default() += bucket * share;
                }
            }
        }
        for (w, v) in acc {
            if v > 0.0 {
                builder.push(&terms, 0.0, v);
                response.push(w as f64);
            }
        }
    }
    let (x, cols) = builder.finish()?;
    let mut opts = FitOptions {
        structural_zeros: true,
        ..Default::default()
    };
    if let Some(prev) = previous {
        opts.start = Some(cols.iter().map(|c| prev.theta.get(c)).collect());
        opts.phi_start = Some(prev.phi);
    }
    let fit = fit_weighted_negbin(&x, &response, &opts)?;
    if !fit.converged {
        warn!("week delay regression did not converge in {} iterations", fit.iterations);
    }
    Ok(WeekDelayModel {
        theta: Coefficients::from_pairs(cols.into_iter().zip(fit.coefficients)),
        phi: fit.dispersion.expect("negative binomial fit"),
        w_max,
        covariates: *covariates,
    })
}

/// Shares of the tail mass `P(W >= w_max)` over weeks `w >= w_max`, truncated
/// once the neglected tail falls below `1e-10` of the bucket.
fn nb_tail_shares(mu: f64, phi: f64, w_max: usize) -> Vec<(usize, f64)> {
    let probs = nb_week_probabilities(mu, phi, w_max);
    let surv = probs[w_max];
    if surv <= 0.0 {
        return vec![(w_max, 1.0)];
    }
    let log_ratio = (mu / (phi + mu)).ln();
    let mut lp = probs[w_max - 1].max(f64::MIN_POSITIVE).ln()
        + (phi + (w_max - 1) as f64).ln()
        - (w_max as f64).ln()
        + log_ratio;
    let mut out = Vec::new();
    let mut covered = 0.0;
    let mut w = w_max;
    while covered < surv * (1.0 - 1e-10) && out.len() < 5000 {
        let p = lp.exp();
        out.push((w, p / surv));
        covered += p;
        lp += (phi + w as f64).ln() - ((w + 1) as f64).ln() + log_ratio;
        w += 1;
    }
    out
}

/// Rowwise multinomial maximum likelihood for the day-probability matrix.
pub(crate) fn matrix_m_step(
    counts: &CompleteCounts,
    table: &DayTable,
    previous: Option<&IntraWeekMatrix>,
    censor: Option<&ReportingModel>,
    floor: f64,
) -> IntraWeekMatrix {
    let tau = counts.tau;
    let mut c = [[0.0; 7]; 7];
    let mut level_of = [[0usize; 7]; 7];
    for dow in 1..=7u8 {
        for j in 0..7 {
            level_of[dow as usize - 1][j] = wday_level(dow, j).expect("offset < 7").index();
        }
    }
    for t in 1..=tau {
        let dow = table.get(t).dow as usize - 1;
        for (d, &v) in counts.expected[t - 1].iter().enumerate() {
            c[dow][level_of[dow][d % 7]] += v;
        }
        if let Some(prev) = censor {
            for (d, v) in censored_allocation(prev, table, t, tau, counts.remainder[t - 1]) {
                c[dow][level_of[dow][d % 7]] += v;
            }
        }
    }
    let fallback = previous.cloned().unwrap_or_else(IntraWeekMatrix::uniform);
    let mut p = [[0.0; 7]; 7];
    for i in 0..7 {
        let s: f64 = c[i].iter().sum();
        if s > 0.0 {
            for k in 0..7 {
                p[i][k] = c[i][k] / s;
            }
        } else {
            warn!("no expected reports for occurrence weekday {}; keeping previous day probabilities", i + 1);
            p[i] = fallback.p[i];
        }
        if floor > 0.0 {
            let mut s = 0.0;
            for v in p[i].iter_mut() {
                *v = v.max(floor);
                s += *v;
            }
            p[i].iter_mut().for_each(|v| *v /= s);
        }
    }
    IntraWeekMatrix { p }
}

/// Aggregated binomial rows `(pattern, successes, trials)` of the reverse-time decomposition.
pub(crate) fn reverse_time_rows(
    counts: &CompleteCounts,
    covariates: ReverseTimeCovariates,
    table: &DayTable,
    censor: Option<&ReportingModel>,
) -> BTreeMap<QPattern, (f64, f64)> {
    let tau = counts.tau;
    let mut acc: BTreeMap<QPattern, (f64, f64)> = BTreeMap::new();
    let mut weeks: Vec<[f64; 7]> = Vec::new();
    for t in 1..=tau {
        weeks.clear();
        for (d, &v) in counts.expected[t - 1].iter().enumerate() {
            let w = d / 7;
            if weeks.len() <= w {
                weeks.resize(w + 1, [0.0; 7]);
            }
            weeks[w][d % 7] += v;
        }
        if let Some(prev) = censor {
            for (d, v) in censored_allocation(prev, table, t, tau, counts.remainder[t - 1]) {
                let w = d / 7;
                if weeks.len() <= w {
                    weeks.resize(w + 1, [0.0; 7]);
                }
                weeks[w][d % 7] += v;
            }
        }
        for (w, n) in weeks.iter().enumerate() {
            let mut cum = n[0];
            for k in 1..7 {
                cum += n[k];
                if cum <= 0.0 {
                    continue;
                }
                let pat = covariates.pattern(table, t, t + 7 * w + k);
                let e = acc.entry(pat).or_insert((0.0, 0.0));
                e.0 += n[k];
                e.1 += cum;
            }
        }
    }
    acc
}

pub(crate) fn reverse_time_m_step(
    counts: &CompleteCounts,
    covariates: ReverseTimeCovariates,
    table: &DayTable,
    previous: Option<&ReverseTimeModel>,
    censor: Option<&ReportingModel>,
) -> Result<ReverseTimeModel> {
    let rows = reverse_time_rows(counts, covariates, table, censor);
    let mut builder = TermDesignBuilder::new();
    let mut s = Vec::with_capacity(rows.len());
    let mut n = Vec::with_capacity(rows.len());
    for (pat, (succ, trials)) in &rows {
        builder.push(&covariates.terms(*pat), 0.0, 1.0);
        s.push(*succ);
        n.push(*trials);
    }
    let (x, cols) = builder.finish()?;
    let mut opts = FitOptions {
        structural_zeros: true,
        ..Default::default()
    };
    if let Some(prev) = previous {
        opts.start = Some(cols.iter().map(|c| prev.gamma.get(c)).collect());
    }
    let fit = fit_weighted_logistic(&x, &s, &n, &opts)?;
    if !fit.converged {
        warn!("reverse-time regression did not converge in {} iterations", fit.iterations);
    }
    Ok(ReverseTimeModel {
        gamma: Coefficients::from_pairs(cols.into_iter().zip(fit.coefficients)),
        covariates,
    })
}
