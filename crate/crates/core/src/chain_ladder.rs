//! Classical chain ladder on daily and yearly grids.
//!
//! Triangles are handled as dense upper-left arrays: row `i` (0-based) holds
//! the observed incremental counts for delays `0..n - i`.

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::triangle::RunoffTriangle;

/// Development factors `f_1..f_{n-1}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DevelopmentFactors {
    /// `f[d - 1]` is the factor from delay `d - 1` to `d`.
    pub f: Vec<f64>,
}

impl DevelopmentFactors {
    pub fn factor(&self, d: usize) -> f64 {
        self.f[d - 1]
    }
}

fn dense_rows(tri: &RunoffTriangle) -> Vec<Vec<f64>> {
    (1..=tri.tau()).map(|t| tri.row_dense(t)).collect()
}

fn cumulate(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let mut c = r.clone();
            for d in 1..c.len() {
                c[d] += c[d - 1];
            }
            c
        })
        .collect()
}

fn check_dense(rows: &[Vec<f64>]) -> Result<()> {
    let n = rows.len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n - i {
            return Err(Error::invalid(format!("row {} has {} cells, expected {}", i + 1, r.len(), n - i)));
        }
        if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!("row {} has negative or non-finite counts", i + 1)));
        }
    }
    Ok(())
}

/// Development factors of a dense triangle; zero denominators give factor 1.
pub fn development_factors_dense(rows: &[Vec<f64>]) -> Result<DevelopmentFactors> {
    check_dense(rows)?;
    let n = rows.len();
    let c = cumulate(rows);
    let mut f = Vec::with_capacity(n.saturating_sub(1));
    for d in 1..n {
        let (mut num, mut den) = (0.0, 0.0);
        for row in &c[..n - d] {
            num += row[d];
            den += row[d - 1];
        }
        if den > 0.0 {
            f.push(num / den);
        } else {
            warn!("development factor {d} has a zero denominator; using 1");
            f.push(1.0);
        }
    }
    Ok(DevelopmentFactors { f })
}

pub fn development_factors(tri: &RunoffTriangle) -> DevelopmentFactors {
    development_factors_dense(&dense_rows(tri)).expect("triangle rows are well formed")
}

/// Incremental forecasts of the unobserved cells: row `i` holds delays
/// `n - i .. n - 1` (empty for the first row).
pub fn cl_forecast_dense(rows: &[Vec<f64>], f: &DevelopmentFactors) -> Vec<Vec<f64>> {
    let n = rows.len();
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let last = n - i - 1;
            let mut c = r.iter().sum::<f64>();
            let mut out = Vec::with_capacity(i);
            for d in last + 1..n {
                let next = c * f.factor(d);
                out.push(next - c);
                c = next;
            }
            out
        })
        .collect()
}

/// Incremental lower-triangle forecasts `N_td` for `t + d > tau`, `d <= tau - 1`,
/// indexed `[t - 1][d - (tau - t + 1)]`.
pub fn cl_forecast(tri: &RunoffTriangle, f: &DevelopmentFactors) -> Vec<Vec<f64>> {
    cl_forecast_dense(&dense_rows(tri), f)
}

/// Chain-ladder model `E N_td = lambda_t p_d` fitted by the stationary EM.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainLadderFit {
    pub lambda: Vec<f64>,
    pub p: Vec<f64>,
    pub iterations: usize,
}

impl ChainLadderFit {
    /// Expected unreported count of row `i` (0-based) within the data horizon.
    pub fn ibnr(&self, i: usize) -> f64 {
        let n = self.p.len();
        self.lambda[i] * self.p[n - i..].iter().sum::<f64>()
    }
}

/// Stationary EM on a dense triangle started from the development-factor completion.
pub fn fit_cl_em_dense(rows: &[Vec<f64>]) -> Result<ChainLadderFit> {
    let f = development_factors_dense(rows)?;
    let n = rows.len();
    if n == 0 {
        return Err(Error::invalid("empty triangle"));
    }
    let forecast = cl_forecast_dense(rows, &f);
    let mut full: Vec<Vec<f64>> = rows
        .iter()
        .zip(&forecast)
        .map(|(r, fc)| r.iter().chain(fc).copied().collect())
        .collect();
    let mut lambda = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut iterations = 0;
    for k in 1..=1000 {
        iterations = k;
        let mut new_p = vec![0.0; n];
        for (i, row) in full.iter().enumerate() {
            lambda[i] = row.iter().sum();
            for (d, v) in row.iter().enumerate() {
                new_p[d] += v;
            }
        }
        let total: f64 = lambda.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("triangle has no events"));
        }
        new_p.iter_mut().for_each(|v| *v /= total);
        let change = new_p
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        p = new_p;
        for (i, row) in full.iter_mut().enumerate() {
            for d in n - i..n {
                row[d] = lambda[i] * p[d];
            }
        }
        if change < 1e-14 {
            break;
        }
    }
    Ok(ChainLadderFit { lambda, p, iterations })
}

/// Daily chain ladder, returning `lambda_t` for `t = 1..tau` and `p_d` for `d < tau`.
pub fn fit_cl_em(tri: &RunoffTriangle) -> Result<ChainLadderFit> {
    fit_cl_em_dense(&dense_rows(tri))
}

/// Chain ladder on consecutive periods of `period_len` days ending at `tau`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YearlyChainLadder {
    pub period_len: usize,
    /// First day of each period, oldest first.
    pub period_start: Vec<usize>,
    pub fit: ChainLadderFit,
    /// The oldest period is shorter than `period_len`.
    pub short_first_period: bool,
    /// Nowcast of unreported events per day `t = 1..tau`, spread uniformly within periods.
    pub daily_ibnr: Vec<f64>,
}

impl YearlyChainLadder {
    pub fn total_ibnr(&self) -> f64 {
        self.daily_ibnr.iter().sum()
    }
}

/// Aggregate into occurrence-period × reporting-lag cells and fit the chain ladder.
pub fn fit_yearly_cl(tri: &RunoffTriangle, period_len: usize) -> Result<YearlyChainLadder> {
    let tau = tri.tau();
    if period_len == 0 {
        return Err(Error::invalid("period length must be positive"));
    }
    if tau < period_len {
        return Err(Error::invalid(format!(
            "triangle spans {tau} days, less than one period of {period_len}"
        )));
    }
    let k = tau.div_ceil(period_len);
    let period = |t: usize| k - 1 - (tau - t) / period_len;
    let mut rows: Vec<Vec<f64>> = (0..k).map(|i| vec![0.0; k - i]).collect();
    for (t, d, n) in tri.cells() {
        let (a, b) = (period(t), period(t + d));
        rows[a][b - a] += n as f64;
    }
    let short = tau % period_len != 0;
    if short {
        warn!("oldest period covers {} days instead of {period_len}", tau % period_len);
    }
    let fit = fit_cl_em_dense(&rows)?;
    let period_start: Vec<usize> = (0..k)
        .map(|i| if i == 0 { 1 } else { tau - (k - i) * period_len + 1 })
        .collect();
    let mut daily_ibnr = vec![0.0; tau];
    for i in 0..k {
        let start = period_start[i];
        let end = if i + 1 < k { period_start[i + 1] - 1 } else { tau };
        let share = fit.ibnr(i) / (end - start + 1) as f64;
        for v in &mut daily_ibnr[start - 1..end] {
            *v = share;
        }
    }
    Ok(YearlyChainLadder {
        period_len,
        period_start,
        fit,
        short_first_period: short,
        daily_ibnr,
    })
}
