//! Post-fit inference: information matrices by numerical differentiation,
//! AICcd, generalized Cook's distance, nowcasts and Poisson prediction intervals.

mod nowcast;
mod params;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::calendar::DayTable;
use crate::em::{e_step, q_function, CompleteCounts, JointModel};
use crate::error::{Error, Result};
use crate::triangle::RunoffTriangle;

pub use nowcast::{
    group_forecast, nowcast, poisson_interval, poisson_quantile, CellForecast, Grouping, IbnrSummary, NowcastGroup,
    NowcastResult,
};
pub use params::ParamLayout;

use params::{RowContext, Source};

/// Negative Hessians of `Q` (complete data) and of the observed log-likelihood.
#[derive(Clone, Debug)]
pub struct InformationPair {
    pub names: Vec<String>,
    pub complete: DMatrix<f64>,
    pub observed: DMatrix<f64>,
}

impl InformationPair {
    /// Standard errors from the inverse observed information.
    pub fn standard_errors(&self) -> Result<Vec<f64>> {
        let inv = invert_spd(&self.observed, "observed information")?;
        Ok((0..inv.nrows()).map(|i| inv[(i, i)].max(0.0).sqrt()).collect())
    }
}

fn invert_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite; consider a simpler model")))
}

/// Score of the observed log-likelihood at the layout point `x`.
pub fn observed_score(
    layout: &ParamLayout,
    base: &JointModel,
    x: &[f64],
    tri: &RunoffTriangle,
    table: &DayTable,
) -> Vec<f64> {
    let model = layout.apply(base, x);
    layout.gradient(&model, tri, table, Source::Observed)
}

/// Score of `Q(., counts)` at the layout point `x`, with the remainder term included.
pub fn complete_score(
    layout: &ParamLayout,
    base: &JointModel,
    x: &[f64],
    counts: &CompleteCounts,
    tri: &RunoffTriangle,
    table: &DayTable,
) -> Vec<f64> {
    let model = layout.apply(base, x);
    layout.gradient(&model, tri, table, Source::Complete(counts))
}

/// Symmetrized central-difference Jacobian of a gradient function, columns in parallel.
pub fn numerical_hessian<F>(x: &[f64], names: &[String], grad: F) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let n = x.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let h = (1e-5 * x[j].abs()).max(1e-5);
            let mut xp = x.to_vec();
            xp[j] += h;
            let gp = grad(&xp);
            xp[j] = x[j] - h;
            let gm = grad(&xp);
            gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect();
    let mut h = DMatrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("Hessian entry for {} / {}", names[i], names[j])));
            }
            h[(i, j)] = *v;
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Observed and complete-data information at a fitted model.
pub fn observed_information(model: &JointModel, tri: &RunoffTriangle, table: &DayTable) -> Result<InformationPair> {
    let (layout, x) = ParamLayout::from_model(model);
    let counts = e_step(model, tri, table);
    let observed = numerical_hessian(&x, &layout.names, |p| observed_score(&layout, model, p, tri, table))?;
    let complete = numerical_hessian(&x, &layout.names, |p| complete_score(&layout, model, p, &counts, tri, table))?;
    Ok(InformationPair {
        names: layout.names.clone(),
        complete: -complete,
        observed: -observed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Aiccd {
    /// `Q(theta; theta)` without the `log N_td!` constants.
    pub q: f64,
    /// `2 tr(I_c I_o^{-1})`.
    pub penalty: f64,
    pub value: f64,
    pub parameters: usize,
}

pub fn aiccd_from_information(q: f64, info: &InformationPair) -> Result<Aiccd> {
    let inv = invert_spd(&info.observed, "observed information")?;
    let penalty = 2.0 * (&info.complete * inv).trace();
    Ok(Aiccd {
        q,
        penalty,
        value: -2.0 * q + penalty,
        parameters: info.names.len(),
    })
}

pub fn aiccd(model: &JointModel, tri: &RunoffTriangle, table: &DayTable) -> Result<(Aiccd, InformationPair)> {
    let info = observed_information(model, tri, table)?;
    let counts = e_step(model, tri, table);
    let q = q_function(model, &counts, tri, table, true);
    Ok((aiccd_from_information(q, &info)?, info))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CookDistance {
    pub t: usize,
    pub d: usize,
    pub count: u64,
    pub fitted: f64,
    pub distance: f64,
}

/// Generalized Cook's distance `g' I_c^{-1} g` of every observed cell, where `g`
/// is the cell's contribution to the score at the fit.
pub fn cooks_distances(
    model: &JointModel,
    tri: &RunoffTriangle,
    table: &DayTable,
    info: &InformationPair,
) -> Result<Vec<CookDistance>> {
    let (layout, _) = ParamLayout::from_model(model);
    let inv = invert_spd(&info.complete, "complete-data information")?;
    let tau = tri.tau();
    let per_t: Vec<Vec<CookDistance>> = (1..=tau)
        .into_par_iter()
        .map(|t| {
            let ctx = RowContext::new(&layout, model, tri, table, t);
            let mut out = Vec::with_capacity(tau - t + 1);
            let mut g: Vec<(usize, f64)> = Vec::new();
            for d in 0..=tau - t {
                let n = tri.get(t, d);
                let fitted = ctx.lambda * ctx.row[d];
                let c = n as f64 - fitted;
                g.clear();
                ctx.cell_score(&layout, d, c, &mut g);
                let mut gd = 0.0;
                for &(i, gi) in &g {
                    for &(j, gj) in &g {
                        gd += gi * inv[(i, j)] * gj;
                    }
                }
                out.push(CookDistance {
                    t,
                    d,
                    count: n,
                    fitted,
                    distance: gd.max(0.0),
                });
            }
            out
        })
        .collect();
    Ok(per_t.into_iter().flatten().collect())
}

/// Cook's distance of a single observed cell.
pub fn cooks_distance(
    model: &JointModel,
    tri: &RunoffTriangle,
    table: &DayTable,
    info: &InformationPair,
    t: usize,
    d: usize,
) -> Result<f64> {
    if t == 0 || t > tri.tau() || t + d > tri.tau() {
        return Err(Error::invalid(format!("cell ({t}, {d}) is not observed")));
    }
    let (layout, _) = ParamLayout::from_model(model);
    let inv = invert_spd(&info.complete, "complete-data information")?;
    let ctx = RowContext::new(&layout, model, tri, table, t);
    let c = tri.get(t, d) as f64 - ctx.lambda * ctx.row[d];
    let mut g = Vec::new();
    ctx.cell_score(&layout, d, c, &mut g);
    let mut gd = 0.0;
    for &(i, gi) in &g {
        for &(j, gj) in &g {
            gd += gi * inv[(i, j)] * gj;
        }
    }
    Ok(gd.max(0.0))
}

#[cfg(test)]
mod tests;
