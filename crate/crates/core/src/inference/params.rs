//! Free-parameter layout of a joint model and analytic scores.
//!
//! Day probabilities (matrix rows and the stationary vector) enter as
//! log-ratios against the largest entry of their row; exact zeros and
//! structural coefficients are held fixed.

use std::collections::BTreeMap;

use crate::calendar::{wday_level, DayTable};
use crate::em::{CompleteCounts, JointModel, OccurrenceModel};
use crate::glm::special::digamma_diff;
use crate::glm::STRUCTURAL_COEF;
use crate::reporting::{IntraModel, QEffects, ReportingModel};
use crate::terms::{Coefficients, Term};
use crate::triangle::RunoffTriangle;

#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub names: Vec<String>,
    alpha: BTreeMap<Term, usize>,
    lambda: Vec<Option<usize>>,
    theta: BTreeMap<Term, usize>,
    ln_phi: Option<usize>,
    day: [[Option<usize>; 7]; 7],
    day_ref: [usize; 7],
    gamma: BTreeMap<Term, usize>,
    stationary: Vec<Option<usize>>,
    stationary_ref: usize,
}

pub(crate) enum Source<'a> {
    Observed,
    Complete(&'a CompleteCounts),
}

fn is_free(v: f64) -> bool {
    v.is_finite() && v.abs() < STRUCTURAL_COEF - 1e-9
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax_row(eta: &[f64]) -> Vec<f64> {
    let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl ParamLayout {
    /// Layout of the free parameters of `model` and their current values.
    pub fn from_model(model: &JointModel) -> (Self, Vec<f64>) {
        let mut names = Vec::new();
        let push = |names: &mut Vec<String>, n: String| {
            names.push(n);
            names.len() - 1
        };
        let mut alpha = BTreeMap::new();
        let mut lambda = Vec::new();
        match &model.occurrence {
            OccurrenceModel::Regression { alpha: a, .. } => {
                for (k, v) in a.iter() {
                    if is_free(*v) {
                        alpha.insert(*k, push(&mut names, format!("occurrence:{k}")));
                    }
                }
            }
            OccurrenceModel::Saturated { lambda: l } => {
                for (i, v) in l.iter().enumerate() {
                    lambda.push((*v > 0.0).then(|| push(&mut names, format!("log_lambda:{}", i + 1))));
                }
            }
        }
        let mut theta = BTreeMap::new();
        let mut ln_phi = None;
        let mut day = [[None; 7]; 7];
        let mut day_ref = [0; 7];
        let mut gamma = BTreeMap::new();
        let mut stationary = Vec::new();
        let mut stationary_ref = 0;
        match &model.reporting {
            ReportingModel::Weekly { week, intra } => {
                for (k, v) in week.theta.iter() {
                    if is_free(*v) {
                        theta.insert(*k, push(&mut names, format!("week:{k}")));
                    }
                }
                ln_phi = Some(push(&mut names, "week:ln_phi".into()));
                match intra {
                    IntraModel::Matrix(m) => {
                        for i in 0..7 {
                            day_ref[i] = argmax(&m.p[i]);
                            for k in 0..7 {
                                if k != day_ref[i] && m.p[i][k] > 0.0 {
                                    day[i][k] = Some(push(&mut names, format!("day:{}:{}", i + 1, k + 1)));
                                }
                            }
                        }
                    }
                    IntraModel::ReverseTime(rt) => {
                        for (k, v) in rt.gamma.iter() {
                            if is_free(*v) {
                                gamma.insert(*k, push(&mut names, format!("reverse:{k}")));
                            }
                        }
                    }
                }
            }
            ReportingModel::Stationary(s) => {
                stationary_ref = argmax(&s.p);
                for (d, v) in s.p.iter().enumerate() {
                    stationary.push((d != stationary_ref && *v > 0.0).then(|| push(&mut names, format!("p:{d}"))));
                }
            }
        }
        let layout = Self {
            names,
            alpha,
            lambda,
            theta,
            ln_phi,
            day,
            day_ref,
            gamma,
            stationary,
            stationary_ref,
        };
        let x = layout.values(model);
        (layout, x)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Parameter values of a model with the same structure, in this layout.
    pub fn values(&self, model: &JointModel) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        match &model.occurrence {
            OccurrenceModel::Regression { alpha, .. } => {
                for (k, &i) in &self.alpha {
                    x[i] = alpha.get(k);
                }
            }
            OccurrenceModel::Saturated { lambda } => {
                for (t, i) in self.lambda.iter().enumerate() {
                    if let Some(i) = i {
                        x[*i] = lambda[t].ln();
                    }
                }
            }
        }
        match &model.reporting {
            ReportingModel::Weekly { week, intra } => {
                for (k, &i) in &self.theta {
                    x[i] = week.theta.get(k);
                }
                if let Some(i) = self.ln_phi {
                    x[i] = week.phi.ln();
                }
                match intra {
                    IntraModel::Matrix(m) => {
                        for r in 0..7 {
                            for k in 0..7 {
                                if let Some(i) = self.day[r][k] {
                                    x[i] = (m.p[r][k] / m.p[r][self.day_ref[r]]).ln();
                                }
                            }
                        }
                    }
                    IntraModel::ReverseTime(rt) => {
                        for (k, &i) in &self.gamma {
                            x[i] = rt.gamma.get(k);
                        }
                    }
                }
            }
            ReportingModel::Stationary(s) => {
                for (d, i) in self.stationary.iter().enumerate() {
                    if let Some(i) = i {
                        x[*i] = (s.p[d] / s.p[self.stationary_ref]).ln();
                    }
                }
            }
        }
        x
    }

    /// Copy of `base` with the free parameters replaced by `x`.
    pub fn apply(&self, base: &JointModel, x: &[f64]) -> JointModel {
        let mut m = base.clone();
        match &mut m.occurrence {
            OccurrenceModel::Regression { alpha, .. } => set_all(alpha, &self.alpha, x),
            OccurrenceModel::Saturated { lambda } => {
                for (t, i) in self.lambda.iter().enumerate() {
                    if let Some(i) = i {
                        lambda[t] = x[*i].exp();
                    }
                }
            }
        }
        match &mut m.reporting {
            ReportingModel::Weekly { week, intra } => {
                set_all(&mut week.theta, &self.theta, x);
                if let Some(i) = self.ln_phi {
                    week.phi = x[i].exp();
                }
                match intra {
                    IntraModel::Matrix(mat) => {
                        for r in 0..7 {
                            let eta: Vec<f64> = (0..7)
                                .map(|k| match self.day[r][k] {
                                    Some(i) => x[i],
                                    None if k == self.day_ref[r] => 0.0,
                                    None => f64::NEG_INFINITY,
                                })
                                .collect();
                            let p = softmax_row(&eta);
                            mat.p[r].copy_from_slice(&p);
                        }
                    }
                    IntraModel::ReverseTime(rt) => set_all(&mut rt.gamma, &self.gamma, x),
                }
            }
            ReportingModel::Stationary(s) => {
                let eta: Vec<f64> = (0..s.p.len())
                    .map(|d| match self.stationary[d] {
                        Some(i) => x[i],
                        None if d == self.stationary_ref => 0.0,
                        None => f64::NEG_INFINITY,
                    })
                    .collect();
                s.p = softmax_row(&eta);
            }
        }
        m
    }

    /// Analytic score of the observed log-likelihood or of `Q`, aggregated over cells.
    pub(crate) fn gradient(&self, model: &JointModel, tri: &RunoffTriangle, table: &DayTable, source: Source<'_>) -> Vec<f64> {
        let tau = tri.tau();
        let mut g = vec![0.0; self.len()];
        let mut matrix_acc = [[0.0; 7]; 7];
        let mut stationary_acc = vec![0.0; tau];
        let mut c = vec![0.0; tau];
        for t in 1..=tau {
            let ctx = RowContext::new(self, model, tri, table, t);
            let a;
            c.iter_mut().for_each(|v| *v = 0.0);
            match &source {
                Source::Observed => {
                    let obs = tau - t + 1;
                    let mass: f64 = ctx.row[..obs].iter().sum();
                    a = tri.reported(t) as f64 - ctx.lambda * mass;
                    for d in 0..obs {
                        c[d] = -ctx.lambda * ctx.row[d];
                    }
                    for &(d, n) in tri.row(t) {
                        c[d] += n as f64;
                    }
                }
                Source::Complete(k) => {
                    a = k.row_total(t) - ctx.lambda;
                    c.copy_from_slice(&k.expected[t - 1]);
                    let r = k.remainder[t - 1];
                    if r > 0.0 {
                        let tail = crate::em::tail_mass(&ctx.row);
                        if tail > 0.0 {
                            for d in 0..tau {
                                c[d] -= r * ctx.row[d] / tail;
                            }
                        }
                    }
                }
            }
            for &i in &ctx.occurrence {
                g[i] += a;
            }
            ctx.accumulate(self, &c, &mut g, &mut matrix_acc, &mut stationary_acc);
        }
        match &model.reporting {
            ReportingModel::Weekly {
                intra: IntraModel::Matrix(m),
                ..
            } => {
                for r in 0..7 {
                    let total: f64 = matrix_acc[r].iter().sum();
                    for l in 0..7 {
                        if let Some(i) = self.day[r][l] {
                            g[i] += matrix_acc[r][l] - m.p[r][l] * total;
                        }
                    }
                }
            }
            ReportingModel::Stationary(s) => {
                let total: f64 = stationary_acc.iter().sum();
                for (l, i) in self.stationary.iter().enumerate() {
                    if let Some(i) = i {
                        g[*i] += stationary_acc.get(l).copied().unwrap_or(0.0) - s.p[l] * total;
                    }
                }
            }
            _ => {}
        }
        g
    }
}

fn set_all(coefs: &mut Coefficients, idx: &BTreeMap<Term, usize>, x: &[f64]) {
    for (k, &i) in idx {
        coefs.set(*k, x[i]);
    }
}

/// Quantities of one occurrence day needed for scores.
pub(crate) struct RowContext<'m> {
    model: &'m JointModel,
    pub lambda: f64,
    /// `p_td` for `d < tau`.
    pub row: Vec<f64>,
    /// Parameter indices whose regressor is 1 in `log lambda_t`.
    pub occurrence: Vec<usize>,
    week: Option<WeekPart>,
    dow: usize,
    reverse: Option<ReversePart>,
}

struct WeekPart {
    mu: f64,
    phi: f64,
    theta_idx: Vec<usize>,
}

struct ReversePart {
    /// `q_{t,7w+k}` and the parameter indices of its pattern, `k = 1..6`, per week.
    weeks: Vec<[(f64, Vec<usize>); 6]>,
}

impl<'m> RowContext<'m> {
    pub fn new(layout: &ParamLayout, model: &'m JointModel, tri: &RunoffTriangle, table: &DayTable, t: usize) -> Self {
        let tau = tri.tau();
        let f = table.get(t);
        let lambda = model.occurrence.lambda(table, t, tri.exposure_at(t));
        let row = model.reporting.row(table, t, tau);
        let occurrence = match &model.occurrence {
            OccurrenceModel::Regression { covariates, .. } => covariates
                .terms(f)
                .iter()
                .filter_map(|k| layout.alpha.get(k).copied())
                .collect(),
            OccurrenceModel::Saturated { .. } => layout.lambda[t - 1].into_iter().collect(),
        };
        let mut week = None;
        let mut reverse = None;
        if let ReportingModel::Weekly { week: wm, intra } = &model.reporting {
            week = Some(WeekPart {
                mu: wm.mu(f),
                phi: wm.phi,
                theta_idx: wm
                    .covariates
                    .terms(f)
                    .iter()
                    .filter_map(|k| layout.theta.get(k).copied())
                    .collect(),
            });
            if let IntraModel::ReverseTime(rt) = intra {
                let fx = QEffects::new(rt);
                let weeks = (0..tau.div_ceil(7))
                    .map(|w| {
                        std::array::from_fn(|k| {
                            let pat = rt.covariates.pattern(table, t, t + 7 * w + k + 1);
                            let q = crate::glm::special::sigmoid(fx.eta(pat));
                            let idx = rt
                                .covariates
                                .terms(pat)
                                .iter()
                                .filter_map(|term| layout.gamma.get(term).copied())
                                .collect();
                            (q, idx)
                        })
                    })
                    .collect();
                reverse = Some(ReversePart { weeks });
            }
        }
        Self {
            model,
            lambda,
            row,
            occurrence,
            week,
            dow: f.dow as usize,
            reverse,
        }
    }

    fn week_scores(&self, w: usize) -> (f64, f64) {
        let wp = self.week.as_ref().expect("weekly model");
        let (mu, phi) = (wp.mu, wp.phi);
        let wf = w as f64;
        let s = phi * (wf - mu) / (phi + mu);
        let r = phi * (digamma_diff(phi, wf) + (phi / (phi + mu)).ln() + (mu - wf) / (phi + mu));
        (s, r)
    }

    /// Add `sum_d c_d d log p_td` to `g`; matrix and stationary parts go to accumulators.
    fn accumulate(
        &self,
        layout: &ParamLayout,
        c: &[f64],
        g: &mut [f64],
        matrix_acc: &mut [[f64; 7]; 7],
        stationary_acc: &mut [f64],
    ) {
        match &self.model.reporting {
            ReportingModel::Stationary(_) => {
                for (d, v) in c.iter().enumerate() {
                    stationary_acc[d] += v;
                }
            }
            ReportingModel::Weekly { intra, .. } => {
                let wp = self.week.as_ref().expect("weekly model");
                for (w, chunk) in c.chunks(7).enumerate() {
                    let cw: f64 = chunk.iter().sum();
                    if cw != 0.0 {
                        let (s, r) = self.week_scores(w);
                        for &i in &wp.theta_idx {
                            g[i] += cw * s;
                        }
                        if let Some(i) = layout.ln_phi {
                            g[i] += cw * r;
                        }
                    }
                    match intra {
                        IntraModel::Matrix(_) => {
                            for (j, v) in chunk.iter().enumerate() {
                                let lvl = wday_level(self.dow as u8, j).expect("offset < 7").index();
                                matrix_acc[self.dow - 1][lvl] += v;
                            }
                        }
                        IntraModel::ReverseTime(_) => {
                            let rp = self.reverse.as_ref().expect("reverse-time parts");
                            let qs = &rp.weeks[w];
                            let mut below = chunk[0];
                            for k in 1..7 {
                                let ck = chunk.get(k).copied().unwrap_or(0.0);
                                let (q, idx) = &qs[k - 1];
                                let coef = ck * (1.0 - q) - q * below;
                                if coef != 0.0 {
                                    for &i in idx {
                                        g[i] += coef;
                                    }
                                }
                                below += ck;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Sparse score `c * d log(lambda_t p_td)` of a single cell.
    pub fn cell_score(&self, layout: &ParamLayout, d: usize, c: f64, out: &mut Vec<(usize, f64)>) {
        for &i in &self.occurrence {
            out.push((i, c));
        }
        match &self.model.reporting {
            ReportingModel::Stationary(s) => {
                for (l, i) in layout.stationary.iter().enumerate() {
                    if let Some(i) = i {
                        let ind = if l == d { 1.0 } else { 0.0 };
                        out.push((*i, c * (ind - s.p[l])));
                    }
                }
            }
            ReportingModel::Weekly { intra, .. } => {
                let wp = self.week.as_ref().expect("weekly model");
                let (w, j) = (d / 7, d % 7);
                let (s, r) = self.week_scores(w);
                for &i in &wp.theta_idx {
                    out.push((i, c * s));
                }
                if let Some(i) = layout.ln_phi {
                    out.push((i, c * r));
                }
                match intra {
                    IntraModel::Matrix(m) => {
                        let row = self.dow - 1;
                        let lvl = wday_level(self.dow as u8, j).expect("offset < 7").index();
                        for l in 0..7 {
                            if let Some(i) = layout.day[row][l] {
                                let ind = if l == lvl { 1.0 } else { 0.0 };
                                out.push((i, c * (ind - m.p[row][l])));
                            }
                        }
                    }
                    IntraModel::ReverseTime(_) => {
                        let rp = self.reverse.as_ref().expect("reverse-time parts");
                        for k in 1..7 {
                            let (q, idx) = &rp.weeks[w][k - 1];
                            let coef = if k == j {
                                1.0 - q
                            } else if k > j {
                                -q
                            } else {
                                continue;
                            };
                            for &i in idx {
                                out.push((i, c * coef));
                            }
                        }
                    }
                }
            }
        }
    }
}
