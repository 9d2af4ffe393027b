use nalgebra::DMatrix;
use serde::Serialize;

use super::design::DesignMatrix;
use super::special::{digamma_diff, log1pexp, nb_log_pmf, sigmoid, trigamma_diff};
use crate::error::{Error, Result};

/// Magnitude assigned to coefficients of separated indicator columns.
pub const STRUCTURAL_COEF: f64 = 30.0;

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Gradient sup-norm tolerance, scaled by `max(1, total response weight)`.
    pub grad_tol: f64,
    pub max_halvings: usize,
    pub divergence_bound: f64,
    pub phi_cap: f64,
    pub start: Option<Vec<f64>>,
    pub phi_start: Option<f64>,
    /// Hold the negative binomial dispersion fixed instead of estimating it.
    pub fixed_phi: Option<f64>,
    /// Fix separated indicator columns at `±STRUCTURAL_COEF` instead of failing.
    pub structural_zeros: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_tol: 1e-10,
            grad_tol: 1e-8,
            max_halvings: 20,
            divergence_bound: 50.0,
            phi_cap: 1e8,
            start: None,
            phi_start: None,
            fixed_phi: None,
            structural_zeros: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Negative binomial dispersion; `None` for the other families.
    pub dispersion: Option<f64>,
    /// Dispersion reached the cap: the fit is the Poisson limit.
    pub poisson_limit: bool,
    pub loglik: f64,
    /// Expected information for the coefficients.
    #[serde(skip)]
    pub fisher_information: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Columns fixed at `±STRUCTURAL_COEF` because their rows carry no information.
    pub structural: Vec<usize>,
}

/// Response data and family.
#[derive(Clone, Copy, Debug)]
pub enum Response<'a> {
    Poisson(&'a [f64]),
    NegBin(&'a [f64]),
    Binomial { successes: &'a [f64], trials: &'a [f64] },
}

#[derive(Clone, Copy)]
enum Kind<'a> {
    Poisson(&'a [f64]),
    NegBin(&'a [f64], f64),
    Logistic(&'a [f64], &'a [f64]),
}

impl Kind<'_> {
    /// Row log-likelihood, first derivative in eta, and Fisher weight (all unweighted).
    #[inline]
    fn row(&self, i: usize, eta: f64) -> (f64, f64, f64) {
        match *self {
            Kind::Poisson(y) => {
                let mu = eta.exp();
                (y[i] * eta - mu, y[i] - mu, mu)
            }
            Kind::NegBin(y, phi) => {
                let mu = eta.exp();
                let r = phi / (phi + mu);
                (nb_log_pmf(y[i], mu, phi), (y[i] - mu) * r, mu * r)
            }
            Kind::Logistic(s, n) => {
                let p = sigmoid(eta);
                (s[i] * eta - n[i] * log1pexp(eta), s[i] - n[i] * p, n[i] * p * (1.0 - p))
            }
        }
    }

    fn loglik(&self, x: &DesignMatrix, eta: &[f64]) -> f64 {
        eta.iter()
            .enumerate()
            .map(|(i, &e)| {
                let w = x.weight(i);
                if w == 0.0 {
                    0.0
                } else {
                    w * self.row(i, e).0
                }
            })
            .sum()
    }

    fn scale(&self, x: &DesignMatrix) -> f64 {
        let total: f64 = match *self {
            Kind::Poisson(y) | Kind::NegBin(y, _) => {
                y.iter().zip(x.weights()).map(|(y, w)| w * y.abs()).sum()
            }
            Kind::Logistic(_, n) => n.iter().zip(x.weights()).map(|(n, w)| w * n).sum(),
        };
        total.max(1.0)
    }
}

struct NewtonOut {
    beta: Vec<f64>,
    loglik: f64,
    info: DMatrix<f64>,
    converged: bool,
    iterations: usize,
}

fn newton(x: &DesignMatrix, kind: Kind<'_>, beta0: Vec<f64>, opts: &FitOptions) -> Result<NewtonOut> {
    let n = x.nrows();
    let mut beta = beta0;
    let mut eta = x.eta(&beta);
    let mut ll = kind.loglik(x, &eta);
    if !ll.is_finite() {
        return Err(Error::NonFinite("log-likelihood at the starting point".into()));
    }
    let gtol = opts.grad_tol * kind.scale(x);
    let mut rel_change = f64::INFINITY;
    let mut d1 = vec![0.0; n];
    let mut fw = vec![0.0; n];
    for iter in 0..=opts.max_iter {
        for i in 0..n {
            let w = x.weight(i);
            if w == 0.0 {
                d1[i] = 0.0;
                fw[i] = 0.0;
                continue;
            }
            let (_, a, b) = kind.row(i, eta[i]);
            d1[i] = w * a;
            fw[i] = w * b;
        }
        let g = x.xt_vec(&d1);
        let info = x.gram(&fw);
        let gmax = g.amax();
        if gmax < gtol && (rel_change < opts.rel_tol || gmax == 0.0) {
            return Ok(NewtonOut {
                beta,
                loglik: ll,
                info,
                converged: true,
                iterations: iter,
            });
        }
        if iter == opts.max_iter {
            return Ok(NewtonOut {
                beta,
                loglik: ll,
                info,
                converged: false,
                iterations: iter,
            });
        }
        let chol = info.clone().cholesky().ok_or_else(|| rank_error(x, &info))?;
        let delta = chol.solve(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = beta.iter().zip(delta.iter()).map(|(b, d)| b + step * d).collect();
            let eta_c = x.eta(&cand);
            let ll_c = kind.loglik(x, &eta_c);
            if ll_c.is_finite() && ll_c >= ll - 1e-13 * ll.abs().max(1.0) {
                accepted = Some((cand, eta_c, ll_c));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, eta_c, ll_c)) = accepted else {
            // No ascent possible along the Newton direction: numerically at the optimum.
            return Ok(NewtonOut {
                beta,
                loglik: ll,
                info,
                converged: gmax < gtol * 1e3,
                iterations: iter,
            });
        };
        rel_change = (ll_c - ll).abs() / ll_c.abs().max(1.0);
        beta = cand;
        eta = eta_c;
        ll = ll_c;
        if let Some(dir) = divergence(x, &beta, opts.divergence_bound) {
            return Err(Error::Separation { direction: dir });
        }
    }
    unreachable!()
}

fn rank_error(x: &DesignMatrix, info: &DMatrix<f64>) -> Error {
    let weak: Vec<&str> = (0..info.nrows())
        .filter(|&j| info[(j, j)] <= 1e-12 * info.diagonal().amax().max(1e-300))
        .map(|j| x.names()[j].as_str())
        .collect();
    if weak.is_empty() {
        Error::RankDeficient(format!("information matrix of {} columns is not positive definite", info.nrows()))
    } else {
        Error::RankDeficient(format!("no information on {}", weak.join(", ")))
    }
}

fn divergence(x: &DesignMatrix, beta: &[f64], bound: f64) -> Option<String> {
    let parts: Vec<String> = beta
        .iter()
        .enumerate()
        .filter(|(_, b)| b.abs() > bound)
        .map(|(j, b)| format!("{}{}", if *b > 0.0 { "+" } else { "-" }, x.names()[j]))
        .collect();
    (!parts.is_empty()).then(|| parts.join(" "))
}

/// Separated indicator columns: `(column, sign)` of the diverging direction.
fn find_separation(x: &DesignMatrix, kind: Kind<'_>, rows: &[bool], cols: &[bool]) -> Vec<(usize, f64)> {
    let p = x.ncols();
    let mut nonneg = vec![true; p];
    let mut present = vec![false; p];
    let mut lo = vec![0.0; p];
    let mut hi = vec![0.0; p];
    for i in 0..x.nrows() {
        let w = x.weight(i);
        if !rows[i] || w == 0.0 {
            continue;
        }
        let (a, b) = match kind {
            Kind::Poisson(y) | Kind::NegBin(y, _) => (y[i], f64::INFINITY),
            Kind::Logistic(s, n) => (s[i], n[i] - s[i]),
        };
        let (idx, val) = x.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            if v < 0.0 {
                nonneg[j] = false;
            }
            if v > 0.0 {
                present[j] = true;
                lo[j] += w * v * a;
                hi[j] += w * v * b;
            }
        }
    }
    (0..p)
        .filter(|&j| cols[j] && nonneg[j] && present[j])
        .filter_map(|j| {
            if lo[j] <= 0.0 {
                Some((j, -1.0))
            } else if hi[j] <= 0.0 {
                Some((j, 1.0))
            } else {
                None
            }
        })
        .collect()
}

struct Reduced {
    design: DesignMatrix,
    rows: Vec<bool>,
    cols: Vec<bool>,
    structural: Vec<(usize, f64)>,
}

fn reduce(x: &DesignMatrix, kind: Kind<'_>, opts: &FitOptions) -> Result<Option<Reduced>> {
    let mut rows = vec![true; x.nrows()];
    let mut cols = vec![true; x.ncols()];
    let mut structural = Vec::new();
    loop {
        let sep = find_separation(x, kind, &rows, &cols);
        if sep.is_empty() {
            break;
        }
        if !opts.structural_zeros {
            let dir = sep
                .iter()
                .map(|&(j, s)| format!("{}{}", if s > 0.0 { "+" } else { "-" }, x.names()[j]))
                .collect::<Vec<_>>()
                .join(" ");
            return Err(Error::Separation { direction: dir });
        }
        for &(j, s) in &sep {
            cols[j] = false;
            structural.push((j, s));
        }
        for (i, r) in rows.iter_mut().enumerate() {
            if *r && x.row(i).0.iter().any(|&j| !cols[j]) {
                *r = false;
            }
        }
    }
    // Columns left without any positive-weight row are not estimable.
    let mut supported = vec![false; x.ncols()];
    for i in 0..x.nrows() {
        if rows[i] && x.weight(i) > 0.0 {
            for &j in x.row(i).0 {
                supported[j] = true;
            }
        }
    }
    for j in 0..x.ncols() {
        if cols[j] && !supported[j] {
            cols[j] = false;
        }
    }
    if structural.is_empty() && cols.iter().all(|&c| c) {
        return Ok(None);
    }
    Ok(Some(Reduced {
        design: x.restrict(&rows, &cols),
        rows,
        cols,
        structural,
    }))
}

fn subset(v: &[f64], keep: &[bool]) -> Vec<f64> {
    v.iter().zip(keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect()
}

fn wls_start(x: &DesignMatrix, z: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let zw: Vec<f64> = (0..x.nrows()).map(|i| w[i] * (z[i] - x.offset(i))).collect();
    let rhs = x.xt_vec(&zw);
    let g = x.gram(w);
    let chol = g.clone().cholesky().ok_or_else(|| rank_error(x, &g))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

fn start_count(x: &DesignMatrix, y: &[f64], opts: &FitOptions) -> Result<Vec<f64>> {
    if let Some(s) = &opts.start {
        return Ok(s.clone());
    }
    let wsum: f64 = x.weights().iter().sum();
    let ybar = y.iter().zip(x.weights()).map(|(y, w)| y * w).sum::<f64>() / wsum.max(1e-300);
    let c = 0.1 * ybar.max(1e-8);
    let z: Vec<f64> = y.iter().map(|v| (v + c).ln()).collect();
    let w: Vec<f64> = y.iter().zip(x.weights()).map(|(v, w)| w * (v + c)).collect();
    wls_start(x, &z, &w)
}

fn start_logistic(x: &DesignMatrix, s: &[f64], n: &[f64], opts: &FitOptions) -> Result<Vec<f64>> {
    if let Some(st) = &opts.start {
        return Ok(st.clone());
    }
    let mut z = Vec::with_capacity(s.len());
    let mut w = Vec::with_capacity(s.len());
    for i in 0..s.len() {
        let p = (s[i] + 0.5) / (n[i] + 1.0);
        z.push((p / (1.0 - p)).ln());
        w.push(x.weight(i) * n[i] * p * (1.0 - p));
    }
    wls_start(x, &z, &w)
}

fn expand(
    p: usize,
    red: &Option<Reduced>,
    beta: Vec<f64>,
    info: DMatrix<f64>,
) -> (Vec<f64>, DMatrix<f64>, Vec<usize>) {
    let Some(red) = red else {
        return (beta, info, Vec::new());
    };
    let map: Vec<usize> = (0..p).filter(|&j| red.cols[j]).collect();
    let mut full = vec![0.0; p];
    let mut full_info = DMatrix::zeros(p, p);
    for (a, &j) in map.iter().enumerate() {
        full[j] = beta[a];
        for (b, &k) in map.iter().enumerate() {
            full_info[(j, k)] = info[(a, b)];
        }
    }
    let mut structural = Vec::new();
    for &(j, s) in &red.structural {
        full[j] = s * STRUCTURAL_COEF;
        structural.push(j);
    }
    structural.sort_unstable();
    (full, full_info, structural)
}

fn check_lengths(x: &DesignMatrix, v: &[f64], what: &str) -> Result<()> {
    if v.len() != x.nrows() {
        return Err(Error::invalid(format!(
            "{what} has {} entries for {} rows",
            v.len(),
            x.nrows()
        )));
    }
    if v.iter().any(|y| !(y.is_finite() && *y >= 0.0)) {
        return Err(Error::invalid(format!("{what} must be finite and nonnegative")));
    }
    Ok(())
}

/// Maximize `sum_i w_i { y_i eta_i - exp(eta_i) }` with `eta = offset + X beta`.
pub fn fit_weighted_poisson(x: &DesignMatrix, y: &[f64], opts: &FitOptions) -> Result<FitResult> {
    check_lengths(x, y, "response")?;
    let red = reduce(x, Kind::Poisson(y), opts)?;
    let (design, yy) = match &red {
        Some(r) => (&r.design, subset(y, &r.rows)),
        None => (x, y.to_vec()),
    };
    let mut o = opts.clone();
    if let (Some(r), Some(s)) = (&red, &opts.start) {
        o.start = Some(subset(s, &r.cols));
    }
    let beta0 = start_count(design, &yy, &o)?;
    let out = newton(design, Kind::Poisson(&yy), beta0, &o)?;
    let (coefficients, fisher_information, structural) = expand(x.ncols(), &red, out.beta, out.info);
    Ok(FitResult {
        names: x.names().to_vec(),
        coefficients,
        dispersion: None,
        poisson_limit: false,
        loglik: out.loglik,
        fisher_information,
        converged: out.converged,
        iterations: out.iterations,
        structural,
    })
}

/// Weighted logistic regression with fractional successes and trials.
pub fn fit_weighted_logistic(
    x: &DesignMatrix,
    successes: &[f64],
    trials: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    check_lengths(x, successes, "successes")?;
    check_lengths(x, trials, "trials")?;
    let mut s = successes.to_vec();
    for (si, &ni) in s.iter_mut().zip(trials) {
        if *si > ni * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::invalid(format!("successes {si} exceed trials {ni}")));
        }
        *si = si.min(ni);
    }
    let red = reduce(x, Kind::Logistic(&s, trials), opts)?;
    let (design, ss, nn) = match &red {
        Some(r) => (&r.design, subset(&s, &r.rows), subset(trials, &r.rows)),
        None => (x, s.clone(), trials.to_vec()),
    };
    let mut o = opts.clone();
    if let (Some(r), Some(st)) = (&red, &opts.start) {
        o.start = Some(subset(st, &r.cols));
    }
    let beta0 = start_logistic(design, &ss, &nn, &o)?;
    let out = newton(design, Kind::Logistic(&ss, &nn), beta0, &o)?;
    let (coefficients, fisher_information, structural) = expand(x.ncols(), &red, out.beta, out.info);
    Ok(FitResult {
        names: x.names().to_vec(),
        coefficients,
        dispersion: None,
        poisson_limit: false,
        loglik: out.loglik,
        fisher_information,
        converged: out.converged,
        iterations: out.iterations,
        structural,
    })
}

/// Dispersion score and curvature in `u = ln phi` at fixed means.
fn phi_derivatives(x: &DesignMatrix, y: &[f64], eta: &[f64], phi: f64) -> (f64, f64) {
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for i in 0..y.len() {
        let w = x.weight(i);
        if w == 0.0 {
            continue;
        }
        let mu = eta[i].exp();
        let pm = phi + mu;
        d1 += w * (digamma_diff(phi, y[i]) - (mu / phi).ln_1p() + (mu - y[i]) / pm);
        d2 += w * (trigamma_diff(phi, y[i]) + mu / (phi * pm) - (mu - y[i]) / (pm * pm));
    }
    (phi * d1, phi * phi * d2 + phi * d1)
}

fn nb_loglik(x: &DesignMatrix, y: &[f64], eta: &[f64], phi: f64) -> f64 {
    Kind::NegBin(y, phi).loglik(x, eta)
}

/// Maximize the profile in `ln phi`; returns the new dispersion and whether it hit the cap.
fn phi_step(x: &DesignMatrix, y: &[f64], eta: &[f64], phi0: f64, opts: &FitOptions) -> (f64, bool) {
    let cap_u = opts.phi_cap.ln();
    let mut u = phi0.ln().min(cap_u);
    let mut f = nb_loglik(x, y, eta, u.exp());
    let tol = 1e-10 * Kind::NegBin(y, 1.0).scale(x);
    for _ in 0..200 {
        let (g, h) = phi_derivatives(x, y, eta, u.exp());
        if g.abs() < tol {
            break;
        }
        if u >= cap_u && g > 0.0 {
            return (opts.phi_cap, true);
        }
        let mut delta = if h < 0.0 { -g / h } else { g.signum() };
        delta = delta.clamp(-5.0, 5.0);
        let mut moved = false;
        for _ in 0..=opts.max_halvings {
            let cand = (u + delta).min(cap_u);
            let fc = nb_loglik(x, y, eta, cand.exp());
            if fc.is_finite() && fc >= f {
                let step = cand - u;
                u = cand;
                f = fc;
                moved = step.abs() > 1e-14;
                break;
            }
            delta *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let (g, _) = phi_derivatives(x, y, eta, u.exp());
    let at_cap = u >= cap_u - 1e-12 && g >= 0.0;
    (u.exp(), at_cap)
}

/// Negative binomial regression with mean `exp(offset + X beta)` and dispersion `phi`.
pub fn fit_weighted_negbin(x: &DesignMatrix, y: &[f64], opts: &FitOptions) -> Result<FitResult> {
    check_lengths(x, y, "response")?;
    let red = reduce(x, Kind::Poisson(y), opts)?;
    let (design, yy) = match &red {
        Some(r) => (&r.design, subset(y, &r.rows)),
        None => (x, y.to_vec()),
    };
    let mut o = opts.clone();
    if let (Some(r), Some(s)) = (&red, &opts.start) {
        o.start = Some(subset(s, &r.cols));
    }
    let mut beta = match &o.start {
        Some(s) => s.clone(),
        None => newton(design, Kind::Poisson(&yy), start_count(design, &yy, &o)?, &o)?.beta,
    };
    let mut phi = match (opts.fixed_phi, opts.phi_start) {
        (Some(p), _) | (None, Some(p)) => p,
        (None, None) => moment_phi(design, &yy, &beta, opts.phi_cap),
    };
    let mut ll_prev = f64::NEG_INFINITY;
    let mut at_cap = false;
    let mut iterations = 0;
    let mut converged = false;
    let mut info = DMatrix::zeros(design.ncols(), design.ncols());
    let mut ll = f64::NEG_INFINITY;
    for outer in 0..o.max_iter {
        o.start = Some(beta.clone());
        let out = newton(design, Kind::NegBin(&yy, phi), beta.clone(), &o)?;
        iterations += out.iterations;
        beta = out.beta;
        info = out.info;
        let eta = design.eta(&beta);
        let phi_old = phi;
        if opts.fixed_phi.is_none() {
            let (p, c) = phi_step(design, &yy, &eta, phi, opts);
            phi = p;
            at_cap = c;
        }
        ll = nb_loglik(design, &yy, &eta, phi);
        let rel = (ll - ll_prev).abs() / ll.abs().max(1.0);
        let dphi = (phi.ln() - phi_old.ln()).abs();
        if out.converged && outer > 0 && rel < opts.rel_tol && dphi < 1e-8 {
            converged = true;
            break;
        }
        if out.converged && opts.fixed_phi.is_some() {
            converged = true;
            break;
        }
        ll_prev = ll;
    }
    // Refresh the information at the final dispersion.
    let eta = design.eta(&beta);
    let fw: Vec<f64> = (0..design.nrows())
        .map(|i| design.weight(i) * Kind::NegBin(&yy, phi).row(i, eta[i]).2)
        .collect();
    if converged {
        info = design.gram(&fw);
    }
    let (coefficients, fisher_information, structural) = expand(x.ncols(), &red, beta, info);
    Ok(FitResult {
        names: x.names().to_vec(),
        coefficients,
        dispersion: Some(phi),
        poisson_limit: at_cap,
        loglik: ll,
        fisher_information,
        converged,
        iterations,
        structural,
    })
}

fn moment_phi(x: &DesignMatrix, y: &[f64], beta: &[f64], cap: f64) -> f64 {
    let eta = x.eta(beta);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..y.len() {
        let w = x.weight(i);
        let mu = eta[i].exp();
        num += w * mu * mu;
        den += w * ((y[i] - mu).powi(2) - mu);
    }
    if den > 0.0 && num > 0.0 {
        (num / den).clamp(1e-4, cap)
    } else {
        cap
    }
}

/// Log-likelihood at `point` (for the negative binomial the last entry is `ln phi`).
pub fn loglik(x: &DesignMatrix, response: Response<'_>, point: &[f64]) -> f64 {
    let p = x.ncols();
    let eta = x.eta(&point[..p]);
    match response {
        Response::Poisson(y) => Kind::Poisson(y).loglik(x, &eta),
        Response::NegBin(y) => Kind::NegBin(y, point[p].exp()).loglik(x, &eta),
        Response::Binomial { successes, trials } => Kind::Logistic(successes, trials).loglik(x, &eta),
    }
}

/// Analytic score at `point`, matching the layout of [`loglik`].
pub fn score(x: &DesignMatrix, response: Response<'_>, point: &[f64]) -> Vec<f64> {
    let p = x.ncols();
    let eta = x.eta(&point[..p]);
    let kind = match response {
        Response::Poisson(y) => Kind::Poisson(y),
        Response::NegBin(y) => Kind::NegBin(y, point[p].exp()),
        Response::Binomial { successes, trials } => Kind::Logistic(successes, trials),
    };
    let d1: Vec<f64> = (0..x.nrows())
        .map(|i| x.weight(i) * kind.row(i, eta[i]).1)
        .collect();
    let mut g: Vec<f64> = x.xt_vec(&d1).iter().copied().collect();
    if let Response::NegBin(y) = response {
        g.push(phi_derivatives(x, y, &eta, point[p].exp()).0);
    }
    g
}

/// Max over coordinates of `|analytic - central difference| / (1 + |analytic|)`.
pub fn check_gradient(x: &DesignMatrix, response: Response<'_>, point: &[f64]) -> f64 {
    let analytic = score(x, response, point);
    let mut worst: f64 = 0.0;
    let mut work = point.to_vec();
    for j in 0..point.len() {
        let h = 1e-6 * point[j].abs().max(1.0);
        work[j] = point[j] + h;
        let up = loglik(x, response, &work);
        work[j] = point[j] - h;
        let down = loglik(x, response, &work);
        work[j] = point[j];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((analytic[j] - fd).abs() / (1.0 + analytic[j].abs()));
    }
    worst
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|j| self.coefficients[j])
    }

    /// Standard errors from the inverse expected information.
    pub fn standard_errors(&self) -> Result<Vec<f64>> {
        let keep: Vec<usize> = (0..self.coefficients.len())
            .filter(|j| !self.structural.contains(j) && self.fisher_information[(*j, *j)] > 0.0)
            .collect();
        let sub = DMatrix::from_fn(keep.len(), keep.len(), |a, b| {
            self.fisher_information[(keep[a], keep[b])]
        });
        let inv = sub
            .cholesky()
            .ok_or_else(|| Error::Singular("information matrix".into()))?
            .inverse();
        let mut out = vec![f64::NAN; self.coefficients.len()];
        for (a, &j) in keep.iter().enumerate() {
            out[j] = inv[(a, a)].sqrt();
        }
        Ok(out)
    }
}
