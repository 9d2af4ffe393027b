//! Special functions used by the likelihoods.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Second derivative of `ln_gamma`, for `x > 0`.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    // Asymptotic series in 1/x with Bernoulli-number coefficients.
    let series = z * (1.0 / 6.0 - z * (1.0 / 30.0 - z * (1.0 / 42.0 - z * (1.0 / 30.0 - z * 5.0 / 66.0))));
    acc + 1.0 / x + z / 2.0 + series / x
}

/// `ln Γ(a + y) - ln Γ(a)`, summed term by term for small integral `y`.
pub fn ln_gamma_ratio(a: f64, y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    if y.fract() == 0.0 && y <= 64.0 {
        let mut s = 0.0;
        let mut k = 0.0;
        while k < y {
            s += (a + k).ln();
            k += 1.0;
        }
        s
    } else {
        ln_gamma(a + y) - ln_gamma(a)
    }
}

/// `ψ(a + y) - ψ(a)`, summed term by term for small integral `y`.
pub fn digamma_diff(a: f64, y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    if y.fract() == 0.0 && y <= 64.0 {
        let mut s = 0.0;
        let mut k = 0.0;
        while k < y {
            s += 1.0 / (a + k);
            k += 1.0;
        }
        s
    } else {
        digamma(a + y) - digamma(a)
    }
}

/// `ψ'(a + y) - ψ'(a)`, summed term by term for small integral `y`.
pub fn trigamma_diff(a: f64, y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    if y.fract() == 0.0 && y <= 64.0 {
        let mut s = 0.0;
        let mut k = 0.0;
        while k < y {
            s -= 1.0 / ((a + k) * (a + k));
            k += 1.0;
        }
        s
    } else {
        trigamma(a + y) - trigamma(a)
    }
}

/// Logistic function, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large `|x|`.
pub fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Log of the negative binomial pmf with mean `mu` and dispersion `phi` at `y`.
pub fn nb_log_pmf(y: f64, mu: f64, phi: f64) -> f64 {
    ln_gamma_ratio(phi, y) - ln_gamma(y + 1.0) - phi * (mu / phi).ln_1p()
        + if y > 0.0 { y * (mu / (phi + mu)).ln() } else { 0.0 }
}
