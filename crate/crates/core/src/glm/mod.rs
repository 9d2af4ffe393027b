//! Weighted Poisson, negative binomial and logistic regression.

mod design;
mod fit;
pub mod special;

pub use design::{DesignMatrix, TermDesignBuilder};
pub use fit::{
    check_gradient, fit_weighted_logistic, fit_weighted_negbin, fit_weighted_poisson, loglik, score,
    FitOptions, FitResult, Response, STRUCTURAL_COEF,
};

#[cfg(test)]
mod tests;
