use super::special::nb_log_pmf;
use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

fn intercept(n: usize, offset: Option<Vec<f64>>, weight: Option<Vec<f64>>) -> DesignMatrix {
    DesignMatrix::from_dense(names(1), &vec![vec![1.0]; n], offset, weight).unwrap()
}

/// Dense Newton on an arbitrary twice-differentiable objective in two variables.
fn newton2(
    mut b: [f64; 2],
    grad: impl Fn([f64; 2]) -> [f64; 2],
    hess: impl Fn([f64; 2]) -> [[f64; 2]; 2],
) -> [f64; 2] {
    for _ in 0..100 {
        let g = grad(b);
        let h = hess(b);
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let d0 = (h[1][1] * g[0] - h[0][1] * g[1]) / det;
        let d1 = (-h[1][0] * g[0] + h[0][0] * g[1]) / det;
        b = [b[0] - d0, b[1] - d1];
    }
    b
}

#[test]
fn poisson_intercept_closed_forms() {
    let opts = FitOptions::default();
    let fit = fit_weighted_poisson(&intercept(2, None, None), &[2.0, 4.0], &opts).unwrap();
    assert!((fit.coefficients[0] - 3f64.ln()).abs() < 1e-10);
    assert!(fit.converged);

    let off = vec![1f64.ln(), 2f64.ln()];
    let fit = fit_weighted_poisson(&intercept(2, Some(off), None), &[2.0, 4.0], &opts).unwrap();
    assert!((fit.coefficients[0] - 2f64.ln()).abs() < 1e-10);
}

#[test]
fn poisson_binary_matches_dense_newton() {
    let x = [0.0, 0.0, 1.0, 1.0];
    let y = [1.0, 2.0, 6.0, 8.0];
    let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![1.0, v]).collect();
    let design = DesignMatrix::from_dense(names(2), &rows, None, None).unwrap();
    let fit = fit_weighted_poisson(&design, &y, &FitOptions::default()).unwrap();
    let oracle = newton2(
        [0.0, 0.0],
        |b| {
            let mut g = [0.0; 2];
            for i in 0..4 {
                let r = y[i] - (b[0] + b[1] * x[i]).exp();
                g[0] += r;
                g[1] += r * x[i];
            }
            g
        },
        |b| {
            let mut h = [[0.0; 2]; 2];
            for i in 0..4 {
                let m = (b[0] + b[1] * x[i]).exp();
                h[0][0] -= m;
                h[0][1] -= m * x[i];
                h[1][0] -= m * x[i];
                h[1][1] -= m * x[i] * x[i];
            }
            h
        },
    );
    assert!((fit.coefficients[0] - oracle[0]).abs() < 1e-8);
    assert!((fit.coefficients[1] - oracle[1]).abs() < 1e-8);
}

#[test]
fn poisson_row_splitting_invariance() {
    let rows = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]];
    let d1 = DesignMatrix::from_dense(names(2), &rows[..2], None, Some(vec![1.0, 2.0])).unwrap();
    let d2 = DesignMatrix::from_dense(names(2), &rows[..], None, Some(vec![1.0, 0.5, 1.5])).unwrap();
    let a = fit_weighted_poisson(&d1, &[3.0, 5.0], &FitOptions::default()).unwrap();
    let b = fit_weighted_poisson(&d2, &[3.0, 5.0, 5.0], &FitOptions::default()).unwrap();
    for j in 0..2 {
        assert!((a.coefficients[j] - b.coefficients[j]).abs() < 1e-10);
    }
}

#[test]
fn poisson_separation_reported() {
    let rows = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]];
    let d = DesignMatrix::from_dense(names(2), &rows, None, None).unwrap();
    let err = fit_weighted_poisson(&d, &[2.0, 3.0, 0.0], &FitOptions::default()).unwrap_err();
    match err {
        crate::Error::Separation { direction } => assert_eq!(direction, "-x1"),
        other => panic!("unexpected {other:?}"),
    }
    let opts = FitOptions {
        structural_zeros: true,
        ..Default::default()
    };
    let fit = fit_weighted_poisson(&d, &[2.0, 3.0, 0.0], &opts).unwrap();
    assert_eq!(fit.structural, vec![1]);
    assert_eq!(fit.coefficients[1], -STRUCTURAL_COEF);
    assert!((fit.coefficients[0] - 2.5f64.ln()).abs() < 1e-10);
}

#[test]
fn rank_deficiency_reported() {
    let rows = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
    let d = DesignMatrix::from_dense(names(2), &rows, None, None).unwrap();
    assert!(matches!(
        fit_weighted_poisson(&d, &[2.0, 3.0], &FitOptions::default()),
        Err(crate::Error::RankDeficient(_))
    ));
}

#[test]
fn negbin_intercept_mean_is_sample_mean() {
    let y = [0.0, 3.0, 1.0, 9.0, 2.0, 0.0, 7.0];
    let w = vec![1.0, 0.5, 2.0, 1.0, 1.0, 3.0, 0.25];
    let fit = fit_weighted_negbin(&intercept(7, None, Some(w.clone())), &y, &FitOptions::default()).unwrap();
    let mean = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
    assert!((fit.coefficients[0].exp() - mean).abs() < 1e-8);
    assert!(fit.converged);
    assert!(!fit.poisson_limit);
}

#[test]
fn negbin_dispersion_matches_profile_oracle() {
    let y = [0.0, 0.0, 5.0, 5.0];
    let fit = fit_weighted_negbin(&intercept(4, None, None), &y, &FitOptions::default()).unwrap();
    let mu = 2.5;
    let profile = |u: f64| -> f64 { y.iter().map(|&v| nb_log_pmf(v, mu, u.exp())).sum() };
    // Grid on ln(phi), then bisection on the sign of the numerical derivative.
    let grid: Vec<f64> = (0..=400).map(|k| -6.0 + 0.03 * k as f64).collect();
    let best = grid
        .iter()
        .copied()
        .max_by(|a, b| profile(*a).partial_cmp(&profile(*b)).unwrap())
        .unwrap();
    let slope = |u: f64| (profile(u + 1e-7) - profile(u - 1e-7)) / 2e-7;
    let (mut lo, mut hi) = (best - 0.03, best + 0.03);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let phi_oracle = (0.5 * (lo + hi)).exp();
    let phi = fit.dispersion.unwrap();
    assert!((phi - phi_oracle).abs() < 1e-6 * phi_oracle.max(1.0), "{phi} vs {phi_oracle}");
}

#[test]
fn negbin_poisson_limit() {
    // Underdispersed counts: the profile increases all the way to the cap.
    let y = [3.0, 4.0, 5.0, 4.0, 3.0, 5.0, 4.0, 6.0, 2.0, 4.0, 1.0, 1.0];
    let xs: Vec<f64> = (0..12).map(|i| (i % 2) as f64).collect();
    let rows: Vec<Vec<f64>> = xs.iter().map(|&v| vec![1.0, v]).collect();
    let d = DesignMatrix::from_dense(names(2), &rows, None, None).unwrap();
    let nb = fit_weighted_negbin(&d, &y, &FitOptions::default()).unwrap();
    let po = fit_weighted_poisson(&d, &y, &FitOptions::default()).unwrap();
    assert!(nb.poisson_limit);
    assert_eq!(nb.dispersion, Some(1e8));
    for j in 0..2 {
        assert!((nb.coefficients[j] - po.coefficients[j]).abs() < 1e-4);
    }
}

#[test]
fn negbin_poisson_limit_on_simulated_poisson() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pois = Poisson::new(4.0).unwrap();
    // Draw samples until one is not overdispersed, then check the limit.
    for _ in 0..50 {
        let y: Vec<f64> = (0..200).map(|_| pois.sample(&mut rng)).collect();
        let mean = y.iter().sum::<f64>() / 200.0;
        let ss: f64 = y.iter().map(|v| (v - mean).powi(2) - v).sum();
        if ss > 0.0 {
            continue;
        }
        let d = intercept(200, None, None);
        let nb = fit_weighted_negbin(&d, &y, &FitOptions::default()).unwrap();
        let po = fit_weighted_poisson(&d, &y, &FitOptions::default()).unwrap();
        assert!(nb.poisson_limit);
        assert!((nb.coefficients[0] - po.coefficients[0]).abs() < 1e-4);
        return;
    }
    panic!("no equidispersed sample drawn");
}

#[test]
fn logistic_closed_forms() {
    let d = intercept(1, None, None);
    let f = fit_weighted_logistic(&d, &[1.0], &[2.0], &FitOptions::default()).unwrap();
    assert!(f.coefficients[0].abs() < 1e-10);
    let f = fit_weighted_logistic(&d, &[3.0], &[4.0], &FitOptions::default()).unwrap();
    assert!((f.coefficients[0] - 3f64.ln()).abs() < 1e-10);
}

#[test]
fn logistic_fractional_matches_dense_newton() {
    let x = [0.0, 0.0, 1.0, 1.0, 1.0];
    let s = [0.3, 1.7, 2.25, 0.5, 3.1];
    let n = [1.2, 4.0, 3.0, 2.5, 3.5];
    let w = [1.0, 0.7, 1.3, 2.0, 0.4];
    let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![1.0, v]).collect();
    let d = DesignMatrix::from_dense(names(2), &rows, None, Some(w.to_vec())).unwrap();
    let fit = fit_weighted_logistic(&d, &s, &n, &FitOptions::default()).unwrap();
    let sig = |e: f64| 1.0 / (1.0 + (-e).exp());
    let oracle = newton2(
        [0.0, 0.0],
        |b| {
            let mut g = [0.0; 2];
            for i in 0..5 {
                let r = w[i] * (s[i] - n[i] * sig(b[0] + b[1] * x[i]));
                g[0] += r;
                g[1] += r * x[i];
            }
            g
        },
        |b| {
            let mut h = [[0.0; 2]; 2];
            for i in 0..5 {
                let p = sig(b[0] + b[1] * x[i]);
                let v = w[i] * n[i] * p * (1.0 - p);
                h[0][0] -= v;
                h[0][1] -= v * x[i];
                h[1][0] -= v * x[i];
                h[1][1] -= v * x[i] * x[i];
            }
            h
        },
    );
    assert!((fit.coefficients[0] - oracle[0]).abs() < 1e-8);
    assert!((fit.coefficients[1] - oracle[1]).abs() < 1e-8);
}

#[test]
fn logistic_separation_direction() {
    let rows = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]];
    let d = DesignMatrix::from_dense(names(2), &rows, None, None).unwrap();
    let err = fit_weighted_logistic(&d, &[1.0, 2.0, 3.0], &[3.0, 3.0, 3.0], &FitOptions::default()).unwrap_err();
    assert!(matches!(err, crate::Error::Separation { ref direction } if direction == "+x1"));
}

#[test]
fn gradient_examples() {
    let d = intercept(2, None, None);
    let y = [2.0, 4.0];
    let at = [3f64.ln()];
    assert!(check_gradient(&d, Response::Poisson(&y), &at) < 1e-6);
    assert!(score(&d, Response::Poisson(&y), &at)[0].abs() < 1e-12);

    let s = [0.5, 2.0];
    let n = [3.0, 2.5];
    let g = score(&d, Response::Binomial { successes: &s, trials: &n }, &[0.0]);
    assert_eq!(g[0], (0.5 - 1.5) + (2.0 - 1.25));
}

fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DesignMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut r = vec![1.0];
            r.extend((1..p).map(|_| rng.random_range(-1.0..1.0)));
            r
        })
        .collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
    let o: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    DesignMatrix::from_dense(names(p), &rows, Some(o), Some(w)).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let d = random_design(&mut rng, 30, 3);
        let y: Vec<f64> = (0..30).map(|_| rng.random_range(0..12) as f64).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
        assert!(check_gradient(&d, Response::Poisson(&y), &b) < 1e-5);
        let mut bp = b.clone();
        bp.push(rng.random_range(-1.0..2.0));
        assert!(check_gradient(&d, Response::NegBin(&y), &bp) < 1e-5);
        let n: Vec<f64> = (0..30).map(|_| rng.random_range(1.0..6.0)).collect();
        let s: Vec<f64> = n.iter().map(|v| v * rng.random_range(0.0..1.0)).collect();
        let r = Response::Binomial { successes: &s, trials: &n };
        assert!(check_gradient(&d, r, &b) < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn poisson_fit_has_vanishing_score(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_design(&mut rng, 40, 3);
        let y: Vec<f64> = (0..40).map(|_| rng.random_range(1..15) as f64).collect();
        let fit = fit_weighted_poisson(&d, &y, &FitOptions::default()).unwrap();
        let g = score(&d, Response::Poisson(&y), &fit.coefficients);
        let scale: f64 = y.iter().zip(d.weights()).map(|(a, b)| a * b).sum();
        prop_assert!(g.iter().all(|v| v.abs() < 1e-8 * scale));
        // Fisher information is positive definite.
        prop_assert!(fit.fisher_information.clone().cholesky().is_some());
    }
}
