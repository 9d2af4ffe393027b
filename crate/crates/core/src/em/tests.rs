use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::*;
use crate::calendar::CalendarConfig;
use crate::chain_ladder::fit_cl_em;
use crate::reporting::{IntraWeekMatrix, ReverseTimeCovariates, ReverseTimeModel, StationaryDelayModel, WeekDelayModel};
use crate::terms::Term;

fn cal() -> CalendarConfig {
    CalendarConfig::with_holidays(
        NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
        [
            NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2000, 5, 1).unwrap(),
        ],
        [],
    )
    .unwrap()
}

fn occurrence(log_rate: f64) -> OccurrenceModel {
    OccurrenceModel::Regression {
        alpha: Coefficients::from_pairs([(Term::Intercept, log_rate), (Term::Dow(6), 0.3)]),
        covariates: DayCovariates {
            dow: true,
            ..DayCovariates::intercept_only()
        },
    }
}

fn weekly_matrix(log_mu: f64, phi: f64) -> ReportingModel {
    ReportingModel::Weekly {
        week: WeekDelayModel {
            theta: Coefficients::from_pairs([(Term::Intercept, log_mu)]),
            phi,
            w_max: 104,
            covariates: DayCovariates::intercept_only(),
        },
        intra: IntraModel::Matrix(IntraWeekMatrix::case_study()),
    }
}

fn weekly_reverse(log_mu: f64, phi: f64) -> ReportingModel {
    ReportingModel::Weekly {
        week: WeekDelayModel {
            theta: Coefficients::from_pairs([(Term::Intercept, log_mu)]),
            phi,
            w_max: 104,
            covariates: DayCovariates::intercept_only(),
        },
        intra: IntraModel::ReverseTime(ReverseTimeModel {
            gamma: Coefficients::from_pairs([
                (Term::Intercept, -0.5),
                (Term::ReportDow(7), -2.5),
                (Term::Workdays(1), 0.3),
            ]),
            covariates: ReverseTimeCovariates::default(),
        }),
    }
}

fn simulate(model: &JointModel, tau: usize, seed: u64) -> RunoffTriangle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cal();
    let table = DayTable::new(&c, 3 * tau + 800).unwrap();
    let exposure = vec![1.0; tau];
    let mut cells = Vec::new();
    for t in 1..=tau {
        let lambda = model.occurrence.lambda(&table, t, 1.0);
        let row = model.reporting.row(&table, t, tau - t + 1);
        for (d, p) in row.iter().enumerate() {
            let m = lambda * p;
            if m > 0.0 {
                let n = Poisson::new(m).unwrap().sample(&mut rng) as u64;
                if n > 0 {
                    cells.push((t, d, n));
                }
            }
        }
    }
    RunoffTriangle::from_cells(tau, cells, exposure, c).unwrap()
}

fn poisson_cell_sum(model: &JointModel, tri: &RunoffTriangle, table: &DayTable) -> f64 {
    let tau = tri.tau();
    let mut s = 0.0;
    for t in 1..=tau {
        let lambda = model.occurrence.lambda(table, t, tri.exposure_at(t));
        for d in 0..=tau - t {
            let m = lambda * model.reporting.cell_probability(table, t, d);
            let n = tri.get(t, d) as f64;
            s += -m + if n > 0.0 { n * m.ln() } else { 0.0 };
        }
    }
    s
}

#[test]
fn loglik_equals_independent_poisson_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..10 {
        let truth = JointModel {
            occurrence: occurrence(rng.random_range(0.5..3.0)),
            reporting: if k % 2 == 0 {
                weekly_matrix(rng.random_range(-0.5..1.5), rng.random_range(0.2..3.0))
            } else {
                weekly_reverse(rng.random_range(-0.5..1.5), rng.random_range(0.2..3.0))
            },
            tau: 60,
        };
        let tri = simulate(&truth, 60, k);
        let table = DayTable::new(tri.calendar(), 400).unwrap();
        let a = observed_loglik(&truth, &tri, &table).unwrap();
        let b = poisson_cell_sum(&truth, &tri, &table);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn empty_triangle_loglik() {
    let tri = RunoffTriangle::from_cells(20, [], vec![2.0; 20], cal()).unwrap();
    let model = JointModel {
        occurrence: occurrence(0.0),
        reporting: weekly_matrix(0.2, 1.0),
        tau: 20,
    };
    let table = DayTable::new(tri.calendar(), 300).unwrap();
    let want: f64 = (1..=20)
        .map(|t| -model.occurrence.lambda(&table, t, 2.0) * model.reporting.reported_mass(&table, t, 20))
        .sum();
    assert!((observed_loglik(&model, &tri, &table).unwrap() - want).abs() < 1e-12);
}

#[test]
fn zero_probability_is_an_error() {
    let tri = RunoffTriangle::from_cells(3, [(1, 1, 2)], vec![1.0; 3], cal()).unwrap();
    let model = JointModel {
        occurrence: OccurrenceModel::Saturated { lambda: vec![5.0; 3] },
        reporting: ReportingModel::Stationary(StationaryDelayModel { p: vec![1.0, 0.0, 0.0] }),
        tau: 3,
    };
    let table = DayTable::new(tri.calendar(), 10).unwrap();
    assert!(matches!(
        observed_loglik(&model, &tri, &table),
        Err(Error::ZeroProbability { t: 1, d: 1, .. })
    ));
}

#[test]
fn e_step_cells() {
    let tri = RunoffTriangle::from_cells(3, [(1, 0, 4), (1, 2, 1), (2, 1, 3)], vec![1.0; 3], cal()).unwrap();
    let model = JointModel {
        occurrence: OccurrenceModel::Saturated { lambda: vec![10.0; 3] },
        reporting: ReportingModel::Stationary(StationaryDelayModel { p: vec![0.5, 0.3, 0.2] }),
        tau: 3,
    };
    let table = DayTable::new(tri.calendar(), 10).unwrap();
    let c = e_step(&model, &tri, &table);
    assert_eq!(c.expected[0], vec![4.0, 0.0, 1.0]);
    assert_eq!(c.expected[1][..2], [0.0, 3.0]);
    assert!((c.expected[1][2] - 2.0).abs() < 1e-15);
    assert!((c.expected[2][1] - 3.0).abs() < 1e-15);
    assert!(c.remainder.iter().all(|&r| r.abs() < 1e-12));
}

#[test]
fn chain_ladder_start_small() {
    let tri = RunoffTriangle::from_cells(2, [(1, 0, 2), (1, 1, 1), (2, 0, 3)], vec![1.0; 2], cal()).unwrap();
    let c = chain_ladder_counts(&tri);
    assert!((c.expected[1][1] - 1.5).abs() < 1e-15);
    assert_eq!(c.expected[0], vec![2.0, 1.0]);
    // Everything at delay zero: no lower-triangle mass.
    let tri = RunoffTriangle::from_cells(3, [(1, 0, 2), (2, 0, 1), (3, 0, 3)], vec![1.0; 3], cal()).unwrap();
    let c = chain_ladder_counts(&tri);
    assert!(c.expected.iter().flatten().filter(|v| **v != 0.0).count() == 3);
}

#[test]
fn occurrence_m_step_closed_form() {
    let table = DayTable::new(&cal(), 5).unwrap();
    let spec = OccurrenceSpec::Regression {
        covariates: DayCovariates::intercept_only(),
    };
    let m = occurrence_m_step(&[2.0, 4.0], &[1.0, 1.0], &spec, &table, None).unwrap();
    let OccurrenceModel::Regression { alpha, .. } = m else { panic!() };
    assert!((alpha.get(&Term::Intercept) - 3f64.ln()).abs() < 1e-10);
}

fn stationary_spec() -> ModelSpec {
    ModelSpec {
        occurrence: OccurrenceSpec::Saturated,
        reporting: ReportingSpec::Stationary,
    }
}

#[test]
fn stationary_em_converges_immediately_to_chain_ladder() {
    let truth = JointModel {
        occurrence: occurrence(2.0),
        reporting: weekly_matrix(0.0, 1.0),
        tau: 30,
    };
    let tri = simulate(&truth, 30, 11);
    let fit = fit_em(&tri, &stationary_spec(), &EmOptions::default()).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.iterations, 1);
    let cl = fit_cl_em(&tri).unwrap();
    let OccurrenceModel::Saturated { lambda } = &fit.model.occurrence else { panic!() };
    let ReportingModel::Stationary(s) = &fit.model.reporting else { panic!() };
    for (a, b) in lambda.iter().zip(&cl.lambda) {
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
    }
    for (a, b) in s.p.iter().zip(&cl.p) {
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-8));
    }
    // E-step at the chain-ladder start reproduces the factor forecasts.
    let table = stationary_spec().day_table(&tri).unwrap();
    let (start_counts, start) = initialize_from_chain_ladder(&tri, &stationary_spec(), &table).unwrap();
    let again = e_step(&start, &tri, &table);
    for (a, b) in again.expected.iter().flatten().zip(start_counts.expected.iter().flatten()) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
}

#[test]
fn weekly_em_is_monotone_with_censoring() {
    let opts = EmOptions {
        include_censoring: true,
        max_iter: 60,
        ..Default::default()
    };
    for (k, reporting) in [weekly_matrix(0.3, 1.0), weekly_reverse(0.1, 0.7)].into_iter().enumerate() {
        let truth = JointModel {
            occurrence: occurrence(1.5),
            reporting,
            tau: 120,
        };
        let tri = simulate(&truth, 120, 100 + k as u64);
        let spec = ModelSpec {
            occurrence: OccurrenceSpec::Regression {
                covariates: DayCovariates {
                    dow: true,
                    ..DayCovariates::intercept_only()
                },
            },
            reporting: if k == 0 {
                ReportingSpec::weekly_matrix(DayCovariates::intercept_only())
            } else {
                ReportingSpec::weekly_reverse_time(DayCovariates::intercept_only())
            },
        };
        let fit = fit_em(&tri, &spec, &opts).unwrap();
        for w in fit.trace.windows(2) {
            let (a, b) = (w[0].observed_loglik, w[1].observed_loglik);
            assert!(b >= a - 1e-8 * a.abs(), "spec {k}: {a} -> {b}");
        }
        assert!(fit.converged, "spec {k} did not converge");
    }
}

#[test]
fn m_step_does_not_decrease_q() {
    let truth = JointModel {
        occurrence: occurrence(1.5),
        reporting: weekly_matrix(0.3, 1.0),
        tau: 90,
    };
    let tri = simulate(&truth, 90, 5);
    let spec = ModelSpec {
        occurrence: OccurrenceSpec::Regression {
            covariates: DayCovariates {
                dow: true,
                ..DayCovariates::intercept_only()
            },
        },
        reporting: ReportingSpec::weekly_matrix(DayCovariates::intercept_only()),
    };
    let table = spec.day_table(&tri).unwrap();
    let (_, mut model) = initialize_from_chain_ladder(&tri, &spec, &table).unwrap();
    for censor in [false, true] {
        for _ in 0..3 {
            let counts = e_step(&model, &tri, &table);
            let before = q_function(&model, &counts, &tri, &table, censor);
            let next = m_step(&counts, &spec, &tri, &table, Some(&model), censor).unwrap();
            let after = q_function(&next, &counts, &tri, &table, censor);
            assert!(after >= before - 1e-8 * before.abs(), "{before} -> {after}");
            model = next;
        }
    }
}

#[test]
fn stopping_rule_on_injected_trace() {
    // |l_k - l_{k-1}| / |0.1 + l_k| at -999.9: 0.1 / 999.8 = 1e-4, then 2e-5 / 999.8 = 2.0e-8, then 5e-6 / 999.8 = 5.0e-9.
    let trace = [-1200.0, -1000.0, -999.9, -999.9 + 2e-5, -999.9 + 2.5e-5, -999.9 + 2.5e-5];
    assert!(!has_converged(trace[2], trace[3], 1e-8, 1e-10));
    assert!(has_converged(trace[3], trace[4], 1e-8, 1e-10));
    assert_eq!(stopping_iteration(&trace, 1e-8, 1e-10), Some(4));
    // The denominator is |0.1 + l|, not |l|: near l = -0.1 tiny changes are large relatively.
    assert!(!has_converged(-0.1 - 1e-9, -0.1 + 1e-12, 1e-8, 0.0));
    assert!(has_converged(-0.1 - 1e-11, -0.1, 1e-8, 1e-10));
    // Just above and just below the threshold, with denominator 0.1 + 0.9 = 1.
    assert!(!has_converged(0.9 - 1.01e-8, 0.9, 1e-8, 0.0));
    assert!(has_converged(0.9 - 0.99e-8, 0.9, 1e-8, 0.0));
}

#[test]
fn trace_csv_header() {
    let fit = EmFit {
        model: JointModel {
            occurrence: OccurrenceModel::Saturated { lambda: vec![1.0] },
            reporting: ReportingModel::Stationary(StationaryDelayModel { p: vec![1.0] }),
            tau: 1,
        },
        trace: vec![TraceEntry {
            iteration: 0,
            observed_loglik: -1.5,
            max_param_change: 0.25,
        }],
        iterations: 0,
        converged: true,
        counts: CompleteCounts {
            tau: 1,
            expected: vec![vec![1.0]],
            remainder: vec![0.0],
        },
        loglik: -1.5,
    };
    let mut buf = Vec::new();
    fit.write_trace(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "iteration,observed_loglik,max_param_change\n0,-1.5,0.25\n");
}
