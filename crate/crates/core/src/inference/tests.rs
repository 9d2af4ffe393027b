use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson as PoissonSampler};
use statrs::distribution::{Discrete, DiscreteCDF, Poisson};

use super::*;
use crate::calendar::CalendarConfig;
use crate::em::{observed_loglik, OccurrenceModel};
use crate::reporting::{
    IntraModel, IntraWeekMatrix, ReportingModel, ReverseTimeCovariates, ReverseTimeModel, StationaryDelayModel,
    WeekDelayModel,
};
use crate::terms::{Coefficients, DayCovariates, Term};

fn cal() -> CalendarConfig {
    CalendarConfig::with_holidays(
        NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
        [NaiveDate::from_ymd_opt(2000, 1, 6).unwrap()],
        [NaiveDate::from_ymd_opt(2000, 1, 21).unwrap()],
    )
    .unwrap()
}

fn week_model(rng: &mut ChaCha8Rng) -> WeekDelayModel {
    WeekDelayModel {
        theta: Coefficients::from_pairs([
            (Term::Intercept, rng.random_range(-0.5..1.0)),
            (Term::Dow(3), rng.random_range(-0.5..0.5)),
        ]),
        phi: rng.random_range(0.3..3.0),
        w_max: 104,
        covariates: DayCovariates {
            dow: true,
            ..DayCovariates::intercept_only()
        },
    }
}

fn random_models(seed: u64) -> Vec<JointModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let occ = OccurrenceModel::Regression {
        alpha: Coefficients::from_pairs([(Term::Intercept, 2.5), (Term::Dow(6), -0.4), (Term::Dow(1), 0.2)]),
        covariates: DayCovariates {
            dow: true,
            ..DayCovariates::intercept_only()
        },
    };
    let mut p = [[0.0; 7]; 7];
    for row in p.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.random_range(0.05..1.0);
        }
    }
    p[2][6] = 0.0;
    let matrix = ReportingModel::Weekly {
        week: week_model(&mut rng),
        intra: IntraModel::Matrix(IntraWeekMatrix::new(p).unwrap()),
    };
    let reverse = ReportingModel::Weekly {
        week: week_model(&mut rng),
        intra: IntraModel::ReverseTime(ReverseTimeModel {
            gamma: Coefficients::from_pairs([
                (Term::Intercept, rng.random_range(-1.0..0.5)),
                (Term::Workdays(1), rng.random_range(-0.5..0.5)),
                (Term::Workdays(3), rng.random_range(-0.5..0.5)),
                (Term::ReportDow(6), rng.random_range(-2.0..0.0)),
                (Term::ReportDow(7), -3.0),
                (Term::Holiday(crate::calendar::HolidayClass::National), -1.5),
            ]),
            covariates: ReverseTimeCovariates::default(),
        }),
    };
    let tau = 40;
    let mut sp: Vec<f64> = (0..tau).map(|d| (-(d as f64) / 6.0).exp()).collect();
    sp[7] = 0.0;
    let s: f64 = sp.iter().sum();
    sp.iter_mut().for_each(|v| *v /= s);
    let stationary = ReportingModel::Stationary(StationaryDelayModel { p: sp });
    let mut out: Vec<JointModel> = [matrix, reverse, stationary.clone()]
        .into_iter()
        .map(|reporting| JointModel {
            occurrence: occ.clone(),
            reporting,
            tau,
        })
        .collect();
    out.push(JointModel {
        occurrence: OccurrenceModel::Saturated {
            lambda: (0..tau).map(|t| 5.0 + (t % 4) as f64).collect(),
        },
        reporting: stationary,
        tau,
    });
    out
}

fn simulate(model: &JointModel, seed: u64) -> RunoffTriangle {
    let tau = model.tau;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = DayTable::new(&cal(), 400).unwrap();
    let mut cells = Vec::new();
    for t in 1..=tau {
        let lambda = model.occurrence.lambda(&table, t, 1.0);
        let row = model.reporting.row(&table, t, tau - t + 1);
        for (d, p) in row.iter().enumerate() {
            if lambda * p > 0.0 {
                let n = PoissonSampler::new(lambda * p).unwrap().sample(&mut rng) as u64;
                if n > 0 {
                    cells.push((t, d, n));
                }
            }
        }
    }
    RunoffTriangle::from_cells(tau, cells, vec![1.0; tau], cal()).unwrap()
}

fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let h = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x.to_vec();
            xp[j] += h;
            let fp = f(&xp);
            xp[j] -= 2.0 * h;
            let fm = f(&xp);
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / (1.0 + x.abs())).fold(0.0, f64::max)
}

#[test]
fn scores_match_finite_differences() {
    let table = DayTable::new(&cal(), 400).unwrap();
    for (k, model) in random_models(1).into_iter().enumerate() {
        let tri = simulate(&model, 10 + k as u64);
        let (layout, x0) = ParamLayout::from_model(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let x: Vec<f64> = x0.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
        let g = observed_score(&layout, &model, &x, &tri, &table);
        let fd = fd_gradient(|p| observed_loglik(&layout.apply(&model, p), &tri, &table).unwrap(), &x);
        assert!(max_rel(&g, &fd) < 1e-5, "model {k}: observed {}", max_rel(&g, &fd));
        let counts = e_step(&layout.apply(&model, &x0), &tri, &table);
        let gq = complete_score(&layout, &model, &x, &counts, &tri, &table);
        let fdq = fd_gradient(|p| q_function(&layout.apply(&model, p), &counts, &tri, &table, true), &x);
        assert!(max_rel(&gq, &fdq) < 1e-5, "model {k}: complete {}", max_rel(&gq, &fdq));
    }
}

#[test]
fn fisher_identity_and_cell_scores() {
    let table = DayTable::new(&cal(), 400).unwrap();
    for (k, model) in random_models(2).into_iter().enumerate() {
        let tri = simulate(&model, 20 + k as u64);
        let (layout, x) = ParamLayout::from_model(&model);
        let g = observed_score(&layout, &model, &x, &tri, &table);
        let counts = e_step(&model, &tri, &table);
        let gq = complete_score(&layout, &model, &x, &counts, &tri, &table);
        assert!(max_rel(&g, &gq) < 1e-9, "model {k}");
        // Sum of single-cell scores over the observed triangle.
        let mut sum = vec![0.0; layout.len()];
        let mut buf = Vec::new();
        for t in 1..=tri.tau() {
            let ctx = RowContext::new(&layout, &model, &tri, &table, t);
            for d in 0..=tri.tau() - t {
                buf.clear();
                ctx.cell_score(&layout, d, tri.get(t, d) as f64 - ctx.lambda * ctx.row[d], &mut buf);
                for &(i, v) in &buf {
                    sum[i] += v;
                }
            }
        }
        assert!(max_rel(&g, &sum) < 1e-9, "model {k}");
    }
}

#[test]
fn layout_roundtrip() {
    for model in random_models(3) {
        let (layout, x) = ParamLayout::from_model(&model);
        let back = layout.apply(&model, &x);
        let x2 = layout.values(&back);
        assert!(max_rel(&x, &x2) < 1e-12);
        assert_eq!(layout.len(), x.len());
    }
}

#[test]
fn hessian_exact_on_quadratic() {
    let a = [[4.0, 1.0, -0.5], [1.0, 3.0, 0.2], [-0.5, 0.2, 2.0]];
    let names: Vec<String> = (0..3).map(|i| format!("x{i}")).collect();
    let grad = |x: &[f64]| -> Vec<f64> { (0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum::<f64>() + 1.0).collect() };
    let h = numerical_hessian(&[0.3, -2.0, 150.0], &names, grad).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((h[(i, j)] - a[i][j]).abs() < 1e-8);
        }
    }
}

#[test]
fn intercept_information() {
    // lambda = 3 fitted to counts {2, 4}: information sum lambda = 6.
    let tri = RunoffTriangle::from_cells(2, [(1, 0, 2), (2, 0, 4)], vec![1.0; 2], cal()).unwrap();
    let model = JointModel {
        occurrence: OccurrenceModel::Regression {
            alpha: Coefficients::from_pairs([(Term::Intercept, 3f64.ln())]),
            covariates: DayCovariates::intercept_only(),
        },
        reporting: ReportingModel::Stationary(StationaryDelayModel { p: vec![1.0, 0.0] }),
        tau: 2,
    };
    let table = DayTable::new(&cal(), 20).unwrap();
    let info = observed_information(&model, &tri, &table).unwrap();
    assert_eq!(info.names, vec!["occurrence:intercept".to_string()]);
    assert!((info.observed[(0, 0)] - 6.0).abs() < 1e-4);
    assert!((info.complete[(0, 0)] - 6.0).abs() < 1e-4);
    let (a, _) = aiccd(&model, &tri, &table).unwrap();
    assert!((a.penalty - 2.0).abs() < 1e-4);
}

#[test]
fn aiccd_scalar_penalty() {
    let info = InformationPair {
        names: vec!["a".into()],
        complete: DMatrix::from_element(1, 1, 2.0),
        observed: DMatrix::from_element(1, 1, 1.0),
    };
    let a = aiccd_from_information(-10.0, &info).unwrap();
    assert!((a.penalty - 4.0).abs() < 1e-12);
    assert!((a.value - 24.0).abs() < 1e-12);
    let bad = InformationPair {
        names: vec!["a".into()],
        complete: DMatrix::from_element(1, 1, 2.0),
        observed: DMatrix::from_element(1, 1, -1.0),
    };
    assert!(matches!(aiccd_from_information(0.0, &bad), Err(Error::Singular(_))));
}

#[test]
fn poisson_quantiles_match_oracle() {
    for &m in &[0.3, 2.0, 17.5, 250.0, 2055.8, 40000.0] {
        let d = Poisson::new(m).unwrap();
        for &p in &[0.0025, 0.025, 0.5, 0.975, 0.9975] {
            let q = poisson_quantile(m, p);
            // Oracle: smallest k with CDF >= p, checked directly against statrs.
            assert!(d.cdf(q) >= p - 1e-12, "m={m} p={p} q={q}");
            if q > 0 {
                assert!(d.cdf(q - 1) < p + 1e-12, "m={m} p={p} q={q}");
            }
            assert_eq!(q, d.inverse_cdf(p), "m={m} p={p}");
        }
    }
    assert_eq!(poisson_interval(0.0, 0.95), (0.0, 0.0));
    let (lo, hi) = poisson_interval(2055.8, 0.95);
    let half = 1.96 * 2055.8f64.sqrt();
    assert!((lo - (2055.8 - half)).abs() < 3.0 && (hi - (2055.8 + half)).abs() < 3.0);
    assert_eq!(hi, 2145.0);
    assert_eq!(lo, 1967.0);
}

#[test]
fn nowcast_totals_and_groupings() {
    let table = DayTable::new(&cal(), 400).unwrap();
    let model = random_models(4).remove(0);
    let tri = simulate(&model, 4);
    let daily = nowcast(&model, &tri, &table, Grouping::ReportingDate, 0.95, false).unwrap();
    let weekly = nowcast(&model, &tri, &table, Grouping::Week, 0.95, false).unwrap();
    let monthly = nowcast(&model, &tri, &table, Grouping::Month, 0.95, false).unwrap();
    let by_occ = nowcast(&model, &tri, &table, Grouping::Occurrence, 0.95, true).unwrap();
    let sum = |r: &NowcastResult| r.groups.iter().map(|g| g.mean).sum::<f64>();
    assert!((sum(&daily) - sum(&weekly)).abs() < 1e-10);
    assert!((sum(&daily) - sum(&monthly)).abs() < 1e-10);
    assert!((sum(&by_occ) - by_occ.total).abs() < 1e-9);
    assert!((sum(&daily) + daily.beyond_horizon - daily.total).abs() < 1e-9);
    // Bonferroni: per-group level 1 - 0.05 / m.
    let m = by_occ.groups.len() as f64;
    let g = &by_occ.groups[by_occ.groups.len() - 1];
    assert_eq!((g.lower, g.upper), poisson_interval(g.mean, 1.0 - 0.05 / m));
    assert!(by_occ.groups.iter().all(|g| g.lower <= g.upper && g.mean >= 0.0));
}

#[test]
fn single_day_nowcast() {
    let tri = RunoffTriangle::from_cells(1, [(1, 0, 7)], vec![1.0], cal()).unwrap();
    let table = DayTable::new(&cal(), 20).unwrap();
    let model = JointModel {
        occurrence: OccurrenceModel::Saturated { lambda: vec![10.0] },
        reporting: ReportingModel::Stationary(StationaryDelayModel { p: vec![0.7, 0.2, 0.1] }),
        tau: 1,
    };
    let r = nowcast(&model, &tri, &table, Grouping::Occurrence, 0.95, false).unwrap();
    assert!((r.total - 3.0).abs() < 1e-12);
    let model = JointModel {
        reporting: ReportingModel::Stationary(StationaryDelayModel { p: vec![1.0] }),
        ..model
    };
    assert_eq!(nowcast(&model, &tri, &table, Grouping::Cell, 0.95, false).unwrap().total, 0.0);
}

#[test]
fn simultaneous_tails_for_ten_groups() {
    let per: f64 = 1.0 - (1.0 - 0.95) / 10.0;
    assert!(((1.0 - per) / 2.0 - 0.0025).abs() < 1e-15);
}

#[test]
fn ibnr_total_is_poisson() {
    // Sum of per-cell Poisson draws against Poisson(total): Kolmogorov-Smirnov at 1%.
    let table = DayTable::new(&cal(), 400).unwrap();
    let model = random_models(5).remove(0);
    let tri = simulate(&model, 5);
    let summary = IbnrSummary::compute(&model, &tri, &table);
    let support = model.reporting.support();
    let mut means = Vec::new();
    for t in 1..=tri.tau() {
        let lambda = model.occurrence.lambda(&table, t, 1.0);
        let row = model.reporting.row(&table, t, support);
        for p in &row[tri.tau() - t + 1..] {
            if lambda * p > 1e-12 {
                means.push(lambda * p);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 10_000;
    let mut draws: Vec<u64> = (0..n)
        .map(|_| means.iter().map(|&m| PoissonSampler::new(m).unwrap().sample(&mut rng) as u64).sum())
        .collect();
    draws.sort_unstable();
    let d = Poisson::new(summary.total).unwrap();
    let mut ks: f64 = 0.0;
    let mut i = 0;
    while i < n {
        let v = draws[i];
        let mut j = i;
        while j < n && draws[j] == v {
            j += 1;
        }
        let f = d.cdf(v);
        let below = if v == 0 { 0.0 } else { d.cdf(v - 1) };
        ks = ks.max((j as f64 / n as f64 - f).abs()).max((i as f64 / n as f64 - below).abs());
        i = j;
    }
    assert!(ks < 1.63 / (n as f64).sqrt(), "ks {ks}");
    assert!(d.pmf(summary.total.round() as u64) > 0.0);
}

#[test]
fn cooks_distance_basics() {
    use crate::em::{fit_em_with_table, EmOptions, ModelSpec, OccurrenceSpec};
    use crate::reporting::ReportingSpec;
    let table = DayTable::new(&cal(), 400).unwrap();
    let mut model = random_models(6).remove(0);
    if let OccurrenceModel::Regression { alpha, .. } = &mut model.occurrence {
        alpha.set(Term::Intercept, 4.0);
    }
    let tri = simulate(&model, 6);
    let spec = ModelSpec {
        occurrence: OccurrenceSpec::Regression {
            covariates: DayCovariates {
                dow: true,
                ..DayCovariates::intercept_only()
            },
        },
        reporting: ReportingSpec::weekly_matrix(DayCovariates::intercept_only()),
    };
    let opts = EmOptions {
        include_censoring: true,
        ..Default::default()
    };
    let fit = fit_em_with_table(&tri, &spec, &opts, &table).unwrap();
    let info = observed_information(&fit.model, &tri, &table).unwrap();
    let all = cooks_distances(&fit.model, &tri, &table, &info).unwrap();
    assert_eq!(all.len(), 40 * 41 / 2);
    assert!(all.iter().all(|c| c.distance >= 0.0));
    let one = cooks_distance(&fit.model, &tri, &table, &info, 3, 5).unwrap();
    let from_all = all.iter().find(|c| c.t == 3 && c.d == 5).unwrap().distance;
    assert!((one - from_all).abs() <= 1e-12 * one.max(1.0));
    // A zero-count cell with a negligible mean.
    let tiny = all
        .iter()
        .filter(|c| c.count == 0 && c.fitted < 1e-6)
        .map(|c| c.distance)
        .fold(0.0, f64::max);
    assert!(tiny < 1e-6);
    assert!(cooks_distance(&fit.model, &tri, &table, &info, 40, 1).is_err());
}
