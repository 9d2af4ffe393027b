//! Synthetic event data with known occurrence and reporting structure.
//!
//! Each occurrence day draws from its own ChaCha8 stream keyed by
//! `(seed, t)`, so days can be generated in any order or in parallel.

use chrono::{Datelike, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{CalendarConfig, DayTable};
use crate::em::OccurrenceModel;
use crate::error::{Error, Result};
use crate::io::{daily_exposure, MonthlyExposure};
use crate::reporting::{
    IntraModel, IntraWeekMatrix, ReportingModel, WeekDelayModel, CASE_STUDY_DAY_PROBABILITIES, DEFAULT_W_MAX,
};
use crate::terms::{Coefficients, DayCovariates, Term};
use crate::triangle::{EventRecord, RunoffTriangle};

/// Monthly earned exposure `base * (1 + growth * m)` for month `m = 0, 1, ...` since the epoch month.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureScenario {
    pub base: f64,
    pub growth: f64,
}

/// Recurring holidays as `MM-DD` strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolidayScenario {
    pub national: Vec<String>,
    pub unofficial: Vec<String>,
}

impl Default for HolidayScenario {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Self {
            national: s(&["01-01", "05-01", "07-21", "08-15", "11-01", "11-11", "12-25"]),
            unofficial: s(&["12-31"]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub epoch: NaiveDate,
    /// Last day of the observation window.
    pub days: usize,
    pub seed: u64,
    pub exposure: ExposureScenario,
    #[serde(default)]
    pub holidays: HolidayScenario,
    pub occurrence: OccurrenceModel,
    pub reporting: ReportingModel,
}

#[derive(Clone, Debug, Serialize)]
pub struct Truth {
    pub occurrence: OccurrenceModel,
    pub reporting: ReportingModel,
    /// `lambda_t` for `t = 1..days`.
    pub lambda: Vec<f64>,
    pub events: usize,
    /// Events reported after the observation window.
    pub reported_after_window: usize,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub config: SimulationConfig,
    pub calendar: CalendarConfig,
    pub monthly_exposure: MonthlyExposure,
    /// Daily exposure for `t = 1..days`.
    pub exposure: Vec<f64>,
    /// All events, including those reported after the window.
    pub events: Vec<EventRecord>,
    pub truth: Truth,
}

impl Simulation {
    /// The event is reported after the observation window.
    pub fn beyond_window(&self, e: &EventRecord) -> bool {
        e.report_day() > self.config.days
    }

    /// Events reported within the observation window.
    pub fn observed_events(&self) -> Vec<EventRecord> {
        self.events.iter().filter(|e| !self.beyond_window(e)).copied().collect()
    }

    /// Triangle at evaluation day `tau` from the events reported by then.
    pub fn triangle_at(&self, tau: usize) -> Result<RunoffTriangle> {
        if tau == 0 || tau > self.config.days {
            return Err(Error::invalid(format!("evaluation day {tau} outside 1..={}", self.config.days)));
        }
        let events: Vec<EventRecord> = self.events.iter().filter(|e| e.occurrence_day <= tau).copied().collect();
        RunoffTriangle::aggregate_events(&events, tau, self.exposure[..tau].to_vec(), self.calendar.clone())
    }
}

fn parse_month_day(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::Parse(format!("holiday '{s}' is not MM-DD"));
    let (m, d) = s.split_once('-').ok_or_else(bad)?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    let d: u32 = d.parse().map_err(|_| bad())?;
    NaiveDate::from_ymd_opt(2000, m, d).ok_or_else(bad)?;
    Ok((m, d))
}

impl HolidayScenario {
    /// Calendar with the recurring holidays placed in every year from `epoch` through `last`.
    pub fn calendar(&self, epoch: NaiveDate, last: NaiveDate) -> Result<CalendarConfig> {
        let expand = |v: &[String]| -> Result<Vec<NaiveDate>> {
            let mut out = Vec::new();
            for s in v {
                let (m, d) = parse_month_day(s)?;
                for y in epoch.year()..=last.year() {
                    if let Some(date) = NaiveDate::from_ymd_opt(y, m, d) {
                        if date >= epoch && date <= last {
                            out.push(date);
                        }
                    }
                }
            }
            Ok(out)
        };
        CalendarConfig::with_holidays(epoch, expand(&self.national)?, expand(&self.unofficial)?)
    }
}

impl ExposureScenario {
    pub fn monthly(&self, epoch: NaiveDate, last: NaiveDate) -> MonthlyExposure {
        let mut out = MonthlyExposure::new();
        let (mut y, mut m) = (epoch.year(), epoch.month());
        let mut k = 0.0;
        while (y, m) <= (last.year(), last.month()) {
            out.insert((y, m), self.base * (1.0 + self.growth * k));
            k += 1.0;
            (y, m) = if m == 12 { (y + 1, 1) } else { (y, m + 1) };
        }
        out
    }
}

/// Draw events for every occurrence day `t = 1..days`.
pub fn simulate_portfolio(cfg: &SimulationConfig) -> Result<Simulation> {
    if cfg.days == 0 {
        return Err(Error::invalid("simulation needs at least one day"));
    }
    let support = cfg.reporting.support();
    let horizon = cfg.days + support + 8;
    let plain = CalendarConfig::new(cfg.epoch);
    let last_window = plain.date(cfg.days)?;
    let calendar = cfg.holidays.calendar(cfg.epoch, plain.date(horizon)?)?;
    let monthly_exposure = cfg.exposure.monthly(cfg.epoch, last_window);
    let exposure = daily_exposure(&monthly_exposure, &calendar, cfg.days)?;
    if exposure.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::invalid("simulated exposure must be positive"));
    }
    let table = DayTable::new(&calendar, horizon)?;
    let per_day: Vec<(f64, Vec<EventRecord>)> = (1..=cfg.days)
        .into_par_iter()
        .map(|t| {
            let lambda = cfg.occurrence.lambda(&table, t, exposure[t - 1]);
            let row = cfg.reporting.row(&table, t, support);
            (lambda, draw_day(cfg.seed, t, lambda, &row))
        })
        .collect();
    let mut lambda = Vec::with_capacity(cfg.days);
    let mut events = Vec::new();
    for (l, ev) in per_day {
        lambda.push(l);
        events.extend(ev);
    }
    let reported_after_window = events.iter().filter(|e| e.report_day() > cfg.days).count();
    Ok(Simulation {
        config: cfg.clone(),
        calendar,
        monthly_exposure,
        exposure,
        truth: Truth {
            occurrence: cfg.occurrence.clone(),
            reporting: cfg.reporting.clone(),
            lambda,
            events: events.len(),
            reported_after_window,
        },
        events,
    })
}

/// Poisson count and multinomial delays for one occurrence day.
fn draw_day(seed: u64, t: usize, lambda: f64, row: &[f64]) -> Vec<EventRecord> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    let n = Poisson::new(lambda).expect("positive mean").sample(&mut rng) as usize;
    if n == 0 {
        return Vec::new();
    }
    let Ok(delays) = WeightedIndex::new(row) else {
        return Vec::new();
    };
    let mut out: Vec<EventRecord> = (0..n).map(|_| EventRecord::new(t, delays.sample(&mut rng))).collect();
    out.sort_by_key(|e| e.delay);
    out
}

/// Day probabilities with a small Sunday share, rows renormalized.
pub fn scenario_day_probabilities() -> IntraWeekMatrix {
    let mut p = CASE_STUDY_DAY_PROBABILITIES;
    for row in p.iter_mut() {
        row[6] = 0.002;
    }
    IntraWeekMatrix::new(p).expect("valid rows")
}

/// Occurrence effects of the default scenario: mid-year peak, Saturday excess,
/// fewer events away from the 1st and 15th, spikes on January 1 and December 31.
pub fn scenario_occurrence() -> OccurrenceModel {
    let mut a = Coefficients::new();
    a.set(Term::Intercept, 0.15f64.ln());
    a.set(Term::Jan1, 0.8);
    a.set(Term::Dec31, 0.75);
    for m in 2..=12u8 {
        a.set(Term::Month(m), 0.25 * (std::f64::consts::PI * (m - 1) as f64 / 11.0).sin());
    }
    a.set(Term::Dow(2), -0.05);
    a.set(Term::Dow(4), -0.05);
    a.set(Term::Dow(6), 0.15);
    for d in 2..=31u8 {
        match d {
            15 => {}
            5 | 10 | 20 | 25 | 30 => a.set(Term::Dom(d), -0.15),
            _ => a.set(Term::Dom(d), -0.3),
        }
    }
    OccurrenceModel::Regression {
        alpha: a,
        covariates: DayCovariates::full(),
    }
}

pub fn scenario_week_model() -> WeekDelayModel {
    let mut theta = Coefficients::new();
    theta.set(Term::Intercept, 1.2f64.ln());
    for d in 2..=31u8 {
        if d != 15 {
            theta.set(Term::Dom(d), -0.2);
        }
    }
    WeekDelayModel {
        theta,
        phi: 1.0,
        w_max: DEFAULT_W_MAX,
        covariates: DayCovariates::full(),
    }
}

/// Default scenario starting 2000-01-01 with about 50 events per day.
pub fn default_scenario(days: usize, seed: u64) -> SimulationConfig {
    SimulationConfig {
        epoch: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
        days,
        seed,
        exposure: ExposureScenario {
            base: 10_000.0,
            growth: 0.005,
        },
        holidays: HolidayScenario::default(),
        occurrence: scenario_occurrence(),
        reporting: ReportingModel::Weekly {
            week: scenario_week_model(),
            intra: IntraModel::Matrix(scenario_day_probabilities()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn intercept_only(rate: f64, days: usize, seed: u64) -> SimulationConfig {
        let mut cfg = default_scenario(days, seed);
        cfg.exposure = ExposureScenario { base: 1.0, growth: 0.0 };
        cfg.occurrence = OccurrenceModel::Saturated {
            lambda: vec![rate; days],
        };
        cfg
    }

    #[test]
    fn deterministic_per_seed() {
        let a = simulate_portfolio(&default_scenario(60, 9)).unwrap();
        let b = simulate_portfolio(&default_scenario(60, 9)).unwrap();
        let c = simulate_portfolio(&default_scenario(60, 10)).unwrap();
        assert_eq!(a.events, b.events);
        assert_ne!(a.events, c.events);
        assert!(a.truth.events > 1000);
    }

    #[test]
    fn zero_intensity_gives_no_events() {
        let mut cfg = default_scenario(30, 1);
        cfg.occurrence = OccurrenceModel::Regression {
            alpha: Coefficients::from_pairs([(Term::Intercept, -1e4)]),
            covariates: DayCovariates::intercept_only(),
        };
        assert!(simulate_portfolio(&cfg).unwrap().events.is_empty());
    }

    #[test]
    fn mean_count_matches_rate() {
        let sim = simulate_portfolio(&intercept_only(5.0, 1000, 4)).unwrap();
        let mean = sim.events.len() as f64 / 1000.0;
        assert!((mean - 5.0).abs() < 3.0 * (5.0f64 / 1000.0).sqrt(), "{mean}");
    }

    #[test]
    fn cell_counts_are_poisson_thinned() {
        // Chi-square over replications of cells (t, d) for a few delays.
        let days = 20;
        let reps = 400;
        let cells: Vec<(usize, usize)> = vec![(3, 0), (3, 1), (3, 8), (10, 0), (10, 2), (12, 7)];
        let mut sums = vec![vec![0.0f64; reps]; cells.len()];
        let cfg0 = intercept_only(40.0, days, 0);
        let sim0 = simulate_portfolio(&cfg0).unwrap();
        let table = DayTable::new(&sim0.calendar, 200).unwrap();
        for r in 0..reps {
            let mut cfg = cfg0.clone();
            cfg.seed = r as u64;
            let sim = simulate_portfolio(&cfg).unwrap();
            for e in &sim.events {
                if let Some(k) = cells.iter().position(|&c| c == (e.occurrence_day, e.delay)) {
                    sums[k][r] += 1.0;
                }
            }
        }
        for (k, &(t, d)) in cells.iter().enumerate() {
            let mean = 40.0 * cfg0.reporting.cell_probability(&table, t, d);
            // Dispersion statistic sum (x - m)^2 / m is chi-square with reps degrees of freedom.
            let stat: f64 = sums[k].iter().map(|x| (x - mean).powi(2) / mean).sum();
            let chi = ChiSquared::new(reps as f64).unwrap();
            let p = chi.cdf(stat);
            assert!(p > 0.005 && p < 0.995, "cell ({t},{d}) mean {mean} stat {stat}");
            let avg = sums[k].iter().sum::<f64>() / reps as f64;
            assert!((avg - mean).abs() < 4.0 * (mean / reps as f64).sqrt());
        }
    }

    #[test]
    fn truth_and_window_flags() {
        let sim = simulate_portfolio(&default_scenario(40, 2)).unwrap();
        assert_eq!(sim.truth.lambda.len(), 40);
        let late = sim.events.iter().filter(|e| sim.beyond_window(e)).count();
        assert_eq!(late, sim.truth.reported_after_window);
        assert!(late > 0);
        assert_eq!(sim.observed_events().len() + late, sim.events.len());
        let tri = sim.triangle_at(40).unwrap();
        assert_eq!(tri.total() as usize, sim.observed_events().len());
        // Holidays are placed.
        let jan1 = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        assert!(sim.calendar.national_holidays().contains(&jan1));
    }

    #[test]
    fn scenario_rows_are_distributions() {
        let p = scenario_day_probabilities();
        for row in p.p {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row[6] > 0.001);
        }
        let cfg: SimulationConfig = serde_json::from_str(&serde_json::to_string(&default_scenario(10, 1)).unwrap()).unwrap();
        assert_eq!(cfg, default_scenario(10, 1));
    }
}
