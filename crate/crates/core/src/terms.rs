//! Named regression terms and coefficient maps.
//!
//! Every categorical covariate is dummy coded against its first level
//! (January, Monday, day-of-month 1, zero working days, no holiday, delay 0).
//! Reference levels never produce a term, so a missing coefficient is the
//! same as a zero effect.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::calendar::{DayFeatures, HolidayClass};
use crate::error::{Error, Result};

/// Delay level of the direct reporting-intensity regressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DelayLevel {
    /// Individual delay in days.
    Day(u32),
    /// Pooled week `floor(d / 7)` for delays past the pooling threshold.
    Week(u32),
}

impl DelayLevel {
    pub fn of(d: usize, pool_after: usize) -> Self {
        if d <= pool_after {
            DelayLevel::Day(d as u32)
        } else {
            DelayLevel::Week((d / 7) as u32)
        }
    }

    pub fn is_reference(self) -> bool {
        self == DelayLevel::Day(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Intercept,
    Jan1,
    Dec31,
    Month(u8),
    Dow(u8),
    Dom(u8),
    /// Elapsed working days in the reporting week.
    Workdays(u8),
    /// Day of week of the reporting date.
    ReportDow(u8),
    /// Holiday class of the reporting date.
    Holiday(HolidayClass),
    /// Holiday class of the day after the reporting date.
    HolidayNext(HolidayClass),
    Delay(DelayLevel),
    /// Free effect of a single occurrence day.
    Day(usize),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => f.write_str("intercept"),
            Term::Jan1 => f.write_str("jan1"),
            Term::Dec31 => f.write_str("dec31"),
            Term::Month(m) => write!(f, "month={m}"),
            Term::Dow(d) => write!(f, "dow={d}"),
            Term::Dom(d) => write!(f, "dom={d}"),
            Term::Workdays(n) => write!(f, "workdays={n}"),
            Term::ReportDow(d) => write!(f, "report_dow={d}"),
            Term::Holiday(c) => write!(f, "holiday={c}"),
            Term::HolidayNext(c) => write!(f, "holiday_next={c}"),
            Term::Delay(DelayLevel::Day(d)) => write!(f, "delay={d}"),
            Term::Delay(DelayLevel::Week(w)) => write!(f, "delay=w{w}"),
            Term::Day(t) => write!(f, "day={t}"),
        }
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown term '{s}'"));
        match s {
            "intercept" => return Ok(Term::Intercept),
            "jan1" => return Ok(Term::Jan1),
            "dec31" => return Ok(Term::Dec31),
            _ => {}
        }
        let (key, value) = s.split_once('=').ok_or_else(bad)?;
        let small = |v: &str| v.parse::<u8>().map_err(|_| bad());
        Ok(match key {
            "month" => Term::Month(small(value)?),
            "dow" => Term::Dow(small(value)?),
            "dom" => Term::Dom(small(value)?),
            "workdays" => Term::Workdays(small(value)?),
            "report_dow" => Term::ReportDow(small(value)?),
            "holiday" => Term::Holiday(value.parse()?),
            "holiday_next" => Term::HolidayNext(value.parse()?),
            "delay" => match value.strip_prefix('w') {
                Some(w) => Term::Delay(DelayLevel::Week(w.parse().map_err(|_| bad())?)),
                None => Term::Delay(DelayLevel::Day(value.parse().map_err(|_| bad())?)),
            },
            "day" => Term::Day(value.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        })
    }
}

/// Which occurrence-day covariates enter a log-linear predictor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DayCovariates {
    pub intercept: bool,
    pub jan1: bool,
    pub dec31: bool,
    pub month: bool,
    pub dow: bool,
    pub dom: bool,
}

impl Default for DayCovariates {
    fn default() -> Self {
        Self::full()
    }
}

impl DayCovariates {
    /// Intercept, January 1, December 31, month, weekday and day of month.
    pub fn full() -> Self {
        Self {
            intercept: true,
            jan1: true,
            dec31: true,
            month: true,
            dow: true,
            dom: true,
        }
    }

    pub fn intercept_only() -> Self {
        Self {
            intercept: true,
            jan1: false,
            dec31: false,
            month: false,
            dow: false,
            dom: false,
        }
    }

    pub fn terms(&self, f: &DayFeatures) -> Vec<Term> {
        let mut out = Vec::with_capacity(6);
        self.push_terms(f, &mut out);
        out
    }

    pub fn push_terms(&self, f: &DayFeatures, out: &mut Vec<Term>) {
        if self.intercept {
            out.push(Term::Intercept);
        }
        if self.jan1 && f.is_jan1 {
            out.push(Term::Jan1);
        }
        if self.dec31 && f.is_dec31 {
            out.push(Term::Dec31);
        }
        if self.month && f.month != 1 {
            out.push(Term::Month(f.month));
        }
        if self.dow && f.dow != 1 {
            out.push(Term::Dow(f.dow));
        }
        if self.dom && f.dom != 1 {
            out.push(Term::Dom(f.dom));
        }
    }
}

/// Coefficients keyed by term; absent terms contribute zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Coefficients(pub BTreeMap<Term, f64>);

impl Coefficients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, term: &Term) -> f64 {
        self.0.get(term).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, term: Term, value: f64) {
        self.0.insert(term, value);
    }

    pub fn linear(&self, terms: &[Term]) -> f64 {
        terms.iter().map(|t| self.get(t)).sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Term, &f64)> {
        self.0.iter()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Term, f64)>) -> Self {
        Self(pairs.into_iter().collect())
    }
}

impl Serialize for Coefficients {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_map(self.0.iter().map(|(k, v)| (k.to_string(), v)))
    }
}

impl<'de> Deserialize<'de> for Coefficients {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| k.parse::<Term>().map(|t| (t, v)))
            .collect::<Result<BTreeMap<_, _>>>()
            .map(Coefficients)
            .map_err(serde::de::Error::custom)
    }
}
