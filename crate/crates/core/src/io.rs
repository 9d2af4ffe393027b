//! CSV formats for events, exposure and holiday calendars.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::calendar::{CalendarConfig, HolidayClass};
use crate::error::{Error, Result};
use crate::triangle::EventRecord;

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    occurrence_date: NaiveDate,
    report_date: NaiveDate,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExposureRow {
    month: String,
    earned_exposure: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HolidayRow {
    date: NaiveDate,
    class: HolidayClass,
}

/// Monthly earned exposure keyed by (year, month).
pub type MonthlyExposure = BTreeMap<(i32, u32), f64>;

pub fn read_events<R: Read>(reader: R, cal: &CalendarConfig) -> Result<Vec<EventRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<EventRow>().enumerate() {
        let row = row?;
        if row.report_date < row.occurrence_date {
            return Err(Error::invalid(format!(
                "event row {}: report date {} precedes occurrence date {}",
                line + 1,
                row.report_date,
                row.occurrence_date
            )));
        }
        let t = cal.day_index(row.occurrence_date)?;
        let delay = row
            .report_date
            .signed_duration_since(row.occurrence_date)
            .num_days() as usize;
        out.push(EventRecord::new(t, delay));
    }
    Ok(out)
}

pub fn write_events<W: Write>(writer: W, events: &[EventRecord], cal: &CalendarConfig) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for e in events {
        wtr.serialize(EventRow {
            occurrence_date: cal.date(e.occurrence_day)?,
            report_date: cal.date(e.report_day())?,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

fn parse_month(s: &str) -> Result<(i32, u32)> {
    let bad = || Error::Parse(format!("month '{s}' is not YYYY-MM"));
    let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
    let y: i32 = y.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if !(1..=12).contains(&m) {
        return Err(bad());
    }
    Ok((y, m))
}

pub fn read_exposure<R: Read>(reader: R) -> Result<MonthlyExposure> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = MonthlyExposure::new();
    for row in rdr.deserialize::<ExposureRow>() {
        let row = row?;
        if !(row.earned_exposure.is_finite() && row.earned_exposure >= 0.0) {
            return Err(Error::invalid(format!(
                "exposure for {} is {}",
                row.month, row.earned_exposure
            )));
        }
        out.insert(parse_month(&row.month)?, row.earned_exposure);
    }
    Ok(out)
}

pub fn write_exposure<W: Write>(writer: W, monthly: &MonthlyExposure) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (&(y, m), &e) in monthly {
        wtr.serialize(ExposureRow {
            month: format!("{y:04}-{m:02}"),
            earned_exposure: e,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn days_in_month(year: i32, month: u32) -> u32 {
    let (ny, nm) = if month == 12 { (year + 1, 1) } else { (year, month + 1) };
    let first = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month");
    let next = NaiveDate::from_ymd_opt(ny, nm, 1).expect("valid month");
    next.signed_duration_since(first).num_days() as u32
}

/// Spread monthly exposure evenly over the days of each month, for days `1..=n_days`.
pub fn daily_exposure(monthly: &MonthlyExposure, cal: &CalendarConfig, n_days: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n_days);
    for t in 1..=n_days {
        let date = cal.date(t)?;
        let key = (date.year(), date.month());
        let e = monthly.get(&key).ok_or_else(|| {
            Error::invalid(format!("no exposure for month {:04}-{:02}", key.0, key.1))
        })?;
        out.push(e / days_in_month(key.0, key.1) as f64);
    }
    Ok(out)
}

pub fn read_holidays<R: Read>(reader: R, epoch: NaiveDate) -> Result<CalendarConfig> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut national = Vec::new();
    let mut unofficial = Vec::new();
    for row in rdr.deserialize::<HolidayRow>() {
        let row = row?;
        match row.class {
            HolidayClass::National => national.push(row.date),
            HolidayClass::Unofficial => unofficial.push(row.date),
            HolidayClass::None => {
                return Err(Error::invalid(format!(
                    "holiday {} has class 'none'",
                    row.date
                )))
            }
        }
    }
    CalendarConfig::with_holidays(epoch, national, unofficial)
}

pub fn write_holidays<W: Write>(writer: W, cal: &CalendarConfig) -> Result<()> {
    let mut rows: Vec<HolidayRow> = cal
        .national_holidays()
        .iter()
        .map(|&date| HolidayRow {
            date,
            class: HolidayClass::National,
        })
        .chain(cal.unofficial_holidays().iter().map(|&date| HolidayRow {
            date,
            class: HolidayClass::Unofficial,
        }))
        .collect();
    rows.sort_by_key(|r| r.date);
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
