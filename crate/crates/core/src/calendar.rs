//! Calendar arithmetic on the daily grid.
//!
//! Day indices are 1-based: `t = 1` is the configured epoch date. All
//! categorical encodings use Monday = 1 for the day of the week.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Holiday classification of a calendar date.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HolidayClass {
    None,
    National,
    Unofficial,
}

impl fmt::Display for HolidayClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            HolidayClass::None => "none",
            HolidayClass::National => "national",
            HolidayClass::Unofficial => "unofficial",
        };
        f.write_str(s)
    }
}

impl FromStr for HolidayClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(HolidayClass::None),
            "national" => Ok(HolidayClass::National),
            "unofficial" => Ok(HolidayClass::Unofficial),
            other => Err(Error::Parse(format!("unknown holiday class '{other}'"))),
        }
    }
}

/// Epoch and holiday calendar shared by every triangle built on the grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarConfig {
    epoch: NaiveDate,
    holidays: BTreeSet<NaiveDate>,
    unofficial_holidays: BTreeSet<NaiveDate>,
}

/// Categorical encodings of a single day.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayFeatures {
    /// Day of the week, Monday = 1 .. Sunday = 7.
    pub dow: u8,
    /// Day of the month, 1..=31.
    pub dom: u8,
    /// Month, 1..=12.
    pub month: u8,
    pub is_jan1: bool,
    pub is_dec31: bool,
    pub holiday_class: HolidayClass,
}

impl CalendarConfig {
    /// Calendar without holidays.
    pub fn new(epoch: NaiveDate) -> Self {
        Self {
            epoch,
            holidays: BTreeSet::new(),
            unofficial_holidays: BTreeSet::new(),
        }
    }

    /// Calendar with national and unofficial holidays; the two sets must be disjoint.
    pub fn with_holidays(
        epoch: NaiveDate,
        national: impl IntoIterator<Item = NaiveDate>,
        unofficial: impl IntoIterator<Item = NaiveDate>,
    ) -> Result<Self> {
        let holidays: BTreeSet<_> = national.into_iter().collect();
        let unofficial_holidays: BTreeSet<_> = unofficial.into_iter().collect();
        if let Some(d) = holidays.intersection(&unofficial_holidays).next() {
            return Err(Error::invalid(format!(
                "{d} is listed as both a national and an unofficial holiday"
            )));
        }
        Ok(Self {
            epoch,
            holidays,
            unofficial_holidays,
        })
    }

    pub fn epoch(&self) -> NaiveDate {
        self.epoch
    }

    pub fn national_holidays(&self) -> &BTreeSet<NaiveDate> {
        &self.holidays
    }

    pub fn unofficial_holidays(&self) -> &BTreeSet<NaiveDate> {
        &self.unofficial_holidays
    }

    /// Calendar date of day index `t`.
    pub fn date(&self, t: usize) -> Result<NaiveDate> {
        if t == 0 {
            return Err(Error::invalid("day indices start at 1"));
        }
        self.epoch
            .checked_add_days(Days::new((t - 1) as u64))
            .ok_or(Error::DateOverflow(t as i64))
    }

    /// Day index of `date`; dates before the epoch are rejected.
    pub fn day_index(&self, date: NaiveDate) -> Result<usize> {
        let offset = date.signed_duration_since(self.epoch).num_days();
        if offset < 0 {
            return Err(Error::invalid(format!(
                "date {date} precedes the calendar epoch {}",
                self.epoch
            )));
        }
        Ok(offset as usize + 1)
    }

    pub fn holiday_class(&self, date: NaiveDate) -> HolidayClass {
        if self.holidays.contains(&date) {
            HolidayClass::National
        } else if self.unofficial_holidays.contains(&date) {
            HolidayClass::Unofficial
        } else {
            HolidayClass::None
        }
    }

    pub fn day_features(&self, t: usize) -> Result<DayFeatures> {
        let date = self.date(t)?;
        Ok(self.features_of(date))
    }

    fn features_of(&self, date: NaiveDate) -> DayFeatures {
        let month = date.month() as u8;
        let dom = date.day() as u8;
        DayFeatures {
            dow: date.weekday().number_from_monday() as u8,
            dom,
            month,
            is_jan1: month == 1 && dom == 1,
            is_dec31: month == 12 && dom == 31,
            holiday_class: self.holiday_class(date),
        }
    }

    /// Intra-week level of reporting day `r` for an event that occurred on day `t`.
    pub fn wday_level(&self, t: usize, r: usize) -> Result<WdayLevel> {
        if r < t {
            return Err(Error::invalid("reporting day precedes occurrence day"));
        }
        let dow = self.day_features(t)?.dow;
        wday_level(dow, r - t)
    }

    /// Working days elapsed in the current reporting week before reporting day `r`.
    ///
    /// The reporting week starts at `s = t + 7 * floor((r - t) / 7)`. Days in
    /// `[s, r)` count when they are neither a Saturday, a Sunday nor a national
    /// holiday.
    pub fn workdays_between(&self, t: usize, r: usize) -> Result<u32> {
        if r < t {
            return Err(Error::invalid("reporting day precedes occurrence day"));
        }
        let start = t + 7 * ((r - t) / 7);
        let mut count = 0;
        for u in start..r {
            let f = self.day_features(u)?;
            if f.dow <= 5 && f.holiday_class != HolidayClass::National {
                count += 1;
            }
        }
        Ok(count)
    }
}

/// Column of the intra-week day-probability matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WdayLevel {
    /// n-th working day of the reporting week, n in 1..=5.
    Workday(u8),
    Saturday,
    Sunday,
}

impl WdayLevel {
    pub const COUNT: usize = 7;

    /// Column index 0..7 (wday1..wday5, Saturday, Sunday).
    pub fn index(self) -> usize {
        match self {
            WdayLevel::Workday(n) => n as usize - 1,
            WdayLevel::Saturday => 5,
            WdayLevel::Sunday => 6,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0..=4 => Some(WdayLevel::Workday(i as u8 + 1)),
            5 => Some(WdayLevel::Saturday),
            6 => Some(WdayLevel::Sunday),
            _ => None,
        }
    }
}

impl fmt::Display for WdayLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WdayLevel::Workday(n) => write!(f, "wday{n}"),
            WdayLevel::Saturday => f.write_str("Saturday"),
            WdayLevel::Sunday => f.write_str("Sunday"),
        }
    }
}

/// Day of week reached `offset` days after a day with day-of-week `dow`.
pub fn dow_after(dow: u8, offset: usize) -> u8 {
    ((dow as usize - 1 + offset) % 7) as u8 + 1
}

/// Level of the day `offset` days into the reporting week of an occurrence on `occurrence_dow`.
///
/// Weekend days map to their own levels; weekdays are numbered in
/// chronological order starting from the occurrence day itself.
pub fn wday_level(occurrence_dow: u8, offset: usize) -> Result<WdayLevel> {
    if !(1..=7).contains(&occurrence_dow) {
        return Err(Error::invalid(format!("day of week {occurrence_dow} outside 1..=7")));
    }
    if offset >= 7 {
        return Err(Error::invalid(format!(
            "offset {offset} is outside the reporting week (must be < 7)"
        )));
    }
    Ok(match dow_after(occurrence_dow, offset) {
        6 => WdayLevel::Saturday,
        7 => WdayLevel::Sunday,
        _ => {
            let n = (0..=offset)
                .filter(|&k| dow_after(occurrence_dow, k) <= 5)
                .count();
            WdayLevel::Workday(n as u8)
        }
    })
}

/// Precomputed features for days `1..=last_day`, with working-day prefix sums.
#[derive(Clone, Debug)]
pub struct DayTable {
    features: Vec<DayFeatures>,
    workday_prefix: Vec<u32>,
}

impl DayTable {
    pub fn new(cal: &CalendarConfig, last_day: usize) -> Result<Self> {
        let mut features = Vec::with_capacity(last_day);
        let mut workday_prefix = Vec::with_capacity(last_day + 1);
        workday_prefix.push(0);
        let mut date = cal.date(1)?;
        for t in 1..=last_day {
            let f = cal.features_of(date);
            let work = f.dow <= 5 && f.holiday_class != HolidayClass::National;
            workday_prefix.push(workday_prefix[t - 1] + work as u32);
            features.push(f);
            date = date
                .checked_add_days(Days::new(1))
                .ok_or(Error::DateOverflow(t as i64 + 1))?;
        }
        Ok(Self {
            features,
            workday_prefix,
        })
    }

    pub fn last_day(&self) -> usize {
        self.features.len()
    }

    /// Features of day `t` (1-based). Panics when `t` is outside the table.
    #[inline]
    pub fn get(&self, t: usize) -> &DayFeatures {
        &self.features[t - 1]
    }

    /// Same count as [`CalendarConfig::workdays_between`], from prefix sums.
    #[inline]
    pub fn workdays(&self, t: usize, r: usize) -> u32 {
        let start = t + 7 * ((r - t) / 7);
        self.workday_prefix[r - 1] - self.workday_prefix[start - 1]
    }
}
