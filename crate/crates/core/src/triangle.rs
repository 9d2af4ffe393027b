//! Daily run-off triangles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calendar::CalendarConfig;
use crate::error::{Error, Result};

/// One event: occurrence day index and reporting delay in days.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventRecord {
    pub occurrence_day: usize,
    pub delay: usize,
}

impl EventRecord {
    pub fn new(occurrence_day: usize, delay: usize) -> Self {
        Self {
            occurrence_day,
            delay,
        }
    }

    pub fn report_day(&self) -> usize {
        self.occurrence_day + self.delay
    }
}

/// Counts `N_td` observed at evaluation day `tau`, with daily exposure.
///
/// Rows are stored sparsely as `(d, count)` pairs sorted by delay, holding
/// only nonzero cells with `t + d <= tau`.
#[derive(Clone, Debug)]
pub struct RunoffTriangle {
    tau: usize,
    rows: Vec<Vec<(usize, u64)>>,
    exposure: Vec<f64>,
    calendar: CalendarConfig,
}

impl RunoffTriangle {
    /// Tally events reported by `tau`; later reports are dropped.
    pub fn aggregate_events(
        events: &[EventRecord],
        tau: usize,
        exposure: Vec<f64>,
        calendar: CalendarConfig,
    ) -> Result<Self> {
        let mut cells = Vec::with_capacity(events.len());
        for e in events {
            if e.occurrence_day == 0 || e.occurrence_day > tau {
                return Err(Error::invalid(format!(
                    "event occurrence day {} outside 1..={tau}",
                    e.occurrence_day
                )));
            }
            if e.report_day() <= tau {
                cells.push((e.occurrence_day, e.delay, 1));
            }
        }
        Self::from_cells(tau, cells, exposure, calendar)
    }

    /// Build from explicit `(t, d, count)` cells; duplicate cells are summed.
    pub fn from_cells(
        tau: usize,
        cells: impl IntoIterator<Item = (usize, usize, u64)>,
        exposure: Vec<f64>,
        calendar: CalendarConfig,
    ) -> Result<Self> {
        let mut tallies: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); tau];
        for (t, d, n) in cells {
            if t == 0 || t + d > tau {
                return Err(Error::invalid(format!(
                    "cell ({t}, {d}) is not observable at evaluation day {tau}"
                )));
            }
            *tallies[t - 1].entry(d).or_default() += n;
        }
        let rows = tallies
            .into_iter()
            .map(|m| m.into_iter().filter(|&(_, n)| n > 0).collect())
            .collect();
        Self::from_rows(tau, rows, exposure, calendar)
    }

    fn from_rows(
        tau: usize,
        mut rows: Vec<Vec<(usize, u64)>>,
        exposure: Vec<f64>,
        calendar: CalendarConfig,
    ) -> Result<Self> {
        if tau == 0 {
            return Err(Error::invalid("evaluation day must be at least 1"));
        }
        if exposure.len() != tau {
            return Err(Error::invalid(format!(
                "exposure has {} entries, expected {tau}",
                exposure.len()
            )));
        }
        if let Some((i, e)) = exposure
            .iter()
            .enumerate()
            .find(|(_, e)| !(e.is_finite() && **e > 0.0))
        {
            return Err(Error::invalid(format!(
                "exposure on day {} is {e}; must be positive",
                i + 1
            )));
        }
        for row in &mut rows {
            row.retain(|&(_, n)| n > 0);
        }
        Ok(Self {
            tau,
            rows,
            exposure,
            calendar,
        })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn calendar(&self) -> &CalendarConfig {
        &self.calendar
    }

    pub fn exposure(&self) -> &[f64] {
        &self.exposure
    }

    /// Exposure of day `t` (1-based).
    pub fn exposure_at(&self, t: usize) -> f64 {
        self.exposure[t - 1]
    }

    /// Nonzero cells of row `t` as `(d, N_td)` in increasing `d`.
    pub fn row(&self, t: usize) -> &[(usize, u64)] {
        &self.rows[t - 1]
    }

    pub fn get(&self, t: usize, d: usize) -> u64 {
        let row = &self.rows[t - 1];
        match row.binary_search_by_key(&d, |&(k, _)| k) {
            Ok(i) => row[i].1,
            Err(_) => 0,
        }
    }

    /// Dense row `N_t0 .. N_{t,tau-t}`.
    pub fn row_dense(&self, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.tau - t + 1];
        for &(d, n) in self.row(t) {
            out[d] = n as f64;
        }
        out
    }

    /// Reported count `N_t^r`.
    pub fn reported(&self, t: usize) -> u64 {
        self.row(t).iter().map(|&(_, n)| n).sum()
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().flatten().map(|&(_, n)| n).sum()
    }

    /// Iterate nonzero cells as `(t, d, N_td)`.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&(d, n)| (i + 1, d, n)))
    }

    /// Column sums `sum_{t <= tau - d} N_td` for `d = 0..tau`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.tau];
        for (_, d, n) in self.cells() {
            out[d] += n as f64;
        }
        out
    }

    /// Cumulative counts `C_td = sum_{j <= d} N_tj` for `d <= tau - t`.
    pub fn cumulative_counts(&self) -> Vec<Vec<f64>> {
        (1..=self.tau)
            .map(|t| {
                let mut row = self.row_dense(t);
                for d in 1..row.len() {
                    row[d] += row[d - 1];
                }
                row
            })
            .collect()
    }

    /// Observed cells `t + d <= tau` and unreported cells `t + d > tau, d <= horizon`.
    pub fn observed_ibnr_split(&self, horizon: usize) -> Result<CellSplit> {
        if horizon + 1 < self.tau {
            return Err(Error::invalid(format!(
                "delay horizon {horizon} must be at least tau - 1 = {}",
                self.tau - 1
            )));
        }
        let mut observed = Vec::with_capacity(self.tau * (self.tau + 1) / 2);
        let mut unreported = Vec::new();
        for t in 1..=self.tau {
            for d in 0..=horizon {
                if t + d <= self.tau {
                    observed.push((t, d));
                } else {
                    unreported.push((t, d));
                }
            }
        }
        Ok(CellSplit {
            observed,
            unreported,
        })
    }
}

/// Partition of cells at an evaluation date.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellSplit {
    pub observed: Vec<(usize, usize)>,
    pub unreported: Vec<(usize, usize)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn cal() -> CalendarConfig {
        CalendarConfig::new(NaiveDate::from_ymd_opt(2000, 1, 1).unwrap())
    }

    fn ev(t: usize, d: usize) -> EventRecord {
        EventRecord::new(t, d)
    }

    #[test]
    fn tally_small() {
        let tri = RunoffTriangle::aggregate_events(
            &[ev(1, 0), ev(1, 0), ev(1, 1), ev(2, 0)],
            2,
            vec![1.0; 2],
            cal(),
        )
        .unwrap();
        assert_eq!(tri.get(1, 0), 2);
        assert_eq!(tri.get(1, 1), 1);
        assert_eq!(tri.get(2, 0), 1);
        assert_eq!(tri.total(), 4);
    }

    #[test]
    fn late_reports_truncated() {
        let tri = RunoffTriangle::aggregate_events(&[ev(1, 2)], 2, vec![1.0; 2], cal()).unwrap();
        assert_eq!(tri.total(), 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(RunoffTriangle::aggregate_events(&[ev(3, 0)], 2, vec![1.0; 2], cal()).is_err());
        assert!(RunoffTriangle::aggregate_events(&[], 2, vec![1.0, 0.0], cal()).is_err());
        assert!(RunoffTriangle::aggregate_events(&[], 2, vec![1.0], cal()).is_err());
    }

    #[test]
    fn cumulative_small() {
        let tri = RunoffTriangle::from_cells(2, [(1, 0, 2), (1, 1, 1)], vec![1.0; 2], cal()).unwrap();
        let c = tri.cumulative_counts();
        assert_eq!(c[0], vec![2.0, 3.0]);
        assert_eq!(c[1], vec![0.0]);
    }

    #[test]
    fn split_examples() {
        let tri = RunoffTriangle::from_cells(2, [], vec![1.0; 2], cal()).unwrap();
        let s = tri.observed_ibnr_split(1).unwrap();
        assert_eq!(s.observed, vec![(1, 0), (1, 1), (2, 0)]);
        assert_eq!(s.unreported, vec![(2, 1)]);

        let tri = RunoffTriangle::from_cells(1, [], vec![1.0], cal()).unwrap();
        let s = tri.observed_ibnr_split(4).unwrap();
        assert_eq!(s.unreported, vec![(1, 1), (1, 2), (1, 3), (1, 4)]);

        let tri = RunoffTriangle::from_cells(3, [], vec![1.0; 3], cal()).unwrap();
        let s = tri.observed_ibnr_split(3).unwrap();
        let lattice = |pred: &dyn Fn(usize, usize) -> bool| {
            (1..=3)
                .flat_map(|t| (0..=3).map(move |d| (t, d)))
                .filter(|&(t, d)| pred(t, d))
                .count()
        };
        assert_eq!(s.observed.len(), lattice(&|t, d| t + d <= 3));
        assert_eq!(s.unreported.len(), lattice(&|t, d| t + d > 3));
        assert_eq!(s.observed.len(), 6);
        assert_eq!(s.unreported.len(), 6);
    }

    proptest! {
        #[test]
        fn cumulative_matches_bruteforce(cells in proptest::collection::vec(0u64..20, 15)) {
            // 5x5 upper triangle filled row by row.
            let mut it = cells.into_iter();
            let mut list = Vec::new();
            for t in 1..=5 {
                for d in 0..=(5 - t) {
                    list.push((t, d, it.next().unwrap()));
                }
            }
            let tri = RunoffTriangle::from_cells(5, list.clone(), vec![1.0; 5], cal()).unwrap();
            let c = tri.cumulative_counts();
            for t in 1..=5 {
                for d in 0..=(5 - t) {
                    let brute: u64 = list.iter().filter(|&&(tt, dd, _)| tt == t && dd <= d).map(|x| x.2).sum();
                    prop_assert_eq!(c[t - 1][d], brute as f64);
                    if d > 0 {
                        prop_assert!(c[t - 1][d] >= c[t - 1][d - 1]);
                    }
                }
            }
        }

        #[test]
        fn aggregation_permutation_invariant(
            raw in proptest::collection::vec((1usize..=6, 0usize..8), 0..60),
            seed in any::<u64>()
        ) {
            let events: Vec<_> = raw.iter().map(|&(t, d)| ev(t, d)).collect();
            let mut shuffled = events.clone();
            // Deterministic rotation-based shuffle.
            if !shuffled.is_empty() {
                let k = (seed as usize) % shuffled.len();
                shuffled.rotate_left(k);
                shuffled.reverse();
            }
            let a = RunoffTriangle::aggregate_events(&events, 6, vec![1.0; 6], cal()).unwrap();
            let b = RunoffTriangle::aggregate_events(&shuffled, 6, vec![1.0; 6], cal()).unwrap();
            let kept = events.iter().filter(|e| e.report_day() <= 6).count() as u64;
            prop_assert_eq!(a.total(), kept);
            prop_assert_eq!(a.cells().collect::<Vec<_>>(), b.cells().collect::<Vec<_>>());
        }
    }
}
