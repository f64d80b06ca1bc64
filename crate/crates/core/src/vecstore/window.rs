use std::ops::Range;

use chrono::{DateTime, Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::dataset::TimestampedDataset;
use crate::{Error, Result};

pub const DAY_SECONDS: i64 = 86_400;
pub const WEEK_SECONDS: i64 = 7 * DAY_SECONDS;
/// Synthetic streams use fixed 30-day months.
pub const MONTH_SECONDS: i64 = 30 * DAY_SECONDS;

/// How timestamps are bucketed into periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Day,
    Week,
    /// Fixed 30-day buckets aligned on the epoch.
    Month,
    /// Calendar months (UTC); period index is `year * 12 + month0`.
    CalendarMonth,
}

impl Granularity {
    pub fn label(self) -> &'static str {
        match self {
            Granularity::Day => "day",
            Granularity::Week => "week",
            Granularity::Month => "month",
            Granularity::CalendarMonth => "calendar_month",
        }
    }

    pub fn period_of(self, ts: i64) -> i64 {
        match self {
            Granularity::Day => ts.div_euclid(DAY_SECONDS),
            Granularity::Week => ts.div_euclid(WEEK_SECONDS),
            Granularity::Month => ts.div_euclid(MONTH_SECONDS),
            Granularity::CalendarMonth => {
                let dt = DateTime::from_timestamp(ts, 0).expect("timestamp in chrono range");
                dt.year() as i64 * 12 + dt.month0() as i64
            }
        }
    }

    /// Half-open epoch interval `[start, end)` covered by a period.
    pub fn period_bounds(self, period: i64) -> (i64, i64) {
        match self {
            Granularity::Day => (period * DAY_SECONDS, (period + 1) * DAY_SECONDS),
            Granularity::Week => (period * WEEK_SECONDS, (period + 1) * WEEK_SECONDS),
            Granularity::Month => (period * MONTH_SECONDS, (period + 1) * MONTH_SECONDS),
            Granularity::CalendarMonth => (month_start(period), month_start(period + 1)),
        }
    }
}

fn month_start(period: i64) -> i64 {
    let year = period.div_euclid(12) as i32;
    let month = period.rem_euclid(12) as u32 + 1;
    NaiveDate::from_ymd_opt(year, month, 1)
        .expect("valid calendar month")
        .and_hms_opt(0, 0, 0)
        .unwrap()
        .and_utc()
        .timestamp()
}

/// One month's epoch interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthRange {
    pub month_index: i64,
    pub start_epoch: i64,
    pub end_epoch: i64,
}

/// A run of `length_m` consecutive months starting at `start_month_index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start_month_index: i64,
    pub length_m: usize,
    pub month_epoch_map: Vec<MonthRange>,
}

impl WindowSpec {
    pub fn new(start_month_index: i64, length_m: usize, month_epoch_map: Vec<MonthRange>) -> Result<Self> {
        if length_m == 0 {
            return Err(Error::InvalidConfig("window length must be positive".into()));
        }
        for w in month_epoch_map.windows(2) {
            if w[1].month_index != w[0].month_index + 1 || w[1].start_epoch != w[0].end_epoch {
                return Err(Error::InvalidConfig(format!(
                    "months {} and {} are not contiguous",
                    w[0].month_index, w[1].month_index
                )));
            }
        }
        if month_epoch_map.iter().any(|m| m.end_epoch <= m.start_epoch) {
            return Err(Error::InvalidConfig("empty month interval".into()));
        }
        Ok(Self {
            start_month_index,
            length_m,
            month_epoch_map,
        })
    }

    /// Window over months produced by `granularity` (the map covers exactly
    /// the window's months).
    pub fn months(granularity: Granularity, start_month_index: i64, length_m: usize) -> Result<Self> {
        let map = (start_month_index..start_month_index + length_m as i64)
            .map(|m| {
                let (s, e) = granularity.period_bounds(m);
                MonthRange {
                    month_index: m,
                    start_epoch: s,
                    end_epoch: e,
                }
            })
            .collect();
        Self::new(start_month_index, length_m, map)
    }

    /// Fixed 30-day months.
    pub fn fixed(start_month_index: i64, length_m: usize) -> Self {
        Self::months(Granularity::Month, start_month_index, length_m)
            .expect("fixed months are contiguous")
    }

    /// `[start, end)` epochs of the window's months that are present in the
    /// map; `(0, 0)` when none are.
    pub fn bounds(&self) -> (i64, i64) {
        let last = self.start_month_index + self.length_m as i64 - 1;
        let mut inside = self
            .month_epoch_map
            .iter()
            .filter(|m| m.month_index >= self.start_month_index && m.month_index <= last);
        match (inside.next(), inside.last()) {
            (Some(first), Some(end)) => (first.start_epoch, end.end_epoch),
            (Some(only), None) => (only.start_epoch, only.end_epoch),
            _ => (0, 0),
        }
    }
}

/// Rows of `ds` that fall inside the window, in storage order.
pub fn slice_window(ds: &TimestampedDataset, window: &WindowSpec) -> TimestampedDataset {
    let (start, end) = window.bounds();
    ds.slice_rows(ds.rows_in(start, end))
}

/// Contiguous row range of every non-empty period, ascending by period.
pub fn period_partition(ds: &TimestampedDataset, granularity: Granularity) -> Vec<(i64, Range<usize>)> {
    let mut out: Vec<(i64, Range<usize>)> = Vec::new();
    for (row, &ts) in ds.timestamps().iter().enumerate() {
        let p = granularity.period_of(ts);
        match out.last_mut() {
            Some((last, range)) if *last == p => range.end = row + 1,
            _ => out.push((p, row..row + 1)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_months() -> TimestampedDataset {
        let ts: Vec<i64> = (0..9).map(|i| (i / 3) * MONTH_SECONDS + (i % 3) * 1000).collect();
        TimestampedDataset::new(1, (0..9).map(|i| i as f32).collect(), ts, (0..9).collect()).unwrap()
    }

    #[test]
    fn single_month_window() {
        let ds = three_months();
        let s = slice_window(&ds, &WindowSpec::fixed(1, 1));
        assert_eq!(s.ids(), &[3, 4, 5]);
    }

    #[test]
    fn full_window_is_identity_and_past_end_is_empty() {
        let ds = three_months();
        assert_eq!(slice_window(&ds, &WindowSpec::fixed(0, 3)), ds);
        assert!(slice_window(&ds, &WindowSpec::fixed(5, 2)).is_empty());
    }

    #[test]
    fn non_contiguous_map_is_rejected() {
        let map = vec![
            MonthRange { month_index: 0, start_epoch: 0, end_epoch: 10 },
            MonthRange { month_index: 2, start_epoch: 10, end_epoch: 20 },
        ];
        assert!(WindowSpec::new(0, 2, map).is_err());
    }

    #[test]
    fn calendar_months_follow_the_calendar() {
        // 2021-02-01T00:00:00Z and 2021-03-01T00:00:00Z
        let feb = 1_612_137_600;
        let mar = 1_614_556_800;
        let g = Granularity::CalendarMonth;
        assert_eq!(g.period_of(feb), 2021 * 12 + 1);
        assert_eq!(g.period_of(mar - 1), 2021 * 12 + 1);
        assert_eq!(g.period_of(mar), 2021 * 12 + 2);
        assert_eq!(g.period_bounds(2021 * 12 + 1), (feb, mar));
    }

    #[test]
    fn partition_groups_periods() {
        let ds = three_months();
        let parts = period_partition(&ds, Granularity::Month);
        assert_eq!(parts, vec![(0, 0..3), (1, 3..6), (2, 6..9)]);
    }
}
