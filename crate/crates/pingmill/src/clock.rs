//! Local-time arithmetic over a fixed UTC offset.
//!
//! Disaster analyses span a few weeks in one region, so a single fixed
//! offset (no DST transitions) keeps hour labels stable and reproducible
//! across the whole run. Weekday 0 is Monday.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SECONDS_PER_WEEK: i64 = 604_800;

/// Fixed UTC offset in minutes, applied to every timestamp of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalClock {
    utc_offset_minutes: i32,
}

impl LocalClock {
    /// Offsets are limited to the real-world range UTC-12:00 .. UTC+14:00.
    pub fn from_offset_minutes(utc_offset_minutes: i32) -> Result<Self> {
        if !(-720..=840).contains(&utc_offset_minutes) {
            return Err(Error::Config(format!(
                "utc offset {utc_offset_minutes} min outside [-720, 840]"
            )));
        }
        Ok(LocalClock { utc_offset_minutes })
    }

    pub fn utc() -> Self {
        LocalClock {
            utc_offset_minutes: 0,
        }
    }

    pub fn offset_minutes(&self) -> i32 {
        self.utc_offset_minutes
    }

    pub fn offset_seconds(&self) -> i64 {
        self.utc_offset_minutes as i64 * 60
    }
}

/// A calendar date in the run's local frame.
///
/// Ordered chronologically; stored as the day count since 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalDate(i32);

impl LocalDate {
    pub fn from_ordinal(days_since_epoch: i32) -> Self {
        LocalDate(days_since_epoch)
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Self {
        LocalDate(days_from_civil(year, month, day) as i32)
    }

    /// Days since 1970-01-01 (negative before the epoch).
    pub fn ordinal(&self) -> i32 {
        self.0
    }

    pub fn ymd(&self) -> (i32, u32, u32) {
        civil_from_days(self.0 as i64)
    }

    pub fn pred(&self) -> Self {
        LocalDate(self.0 - 1)
    }

    pub fn succ(&self) -> Self {
        LocalDate(self.0 + 1)
    }
}

impl std::fmt::Display for LocalDate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (y, m, d) = self.ymd();
        write!(f, "{y:04}-{m:02}-{d:02}")
    }
}

/// Local calendar position of one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalMoment {
    pub date: LocalDate,
    /// Local hour of day, 0-23.
    pub hour: u8,
    pub minute: u8,
    pub second: u8,
    /// 0 = Monday .. 6 = Sunday.
    pub weekday: u8,
}

/// Convert a UTC timestamp to its local calendar position.
pub fn to_local(timestamp_utc: i64, clock: &LocalClock) -> LocalMoment {
    let local = timestamp_utc + clock.offset_seconds();
    let days = local.div_euclid(SECONDS_PER_DAY);
    let secs = local.rem_euclid(SECONDS_PER_DAY);
    LocalMoment {
        date: LocalDate(days as i32),
        hour: (secs / 3600) as u8,
        minute: ((secs % 3600) / 60) as u8,
        second: (secs % 60) as u8,
        // 1970-01-01 was a Thursday, index 3 with Monday = 0.
        weekday: (days + 3).rem_euclid(7) as u8,
    }
}

/// Reconstruct the UTC timestamp of a local calendar position.
pub fn from_local(
    date: LocalDate,
    hour: u8,
    minute: u8,
    second: u8,
    clock: &LocalClock,
) -> i64 {
    date.ordinal() as i64 * SECONDS_PER_DAY + hour as i64 * 3600 + minute as i64 * 60
        + second as i64
        - clock.offset_seconds()
}

/// Hour-of-week bin, 0 = Monday 00:00-00:59 local .. 167 = Sunday 23:00-23:59.
pub fn hour_of_week(timestamp_utc: i64, clock: &LocalClock) -> u16 {
    let m = to_local(timestamp_utc, clock);
    m.weekday as u16 * 24 + m.hour as u16
}

/// Half-open UTC interval: start inclusive, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    start_utc: i64,
    end_utc: i64,
}

impl TimeWindow {
    pub fn new(start_utc: i64, end_utc: i64) -> Result<Self> {
        if start_utc >= end_utc {
            return Err(Error::Config(format!(
                "time window start {start_utc} must be before end {end_utc}"
            )));
        }
        Ok(TimeWindow { start_utc, end_utc })
    }

    pub fn start(&self) -> i64 {
        self.start_utc
    }

    pub fn end(&self) -> i64 {
        self.end_utc
    }

    pub fn contains(&self, timestamp_utc: i64) -> bool {
        timestamp_utc >= self.start_utc && timestamp_utc < self.end_utc
    }
}

/// Hour windows that classify pings into home/work periods.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DaySchedule {
    home_hours: u32,
    work_hours: u32,
    work_days: u8,
}

impl DaySchedule {
    pub fn new(
        home_hours: impl IntoIterator<Item = u8>,
        work_hours: impl IntoIterator<Item = u8>,
        work_days: impl IntoIterator<Item = u8>,
    ) -> Result<Self> {
        let home = hour_mask(home_hours)?;
        let work = hour_mask(work_hours)?;
        let mut days = 0u8;
        for d in work_days {
            if d > 6 {
                return Err(Error::Config(format!("weekday {d} outside 0-6")));
            }
            days |= 1 << d;
        }
        if home == 0 || work == 0 {
            return Err(Error::Config("home and work hour sets must be non-empty".into()));
        }
        if home & work != 0 {
            return Err(Error::Config("home and work hour sets overlap".into()));
        }
        Ok(DaySchedule {
            home_hours: home,
            work_hours: work,
            work_days: days,
        })
    }

    /// Night hours 22-05, working hours 9-16 Monday through Friday.
    pub fn conventional() -> Self {
        DaySchedule::new(
            [22, 23, 0, 1, 2, 3, 4, 5],
            [9, 10, 11, 12, 13, 14, 15, 16],
            [0, 1, 2, 3, 4],
        )
        .expect("static schedule is valid")
    }

    pub fn is_home_hour(&self, hour: u8) -> bool {
        hour < 24 && self.home_hours & (1 << hour) != 0
    }

    pub fn is_work_hour(&self, hour: u8) -> bool {
        hour < 24 && self.work_hours & (1 << hour) != 0
    }

    pub fn is_work_day(&self, weekday: u8) -> bool {
        weekday < 7 && self.work_days & (1 << weekday) != 0
    }

    pub fn home_hour_list(&self) -> Vec<u8> {
        (0..24).filter(|h| self.is_home_hour(*h)).collect()
    }
}

fn hour_mask(hours: impl IntoIterator<Item = u8>) -> Result<u32> {
    let mut mask = 0u32;
    for h in hours {
        if h > 23 {
            return Err(Error::Config(format!("hour {h} outside 0-23")));
        }
        mask |= 1 << h;
    }
    Ok(mask)
}

// Civil calendar conversions after Howard Hinnant's algorithms; exact over
// the supported range (years 1970-2100 and well beyond).
fn days_from_civil(y: i32, m: u32, d: u32) -> i64 {
    let y = y as i64 - if m <= 2 { 1 } else { 0 };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m as i64 + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn civil_from_days(z: i64) -> (i32, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    ((y + if m <= 2 { 1 } else { 0 }) as i32, m, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn epoch_is_thursday_midnight() {
        let m = to_local(0, &LocalClock::utc());
        assert_eq!(m.date, LocalDate::from_ymd(1970, 1, 1));
        assert_eq!(m.hour, 0);
        assert_eq!(m.weekday, 3);
    }

    #[test]
    fn negative_offset_crosses_midnight() {
        let clock = LocalClock::from_offset_minutes(-300).unwrap();
        let m = to_local(0, &clock);
        assert_eq!(m.date, LocalDate::from_ymd(1969, 12, 31));
        assert_eq!(m.hour, 19);
        assert_eq!(m.weekday, 2);
    }

    #[test]
    fn one_day_shift() {
        let m = to_local(86_400, &LocalClock::utc());
        assert_eq!(m.date, LocalDate::from_ymd(1970, 1, 2));
        assert_eq!(m.hour, 0);
        assert_eq!(m.weekday, 4);
    }

    #[test]
    fn hour_of_week_bins() {
        // 1970-01-05 was a Monday.
        let monday = LocalDate::from_ymd(1970, 1, 5);
        let clock = LocalClock::utc();
        let monday_0030 = from_local(monday, 0, 30, 0, &clock);
        assert_eq!(hour_of_week(monday_0030, &clock), 0);
        let monday_2330 = from_local(monday, 23, 30, 0, &clock);
        assert_eq!(hour_of_week(monday_2330, &clock), 23);
        let sunday = LocalDate::from_ymd(1970, 1, 11);
        let sunday_2359 = from_local(sunday, 23, 59, 0, &clock);
        assert_eq!(hour_of_week(sunday_2359, &clock), 167);
    }

    #[test]
    fn offset_range_enforced() {
        assert!(LocalClock::from_offset_minutes(-721).is_err());
        assert!(LocalClock::from_offset_minutes(841).is_err());
        assert!(LocalClock::from_offset_minutes(840).is_ok());
    }

    #[test]
    fn window_rejects_reversed_bounds() {
        assert!(TimeWindow::new(10, 10).is_err());
        assert!(TimeWindow::new(10, 5).is_err());
    }

    #[test]
    fn schedule_rejects_overlap_and_empty() {
        assert!(DaySchedule::new([1], [1], [0]).is_err());
        assert!(DaySchedule::new([], [9], [0]).is_err());
        assert!(DaySchedule::new([22], [], [0]).is_err());
    }

    #[test]
    fn date_display_pads() {
        assert_eq!(LocalDate::from_ymd(2023, 3, 7).to_string(), "2023-03-07");
    }

    proptest! {
        #[test]
        fn round_trips_through_local(ts in -2_000_000_000i64..4_000_000_000, offset in -720i32..=840) {
            let clock = LocalClock::from_offset_minutes(offset).unwrap();
            let m = to_local(ts, &clock);
            let back = from_local(m.date, m.hour, m.minute, m.second, &clock);
            prop_assert_eq!(back, ts);
        }

        #[test]
        fn adding_a_day_keeps_hour_and_advances_date(ts in 0i64..4_000_000_000, offset in -720i32..=840) {
            let clock = LocalClock::from_offset_minutes(offset).unwrap();
            let a = to_local(ts, &clock);
            let b = to_local(ts + SECONDS_PER_DAY, &clock);
            prop_assert_eq!(a.hour, b.hour);
            prop_assert_eq!(a.date.ordinal() + 1, b.date.ordinal());
        }

        #[test]
        fn hour_of_week_is_periodic(ts in 0i64..4_000_000_000, offset in -720i32..=840) {
            let clock = LocalClock::from_offset_minutes(offset).unwrap();
            prop_assert_eq!(hour_of_week(ts, &clock), hour_of_week(ts + SECONDS_PER_WEEK, &clock));
        }
    }

    #[test]
    fn hour_of_week_is_surjective_over_a_week() {
        let clock = LocalClock::from_offset_minutes(120).unwrap();
        let mut seen = [false; 168];
        for h in 0..168 {
            seen[hour_of_week(h as i64 * 3600, &clock) as usize] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }
}
