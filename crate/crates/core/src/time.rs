//! UTC timestamps and the calendar arithmetic used by the strategies.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Months, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize};

pub const SECONDS_PER_HOUR: i64 = 3_600;
pub const SECONDS_PER_MINUTE: i64 = 60;
pub const SECONDS_PER_DAY: i64 = 86_400;
/// Funding is exchanged every 8 hours: 00:00, 08:00 and 16:00 UTC.
pub const FUNDING_INTERVAL: i64 = 8 * SECONDS_PER_HOUR;
/// A 365-day year, matching three funding periods per day.
pub const SECONDS_PER_YEAR: i64 = 365 * SECONDS_PER_DAY;
pub const HOURS_PER_YEAR: f64 = 8_760.0;

/// Seconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const fn from_epoch(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub const fn epoch_seconds(self) -> i64 {
        self.0
    }

    pub fn from_ymd_hms(y: i32, m: u32, d: u32, hh: u32, mm: u32, ss: u32) -> Option<Self> {
        Utc.with_ymd_and_hms(y, m, d, hh, mm, ss)
            .single()
            .map(|dt| Timestamp(dt.timestamp()))
    }

    fn datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.0, 0).expect("timestamp within chrono range")
    }

    pub fn year(self) -> i32 {
        self.datetime().year()
    }

    /// `(year, month)` of this instant.
    pub fn year_month(self) -> (i32, u32) {
        let dt = self.datetime();
        (dt.year(), dt.month())
    }

    /// Midnight UTC on the first day of this instant's month.
    pub fn month_start(self) -> Timestamp {
        let dt = self.datetime();
        let date = NaiveDate::from_ymd_opt(dt.year(), dt.month(), 1).expect("valid date");
        Timestamp(date.and_hms_opt(0, 0, 0).expect("valid time").and_utc().timestamp())
    }

    /// Same wall-clock instant `months` calendar months earlier, clamped to
    /// the end of shorter months.
    pub fn minus_months(self, months: u32) -> Timestamp {
        let dt = self.datetime();
        let shifted = dt
            .checked_sub_months(Months::new(months))
            .expect("date within chrono range");
        Timestamp(shifted.timestamp())
    }

    pub fn is_funding_time(self) -> bool {
        self.0.rem_euclid(FUNDING_INTERVAL) == 0
    }

    pub fn is_midnight(self) -> bool {
        self.0.rem_euclid(SECONDS_PER_DAY) == 0
    }

    /// Signed distance to `later` in years of 365 days.
    pub fn years_until(self, later: Timestamp) -> f64 {
        (later.0 - self.0) as f64 / SECONDS_PER_YEAR as f64
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DateTime::from_timestamp(self.0, 0) {
            Some(dt) => write!(f, "{}", dt.format("%Y-%m-%dT%H:%M:%SZ")),
            None => write!(f, "{}", self.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unrecognised timestamp {0:?}; expected ISO-8601 UTC or epoch seconds")]
pub struct ParseTimestampError(String);

impl FromStr for Timestamp {
    type Err = ParseTimestampError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(secs) = s.parse::<i64>() {
            return Ok(Timestamp(secs));
        }
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Timestamp(dt.timestamp()))
            .map_err(|_| ParseTimestampError(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_forms() {
        let iso: Timestamp = "2020-01-31T00:00:00Z".parse().unwrap();
        let epoch: Timestamp = "1580428800".parse().unwrap();
        assert_eq!(iso, epoch);
        assert_eq!(iso.to_string(), "2020-01-31T00:00:00Z");
        assert!("31/01/2020".parse::<Timestamp>().is_err());
    }

    #[test]
    fn calendar_helpers() {
        let t = Timestamp::from_ymd_hms(2021, 8, 31, 13, 0, 0).unwrap();
        assert_eq!(t.month_start(), Timestamp::from_ymd_hms(2021, 8, 1, 0, 0, 0).unwrap());
        assert_eq!(t.minus_months(6), Timestamp::from_ymd_hms(2021, 2, 28, 13, 0, 0).unwrap());
        assert_eq!(t.year_month(), (2021, 8));
        assert!(Timestamp::from_ymd_hms(2021, 8, 31, 16, 0, 0).unwrap().is_funding_time());
        assert!(!t.is_funding_time());
    }
}
