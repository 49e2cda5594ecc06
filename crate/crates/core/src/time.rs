//! Logical simulation time.
//!
//! All components read time from an explicit logical clock measured in whole
//! seconds since the Unix epoch. Nothing reads the wall clock. Days are UTC and
//! half-open: a timestamp exactly at midnight belongs to the new day.

use std::fmt;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const SECONDS_PER_DAY: u64 = 86_400;

/// 2020-01-01T00:00:00Z, the default logical clock origin.
pub const DEFAULT_ORIGIN: Timestamp = Timestamp(1_577_836_800);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn secs(self) -> u64 {
        self.0
    }

    pub fn plus(self, secs: u64) -> Self {
        Timestamp(self.0 + secs)
    }

    pub fn saturating_sub(self, other: Timestamp) -> u64 {
        self.0.saturating_sub(other.0)
    }

    pub fn day(self) -> Day {
        Day((self.0 / SECONDS_PER_DAY) as u32)
    }

    pub fn to_iso(self) -> String {
        match DateTime::<Utc>::from_timestamp(self.0 as i64, 0) {
            Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Secs, true),
            None => format!("@{}", self.0),
        }
    }

    pub fn parse_iso(s: &str) -> Option<Self> {
        let dt = DateTime::parse_from_rfc3339(s).ok()?;
        u64::try_from(dt.timestamp()).ok().map(Timestamp)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso())
    }
}

/// A UTC calendar day, counted from the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(pub u32);

impl Day {
    pub fn start(self) -> Timestamp {
        Timestamp(u64::from(self.0) * SECONDS_PER_DAY)
    }

    /// First second of the following day (exclusive end of this day).
    pub fn end(self) -> Timestamp {
        self.next().start()
    }

    pub fn next(self) -> Day {
        Day(self.0 + 1)
    }

    pub fn offset(self, days: u32) -> Day {
        Day(self.0 + days)
    }

    pub fn contains(self, t: Timestamp) -> bool {
        self.start() <= t && t < self.end()
    }

    pub fn to_date(self) -> NaiveDate {
        DateTime::<Utc>::from_timestamp(self.start().0 as i64, 0)
            .expect("day within chrono range")
            .date_naive()
    }

    pub fn from_date(date: NaiveDate) -> Option<Self> {
        let secs = date.and_hms_opt(0, 0, 0)?.and_utc().timestamp();
        u64::try_from(secs).ok().map(|s| Timestamp(s).day())
    }

    pub fn parse(s: &str) -> Option<Self> {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().and_then(Self::from_date)
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_date().format("%Y-%m-%d"))
    }
}

impl Serialize for Day {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Day {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Day::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("invalid day `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_a_day_boundary() {
        let d = DEFAULT_ORIGIN.day();
        assert_eq!(d.start(), DEFAULT_ORIGIN);
        assert_eq!(d.to_string(), "2020-01-01");
        assert_eq!(DEFAULT_ORIGIN.to_iso(), "2020-01-01T00:00:00Z");
        assert_eq!(Timestamp::parse_iso("2020-01-01T00:00:00Z"), Some(DEFAULT_ORIGIN));
    }

    #[test]
    fn midnight_belongs_to_next_day() {
        let d = DEFAULT_ORIGIN.day();
        assert!(!d.contains(d.end()));
        assert!(d.next().contains(d.end()));
        assert!(d.contains(d.end().plus(0).0.checked_sub(1).map(Timestamp).unwrap()));
        assert_eq!(Day::parse("2020-01-02"), Some(d.next()));
    }
}
