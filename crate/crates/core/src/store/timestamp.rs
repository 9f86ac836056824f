use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use super::StoreError;

const FORMAT: &str = "%Y%m%dT%H%M%S%.3fZ";

/// UTC timestamp keying one evolution batch, in ISO 8601 basic format with
/// millisecond precision (`20260115T093000.000Z`). Safe to use as a directory name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BatchTimestamp(String);

impl BatchTimestamp {
    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Self(dt.format(FORMAT).to_string())
    }

    pub fn now() -> Self {
        Self::from_datetime(Utc::now())
    }

    pub fn parse(s: &str) -> Result<Self, StoreError> {
        let body = s
            .strip_suffix('Z')
            .ok_or_else(|| StoreError::InvalidTimestamp(s.to_string()))?;
        NaiveDateTime::parse_from_str(body, "%Y%m%dT%H%M%S%.3f")
            .map_err(|_| StoreError::InvalidTimestamp(s.to_string()))?;
        // Reject forms chrono accepts leniently (e.g. missing fraction) so the
        // textual key stays canonical.
        if s.len() != "20260115T093000.000Z".len() {
            return Err(StoreError::InvalidTimestamp(s.to_string()));
        }
        Ok(Self(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BatchTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for BatchTimestamp {
    type Error = StoreError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value)
    }
}

impl From<BatchTimestamp> for String {
    fn from(value: BatchTimestamp) -> Self {
        value.0
    }
}

/// Source of wall-clock time for batch keys and profile stamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;

    fn batch_timestamp(&self) -> BatchTimestamp {
        BatchTimestamp::from_datetime(self.now())
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock: returns `start`, `start + step`, `start + 2*step`, ...
#[derive(Debug)]
pub struct SteppingClock {
    start: DateTime<Utc>,
    step: Duration,
    ticks: AtomicU64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        Self {
            start,
            step,
            ticks: AtomicU64::new(0),
        }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let n = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + self.step * (n as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn format_round_trips() {
        let dt = Utc.with_ymd_and_hms(2026, 1, 15, 9, 30, 0).unwrap();
        let ts = BatchTimestamp::from_datetime(dt);
        assert_eq!(ts.as_str(), "20260115T093000.000Z");
        assert_eq!(BatchTimestamp::parse(ts.as_str()).unwrap(), ts);
    }

    #[test]
    fn rejects_non_canonical() {
        for bad in ["", "2026-01-15T09:30:00Z", "20260115T093000Z", "20260115T093000.000", "x"] {
            assert!(BatchTimestamp::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn stepping_clock_is_strictly_increasing() {
        let clock = SteppingClock::new(
            Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap(),
            Duration::seconds(1),
        );
        let a = clock.batch_timestamp();
        let b = clock.batch_timestamp();
        assert!(a < b);
        assert_eq!(b.as_str(), "20260101T000001.000Z");
    }
}
