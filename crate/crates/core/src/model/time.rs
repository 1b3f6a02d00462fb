use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A UTC instant with millisecond resolution.
///
/// Encoded on the wire and in every file format as ISO-8601 with exactly
/// three fractional digits and a `Z` suffix, e.g. `2002-08-14T12:30:00.000Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

/// Earliest and latest instants accepted (years 0000 and 9999).
const MIN_MILLIS: i64 = -62_167_219_200_000;
const MAX_MILLIS: i64 = 253_402_300_799_999;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid timestamp {0:?}: expected ISO-8601 UTC with milliseconds")]
pub struct TimestampError(pub String);

impl Timestamp {
    pub const UNIX_EPOCH: Timestamp = Timestamp(0);

    pub fn from_millis(millis: i64) -> Option<Self> {
        (MIN_MILLIS..=MAX_MILLIS).contains(&millis).then_some(Timestamp(millis))
    }

    pub fn as_millis(self) -> i64 {
        self.0
    }

    pub fn now() -> Self {
        Timestamp(Utc::now().timestamp_millis())
    }

    pub fn checked_add_millis(self, delta: i64) -> Option<Self> {
        self.0.checked_add(delta).and_then(Self::from_millis)
    }

    fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.0)
            .single()
            .expect("timestamp range checked at construction")
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_datetime().to_rfc3339_opts(SecondsFormat::Millis, true))
    }
}

impl FromStr for Timestamp {
    type Err = TimestampError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // Strict shape: YYYY-MM-DDTHH:MM:SS.mmmZ
        let bytes = s.as_bytes();
        let shape_ok = bytes.len() == 24
            && bytes[4] == b'-'
            && bytes[7] == b'-'
            && bytes[10] == b'T'
            && bytes[13] == b':'
            && bytes[16] == b':'
            && bytes[19] == b'.'
            && bytes[23] == b'Z';
        if !shape_ok {
            return Err(TimestampError(s.to_owned()));
        }
        let parsed = DateTime::parse_from_rfc3339(s).map_err(|_| TimestampError(s.to_owned()))?;
        Timestamp::from_millis(parsed.timestamp_millis()).ok_or_else(|| TimestampError(s.to_owned()))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_with_millis_and_z() {
        let t: Timestamp = "2002-08-14T12:30:00.000Z".parse().unwrap();
        assert_eq!(t.to_string(), "2002-08-14T12:30:00.000Z");
        assert_eq!(Timestamp::UNIX_EPOCH.to_string(), "1970-01-01T00:00:00.000Z");
        let t = Timestamp::from_millis(-1).unwrap();
        assert_eq!(t.to_string(), "1969-12-31T23:59:59.999Z");
    }

    #[test]
    fn rejects_other_shapes() {
        for bad in [
            "2002-08-14T12:30:00Z",
            "2002-08-14T12:30:00.000+00:00",
            "2002-08-14 12:30:00.000Z",
            "2002-08-14T12:30:00.0000Z",
            "2002-13-14T12:30:00.000Z",
            "",
        ] {
            assert!(bad.parse::<Timestamp>().is_err(), "{bad}");
        }
    }

    #[test]
    fn extremes_round_trip() {
        for ms in [MIN_MILLIS, MAX_MILLIS, 0, 1_029_328_200_123] {
            let t = Timestamp::from_millis(ms).unwrap();
            assert_eq!(t.to_string().parse::<Timestamp>().unwrap(), t);
        }
        assert!(Timestamp::from_millis(MAX_MILLIS + 1).is_none());
    }
}
