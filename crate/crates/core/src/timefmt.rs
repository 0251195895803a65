//! UTC timestamp helpers. Timestamps are timezone-naive values in UTC.

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";
pub const DATE_FORMAT: &str = "%Y-%m-%d";

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), TIMESTAMP_FORMAT).ok()
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).ok()
}

pub fn floor_hour(t: &NaiveDateTime) -> NaiveDateTime {
    t.date()
        .and_hms_opt(t.hour(), 0, 0)
        .expect("hour of a valid timestamp")
}

/// Shifts a UTC timestamp into local civil time with a fixed offset.
pub fn to_local(t: &NaiveDateTime, utc_offset_hours: i32) -> NaiveDateTime {
    *t + Duration::hours(utc_offset_hours as i64)
}

pub fn hours_between(from: &NaiveDateTime, to: &NaiveDateTime) -> f64 {
    (*to - *from).num_seconds() as f64 / 3600.0
}

/// serde adapter for `YYYY-MM-DDTHH:MM:SSZ` timestamps.
pub mod serde_ts {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_timestamp(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_timestamp(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("bad timestamp `{raw}`")))
    }
}
