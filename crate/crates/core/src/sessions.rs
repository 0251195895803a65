//! Charging-session logs, weather and calendar inputs, and the cleaning rules
//! applied before any forecasting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timefmt::{self, format_timestamp, hours_between, parse_timestamp};

pub const SESSION_HEADER: [&str; 8] = [
    "session_id",
    "car_id",
    "station_id",
    "location",
    "arrival",
    "departure",
    "energy_kwh",
    "max_power_kw",
];
pub const WEATHER_HEADER: [&str; 4] = ["hour_start", "temp_c", "wind_mps", "precip_mm"];

/// Sessions below this energy are dropped.
pub const MIN_ENERGY_KWH: f64 = 1.0;
/// Sessions shorter than 15 minutes are dropped; exactly 15 minutes is kept.
pub const MIN_DURATION_H: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Workplace,
    Residential,
}

impl Location {
    pub const ALL: [Location; 2] = [Location::Workplace, Location::Residential];

    pub fn as_str(self) -> &'static str {
        match self {
            Location::Workplace => "workplace",
            Location::Residential => "residential",
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Location {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "workplace" => Ok(Location::Workplace),
            "residential" => Ok(Location::Residential),
            other => Err(format!("unknown location tag `{other}`")),
        }
    }
}

/// One plug-in event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingSession {
    pub session_id: String,
    pub car_id: String,
    pub station_id: String,
    pub location: Location,
    #[serde(with = "timefmt::serde_ts")]
    pub arrival: NaiveDateTime,
    #[serde(with = "timefmt::serde_ts")]
    pub departure: NaiveDateTime,
    pub energy_kwh: f64,
    pub max_power_kw: f64,
}

impl ChargingSession {
    pub fn duration_h(&self) -> f64 {
        hours_between(&self.arrival, &self.departure)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    /// departure is not after arrival
    NonPositiveDuration,
    LowEnergy,
    ShortDuration,
    /// more energy than the station could deliver in the connection time
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub session: ChargingSession,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cleaned {
    pub kept: Vec<ChargingSession>,
    pub rejected: Vec<Rejected>,
}

impl Cleaned {
    pub fn rejection_counts(&self) -> BTreeMap<RejectReason, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.rejected {
            *counts.entry(r.reason).or_insert(0) += 1;
        }
        counts
    }
}

/// First violated cleaning rule, if any. Rules are checked in a fixed order so
/// each rejected session carries exactly one tag.
pub fn rejection_reason(s: &ChargingSession) -> Option<RejectReason> {
    let duration = s.duration_h();
    if s.departure <= s.arrival {
        Some(RejectReason::NonPositiveDuration)
    } else if s.energy_kwh < MIN_ENERGY_KWH {
        Some(RejectReason::LowEnergy)
    } else if duration < MIN_DURATION_H {
        Some(RejectReason::ShortDuration)
    } else if s.energy_kwh > s.max_power_kw * duration {
        Some(RejectReason::Infeasible)
    } else {
        None
    }
}

pub fn clean_sessions(sessions: &[ChargingSession]) -> Cleaned {
    let mut out = Cleaned::default();
    for s in sessions {
        match rejection_reason(s) {
            None => out.kept.push(s.clone()),
            Some(reason) => out.rejected.push(Rejected {
                session: s.clone(),
                reason,
            }),
        }
    }
    out
}

fn open(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file)))
}

fn check_header<R: std::io::Read>(
    path: &Path,
    reader: &mut csv::Reader<R>,
    expected: &[&str],
) -> Result<()> {
    let header = reader.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            field: "header".into(),
            message: format!("expected `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

struct RowCtx<'a> {
    path: &'a Path,
    row: usize,
}

impl RowCtx<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            row: self.row,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn timestamp(&self, record: &csv::StringRecord, idx: usize, field: &str) -> Result<NaiveDateTime> {
        let raw = record.get(idx).unwrap_or_default();
        parse_timestamp(raw).ok_or_else(|| self.err(field, format!("bad timestamp `{raw}`")))
    }

    fn real(&self, record: &csv::StringRecord, idx: usize, field: &str) -> Result<f64> {
        let raw = record.get(idx).unwrap_or_default();
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(field, format!("bad number `{raw}`"))),
        }
    }

    fn text(&self, record: &csv::StringRecord, idx: usize, field: &str) -> Result<String> {
        match record.get(idx) {
            Some(v) if !v.is_empty() => Ok(v.to_string()),
            _ => Err(self.err(field, "empty value")),
        }
    }
}

/// Reads a sessions CSV. Rows are returned in file order; rows that violate the
/// cleaning rules still parse and are left for [`clean_sessions`].
pub fn parse_sessions(path: impl AsRef<Path>) -> Result<Vec<ChargingSession>> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    check_header(path, &mut reader, &SESSION_HEADER)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let ctx = RowCtx { path, row: i + 1 };
        let record = record.map_err(|e| ctx.err("record", e.to_string()))?;
        if record.len() != SESSION_HEADER.len() {
            return Err(ctx.err(
                "record",
                format!("expected {} fields, got {}", SESSION_HEADER.len(), record.len()),
            ));
        }
        let location = record[3]
            .parse::<Location>()
            .map_err(|m| ctx.err("location", m))?;
        let energy_kwh = ctx.real(&record, 6, "energy_kwh")?;
        if energy_kwh < 0.0 {
            return Err(ctx.err("energy_kwh", "negative energy"));
        }
        let max_power_kw = ctx.real(&record, 7, "max_power_kw")?;
        if max_power_kw <= 0.0 {
            return Err(ctx.err("max_power_kw", "power must be positive"));
        }
        out.push(ChargingSession {
            session_id: ctx.text(&record, 0, "session_id")?,
            car_id: ctx.text(&record, 1, "car_id")?,
            station_id: ctx.text(&record, 2, "station_id")?,
            location,
            arrival: ctx.timestamp(&record, 4, "arrival")?,
            departure: ctx.timestamp(&record, 5, "departure")?,
            energy_kwh,
            max_power_kw,
        });
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

pub fn write_sessions(path: impl AsRef<Path>, sessions: &[ChargingSession]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(SESSION_HEADER)?;
    for s in sessions {
        w.write_record([
            s.session_id.as_str(),
            s.car_id.as_str(),
            s.station_id.as_str(),
            s.location.as_str(),
            &format_timestamp(&s.arrival),
            &format_timestamp(&s.departure),
            &s.energy_kwh.to_string(),
            &s.max_power_kw.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    #[serde(with = "timefmt::serde_ts")]
    pub hour_start: NaiveDateTime,
    pub temp_c: f64,
    pub wind_mps: f64,
    pub precip_mm: f64,
}

/// Hourly weather keyed by the UTC start of the hour.
pub type WeatherMap = BTreeMap<NaiveDateTime, WeatherRecord>;

pub fn load_weather(path: impl AsRef<Path>) -> Result<WeatherMap> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    check_header(path, &mut reader, &WEATHER_HEADER)?;
    let mut out = WeatherMap::new();
    for (i, record) in reader.records().enumerate() {
        let ctx = RowCtx { path, row: i + 1 };
        let record = record.map_err(|e| ctx.err("record", e.to_string()))?;
        let hour_start = ctx.timestamp(&record, 0, "hour_start")?;
        if hour_start.minute() != 0 || hour_start.second() != 0 {
            return Err(ctx.err("hour_start", "not aligned to the hour"));
        }
        let rec = WeatherRecord {
            hour_start,
            temp_c: ctx.real(&record, 1, "temp_c")?,
            wind_mps: ctx.real(&record, 2, "wind_mps")?,
            precip_mm: ctx.real(&record, 3, "precip_mm")?,
        };
        if rec.wind_mps < 0.0 {
            return Err(ctx.err("wind_mps", "negative wind speed"));
        }
        if rec.precip_mm < 0.0 {
            return Err(ctx.err("precip_mm", "negative precipitation"));
        }
        if out.insert(hour_start, rec).is_some() {
            return Err(Error::DuplicateHour {
                path: path.to_path_buf(),
                hour: format_timestamp(&hour_start),
            });
        }
    }
    Ok(out)
}

pub fn write_weather<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a WeatherRecord>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(WEATHER_HEADER)?;
    for r in records {
        w.write_record([
            format_timestamp(&r.hour_start),
            r.temp_c.to_string(),
            r.wind_mps.to_string(),
            r.precip_mm.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// National and school holidays. A date may belong to both sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarInfo {
    pub national_holidays: BTreeSet<NaiveDate>,
    pub school_holidays: BTreeSet<NaiveDate>,
}

impl CalendarInfo {
    pub fn is_national_holiday(&self, d: NaiveDate) -> bool {
        self.national_holidays.contains(&d)
    }

    pub fn is_school_holiday(&self, d: NaiveDate) -> bool {
        self.school_holidays.contains(&d)
    }
}

pub fn load_calendar(path: impl AsRef<Path>) -> Result<CalendarInfo> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_calendar(path: impl AsRef<Path>, calendar: &CalendarInfo) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, calendar)?;
    w.flush().map_err(|e| Error::io(path, e))
}
