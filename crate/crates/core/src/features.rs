//! The fifteen-slot feature encoding, strictly causal historical aggregates,
//! and the Model1 / Model2 feature masks.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sessions::{CalendarInfo, ChargingSession, Location, WeatherMap};
use crate::timefmt::{self, floor_hour, format_timestamp, to_local};

pub const N_FEATURES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureId {
    #[serde(rename = "HOUR")]
    Hour,
    #[serde(rename = "MONTH")]
    Month,
    #[serde(rename = "SEASON")]
    Season,
    #[serde(rename = "T_WD")]
    Weekday,
    #[serde(rename = "T_NH")]
    NationalHoliday,
    #[serde(rename = "T_SH")]
    SchoolHoliday,
    #[serde(rename = "T_W")]
    Weekend,
    #[serde(rename = "H_AVC")]
    CarMean,
    #[serde(rename = "H_AVS")]
    StationMean,
    #[serde(rename = "H_AVH")]
    HourMean,
    #[serde(rename = "H_MAX")]
    CarMax,
    #[serde(rename = "H_MIN")]
    CarMin,
    #[serde(rename = "M_T")]
    Temperature,
    #[serde(rename = "M_WS")]
    WindSpeed,
    #[serde(rename = "M_PV")]
    Precipitation,
}

impl FeatureId {
    pub const ALL: [FeatureId; N_FEATURES] = [
        FeatureId::Hour,
        FeatureId::Month,
        FeatureId::Season,
        FeatureId::Weekday,
        FeatureId::NationalHoliday,
        FeatureId::SchoolHoliday,
        FeatureId::Weekend,
        FeatureId::CarMean,
        FeatureId::StationMean,
        FeatureId::HourMean,
        FeatureId::CarMax,
        FeatureId::CarMin,
        FeatureId::Temperature,
        FeatureId::WindSpeed,
        FeatureId::Precipitation,
    ];

    /// Features that need per-car or per-station history and are only
    /// available to Model2.
    pub const MODEL2_ONLY: [FeatureId; 4] = [
        FeatureId::CarMean,
        FeatureId::StationMean,
        FeatureId::CarMax,
        FeatureId::CarMin,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<FeatureId> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureId::Hour => "HOUR",
            FeatureId::Month => "MONTH",
            FeatureId::Season => "SEASON",
            FeatureId::Weekday => "T_WD",
            FeatureId::NationalHoliday => "T_NH",
            FeatureId::SchoolHoliday => "T_SH",
            FeatureId::Weekend => "T_W",
            FeatureId::CarMean => "H_AVC",
            FeatureId::StationMean => "H_AVS",
            FeatureId::HourMean => "H_AVH",
            FeatureId::CarMax => "H_MAX",
            FeatureId::CarMin => "H_MIN",
            FeatureId::Temperature => "M_T",
            FeatureId::WindSpeed => "M_WS",
            FeatureId::Precipitation => "M_PV",
        }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Set of active features, one bit per [`FeatureId`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct FeatureMask(u16);

impl FeatureMask {
    pub const EMPTY: FeatureMask = FeatureMask(0);
    pub const ALL: FeatureMask = FeatureMask((1 << N_FEATURES) - 1);

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::Model1 => {
                let mut m = Self::ALL;
                for f in FeatureId::MODEL2_ONLY {
                    m.remove(f);
                }
                m
            }
            Variant::Model2 => Self::ALL,
        }
    }

    pub fn from_ids(ids: impl IntoIterator<Item = FeatureId>) -> Self {
        let mut m = Self::EMPTY;
        for f in ids {
            m.insert(f);
        }
        m
    }

    pub fn contains(self, f: FeatureId) -> bool {
        self.0 & (1 << f.index()) != 0
    }

    pub fn insert(&mut self, f: FeatureId) {
        self.0 |= 1 << f.index();
    }

    pub fn remove(&mut self, f: FeatureId) {
        self.0 &= !(1 << f.index());
    }

    pub fn with(mut self, f: FeatureId) -> Self {
        self.insert(f);
        self
    }

    pub fn without(mut self, f: FeatureId) -> Self {
        self.remove(f);
        self
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: FeatureMask) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: FeatureMask) -> FeatureMask {
        FeatureMask(self.0 | other.0)
    }

    pub fn ids(self) -> impl Iterator<Item = FeatureId> {
        FeatureId::ALL.into_iter().filter(move |f| self.contains(*f))
    }

    pub fn indices(self) -> Vec<usize> {
        self.ids().map(FeatureId::index).collect()
    }

    pub fn bits(self) -> u16 {
        self.0
    }
}

impl fmt::Debug for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.ids().map(FeatureId::name)).finish()
    }
}

impl Serialize for FeatureMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.ids())
    }
}

impl<'de> Deserialize<'de> for FeatureMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ids = Vec::<FeatureId>::deserialize(d)?;
        Ok(FeatureMask::from_ids(ids))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Energy,
    Duration,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Energy, Target::Duration];

    pub fn value(self, s: &ChargingSession) -> f64 {
        match self {
            Target::Energy => s.energy_kwh,
            Target::Duration => s.duration_h(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Energy => "energy",
            Target::Duration => "duration",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Cars never seen before: generic features only.
    Model1,
    /// Previously seen cars: adds per-car and per-station history.
    Model2,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Model1, Variant::Model2];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Model1 => f.write_str("Model1"),
            Variant::Model2 => f.write_str("Model2"),
        }
    }
}

/// Meteorological season: 0 winter (Dec-Feb), 1 spring, 2 summer, 3 autumn.
pub fn season_of_month(month: u32) -> u32 {
    (month % 12) / 3
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub count: usize,
    pub mean: Option<f64>,
    pub max: Option<f64>,
    pub min: Option<f64>,
}

/// Time-ordered values of one key with prefix aggregates, queried by cutoff.
#[derive(Debug, Clone, Default)]
struct Series {
    arrivals: Vec<NaiveDateTime>,
    prefix_sum: Vec<f64>,
    prefix_max: Vec<f64>,
    prefix_min: Vec<f64>,
}

impl Series {
    fn push(&mut self, t: NaiveDateTime, v: f64) {
        let (s, mx, mn) = match self.arrivals.len() {
            0 => (v, v, v),
            n => (
                self.prefix_sum[n - 1] + v,
                self.prefix_max[n - 1].max(v),
                self.prefix_min[n - 1].min(v),
            ),
        };
        self.arrivals.push(t);
        self.prefix_sum.push(s);
        self.prefix_max.push(mx);
        self.prefix_min.push(mn);
    }

    fn before(&self, cutoff: &NaiveDateTime) -> Aggregate {
        let n = self.arrivals.partition_point(|t| t < cutoff);
        if n == 0 {
            return Aggregate::default();
        }
        Aggregate {
            count: n,
            mean: Some(self.prefix_sum[n - 1] / n as f64),
            max: Some(self.prefix_max[n - 1]),
            min: Some(self.prefix_min[n - 1]),
        }
    }
}

/// Historical target aggregates by car, station and local arrival hour.
///
/// Every query takes a cutoff and only reflects sessions that arrived strictly
/// before it. The index is immutable once built.
#[derive(Debug, Clone)]
pub struct HistoryIndex {
    target: Target,
    utc_offset_hours: i32,
    by_car: BTreeMap<String, Series>,
    by_station: BTreeMap<String, Series>,
    by_hour: Vec<Series>,
    global: Series,
}

impl HistoryIndex {
    pub fn build(sessions: &[ChargingSession], target: Target, utc_offset_hours: i32) -> Self {
        let mut order: Vec<&ChargingSession> = sessions.iter().collect();
        order.sort_by_key(|s| s.arrival);
        let mut idx = HistoryIndex {
            target,
            utc_offset_hours,
            by_car: BTreeMap::new(),
            by_station: BTreeMap::new(),
            by_hour: vec![Series::default(); 24],
            global: Series::default(),
        };
        for s in order {
            let v = target.value(s);
            let t = s.arrival;
            idx.by_car.entry(s.car_id.clone()).or_default().push(t, v);
            idx.by_station
                .entry(s.station_id.clone())
                .or_default()
                .push(t, v);
            let hour = to_local(&t, utc_offset_hours).hour() as usize;
            idx.by_hour[hour].push(t, v);
            idx.global.push(t, v);
        }
        idx
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn utc_offset_hours(&self) -> i32 {
        self.utc_offset_hours
    }

    pub fn car(&self, car_id: &str, cutoff: &NaiveDateTime) -> Aggregate {
        self.by_car
            .get(car_id)
            .map_or_else(Aggregate::default, |s| s.before(cutoff))
    }

    pub fn station(&self, station_id: &str, cutoff: &NaiveDateTime) -> Aggregate {
        self.by_station
            .get(station_id)
            .map_or_else(Aggregate::default, |s| s.before(cutoff))
    }

    /// Aggregate over sessions whose local arrival hour is `hour`.
    pub fn hour(&self, hour: u32, cutoff: &NaiveDateTime) -> Aggregate {
        self.by_hour[hour as usize % 24].before(cutoff)
    }

    pub fn global(&self, cutoff: &NaiveDateTime) -> Aggregate {
        self.global.before(cutoff)
    }
}

/// External inputs needed to featurize a session.
#[derive(Debug, Clone, Copy)]
pub struct FeatureContext<'a> {
    pub weather: &'a WeatherMap,
    pub calendar: &'a CalendarInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Values in [`FeatureId`] order; inactive slots are zero.
    pub values: [f64; N_FEATURES],
    pub mask: FeatureMask,
    pub target: f64,
    pub car_id: String,
    pub location: Location,
    #[serde(with = "timefmt::serde_ts")]
    pub arrival: NaiveDateTime,
}

impl FeatureVector {
    pub fn get(&self, f: FeatureId) -> f64 {
        self.values[f.index()]
    }

    /// Values of the active slots of `mask`, in feature order.
    pub fn select(&self, mask: FeatureMask) -> Vec<f64> {
        mask.ids().map(|f| self.values[f.index()]).collect()
    }
}

/// Encodes one session with history strictly before its arrival.
pub fn featurize(
    session: &ChargingSession,
    index: &HistoryIndex,
    ctx: FeatureContext<'_>,
    variant: Variant,
) -> Result<FeatureVector> {
    use FeatureId as F;

    let cutoff = session.arrival;
    let local = to_local(&session.arrival, index.utc_offset_hours());
    let date = local.date();
    let hour = local.hour();
    let weekday = date.weekday().num_days_from_monday();
    let weather = ctx
        .weather
        .get(&floor_hour(&session.arrival))
        .ok_or_else(|| Error::MissingWeather(format_timestamp(&floor_hour(&session.arrival))))?;

    let global_mean = index.global(&cutoff).mean.unwrap_or(0.0);
    let mut values = [0.0; N_FEATURES];
    let mut set = |f: F, v: f64| values[f.index()] = v;
    set(F::Hour, hour as f64);
    set(F::Month, date.month() as f64);
    set(F::Season, season_of_month(date.month()) as f64);
    set(F::Weekday, weekday as f64);
    set(F::NationalHoliday, ctx.calendar.is_national_holiday(date) as u8 as f64);
    set(F::SchoolHoliday, ctx.calendar.is_school_holiday(date) as u8 as f64);
    set(F::Weekend, (weekday >= 5) as u8 as f64);
    set(F::HourMean, index.hour(hour, &cutoff).mean.unwrap_or(global_mean));
    set(F::Temperature, weather.temp_c);
    set(F::WindSpeed, weather.wind_mps);
    set(F::Precipitation, weather.precip_mm);

    if variant == Variant::Model2 {
        let car = index.car(&session.car_id, &cutoff);
        let (Some(mean), Some(max), Some(min)) = (car.mean, car.max, car.min) else {
            return Err(Error::UnseenCar(session.car_id.clone()));
        };
        set(F::CarMean, mean);
        set(F::CarMax, max);
        set(F::CarMin, min);
        set(
            F::StationMean,
            index
                .station(&session.station_id, &cutoff)
                .mean
                .unwrap_or(global_mean),
        );
    }

    Ok(FeatureVector {
        values,
        mask: FeatureMask::for_variant(variant),
        target: index.target().value(session),
        car_id: session.car_id.clone(),
        location: session.location,
        arrival: session.arrival,
    })
}

/// Debug export; one column per feature in [`FeatureId`] order, then the target.
pub fn write_feature_csv(path: impl AsRef<Path>, rows: &[FeatureVector]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header: Vec<&str> = vec!["car_id", "arrival"];
    header.extend(FeatureId::ALL.iter().map(|f| f.name()));
    header.push("target");
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.car_id.clone(), format_timestamp(&r.arrival)];
        for f in FeatureId::ALL {
            rec.push(if r.mask.contains(f) {
                r.values[f.index()].to_string()
            } else {
                String::new()
            });
        }
        rec.push(r.target.to_string());
        w.write_record(&rec)?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}
