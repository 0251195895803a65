//! Seeded synthetic session logs, weather and calendars.
//!
//! Every car gets a persistent habit profile (arrival time, stay length,
//! energy need), so car-level history carries signal while generic calendar
//! features carry little. Workplace stays are unimodal around a working day;
//! residential stays mix daytime short stops with overnight charging.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Weekday};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::sessions::{CalendarInfo, ChargingSession, Location, WeatherRecord};

/// Truncated normal parameters; draws outside `[lo, hi]` are redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounded {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Bounded {
    pub const fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Self {
        Self { mean, sd, lo, hi }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.sd > 0.0) || !(self.lo < self.hi) {
            return Err(Error::Config(format!("{what}: spread must be positive and bounds ordered")));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        truncated(rng, self.mean, self.sd, self.lo, self.hi)
    }
}

fn truncated(rng: &mut ChaCha8Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("validated spread");
    for _ in 0..64 {
        let v = normal.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    mean.clamp(lo, hi)
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Per-car energy need: car means are drawn from `car_mean`; a car's
/// session-to-session spread is `within_factor * mean`, clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub car_mean: Bounded,
    pub within_factor: f64,
    pub within_min: f64,
    pub within_max: f64,
    /// Extra kWh per degree below 10 °C.
    pub cold_kwh_per_degree: f64,
    /// Relative increase of the drawn need per degree below 10 °C.
    pub cold_share_per_degree: f64,
}

impl EnergyProfile {
    fn validate(&self, what: &str) -> Result<()> {
        self.car_mean.validate(what)?;
        if !(self.within_factor > 0.0 && self.within_min > 0.0 && self.within_max >= self.within_min) {
            return Err(Error::Config(format!("{what}: within-car spread must be positive")));
        }
        if !(self.cold_kwh_per_degree >= 0.0 && self.cold_share_per_degree >= 0.0) {
            return Err(Error::Config(format!("{what}: cold effects must be non-negative")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkplaceProfile {
    pub n_cars: usize,
    pub n_stations: usize,
    /// Range of per-car probabilities of charging on a fully weighted day.
    pub daily_rate: (f64, f64),
    /// Monday first.
    pub weekday_weights: [f64; 7],
    pub holiday_factor: f64,
    pub school_holiday_factor: f64,
    /// Range of per-car mean local arrival hours.
    pub arrival_mean: (f64, f64),
    pub arrival_sd: f64,
    /// Range of per-car mean stay lengths in hours.
    pub stay_mean: (f64, f64),
    pub stay_sd: f64,
    /// Hours of stay lost per hour of arriving later than usual.
    pub late_arrival_slope: f64,
    /// Local hour by which regular stays end.
    pub latest_departure: f64,
    /// Mixture weights of (regular stay, short visit); must sum to 1.
    pub duration_weights: [f64; 2],
    pub short_stay: Bounded,
    /// Share of cars that sometimes leave the car parked over the weekend.
    pub weekend_parker_fraction: f64,
    /// Chance a weekend parker leaves the car on a Friday.
    pub weekend_park_prob: f64,
    pub energy: EnergyProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidentialProfile {
    pub n_cars: usize,
    pub daily_rate: (f64, f64),
    pub weekday_weights: [f64; 7],
    /// Range of per-car preference for overnight sessions over short stops.
    pub overnight_preference: (f64, f64),
    /// Share of sessions that are multi-day stays regardless of preference.
    pub long_weight: f64,
    pub short_arrival: Bounded,
    pub overnight_arrival: Bounded,
    /// Spread of a car's personal shift applied to both arrival modes.
    pub car_arrival_shift_sd: f64,
    pub short_stay: Bounded,
    /// Range of per-car mean local departure hours the morning after.
    pub departure_mean: (f64, f64),
    pub departure_sd: f64,
    pub long_stay: Bounded,
    /// Chance of charging at a station other than the car's home station.
    pub away_station_prob: f64,
    pub short_energy_factor: f64,
    pub overnight_energy_factor: f64,
    pub long_energy_factor: f64,
    pub energy: EnergyProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub start_date: NaiveDate,
    /// Inclusive.
    pub end_date: NaiveDate,
    pub utc_offset_hours: i32,
    pub max_power_kw: f64,
    /// Share of cars whose first session falls in the new-car window.
    pub new_car_fraction: f64,
    /// Days after `start_date` at which the new-car window opens.
    pub new_car_window_start: i64,
    pub new_car_window_days: i64,
    /// Share of sessions corrupted so that cleaning rejects them.
    pub dirty_fraction: f64,
    pub workplace: WorkplaceProfile,
    pub residential: ResidentialProfile,
    /// (month, day) of each yearly national holiday.
    pub national_holidays: Vec<(u32, u32)>,
    /// Inclusive (month, day) ranges of yearly school holidays; a range may
    /// wrap over New Year.
    pub school_holidays: Vec<((u32, u32), (u32, u32))>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            start_date: NaiveDate::from_ymd_opt(2022, 1, 1).expect("valid date"),
            end_date: NaiveDate::from_ymd_opt(2023, 12, 31).expect("valid date"),
            utc_offset_hours: 1,
            max_power_kw: 22.0,
            new_car_fraction: 0.2,
            new_car_window_start: 365,
            new_car_window_days: 28,
            dirty_fraction: 0.004,
            workplace: WorkplaceProfile {
                n_cars: 60,
                n_stations: 10,
                daily_rate: (0.04, 0.13),
                weekday_weights: [1.0, 1.0, 1.0, 1.0, 0.6, 0.05, 0.03],
                holiday_factor: 0.1,
                school_holiday_factor: 0.7,
                arrival_mean: (7.0, 9.0),
                arrival_sd: 0.5,
                stay_mean: (5.0, 12.5),
                stay_sd: 0.6,
                late_arrival_slope: 0.5,
                latest_departure: 19.0,
                duration_weights: [0.98, 0.02],
                short_stay: Bounded::new(2.5, 1.0, 0.5, 5.0),
                weekend_parker_fraction: 0.0,
                weekend_park_prob: 0.3,
                energy: EnergyProfile {
                    car_mean: Bounded::new(21.0, 12.5, 4.0, 60.0),
                    within_factor: 0.4,
                    within_min: 2.0,
                    within_max: 10.0,
                    cold_kwh_per_degree: 0.0,
                    cold_share_per_degree: 0.02,
                },
            },
            residential: ResidentialProfile {
                n_cars: 150,
                daily_rate: (0.08, 0.28),
                weekday_weights: [1.0; 7],
                overnight_preference: (0.3, 1.0),
                long_weight: 0.03,
                short_arrival: Bounded::new(15.0, 3.5, 6.0, 22.0),
                overnight_arrival: Bounded::new(17.5, 2.5, 13.0, 23.9),
                car_arrival_shift_sd: 1.0,
                short_stay: Bounded::new(3.5, 1.2, 0.3, 8.0),
                departure_mean: (6.0, 10.5),
                departure_sd: 0.7,
                long_stay: Bounded::new(40.0, 15.0, 20.0, 96.0),
                away_station_prob: 0.1,
                short_energy_factor: 0.75,
                overnight_energy_factor: 1.1,
                long_energy_factor: 1.2,
                energy: EnergyProfile {
                    car_mean: Bounded::new(24.0, 12.0, 4.0, 60.0),
                    within_factor: 0.4,
                    within_min: 2.0,
                    within_max: 9.0,
                    cold_kwh_per_degree: 0.15,
                    cold_share_per_degree: 0.0,
                },
            },
            national_holidays: vec![(1, 1), (4, 27), (5, 5), (12, 25), (12, 26)],
            school_holidays: vec![
                ((12, 24), (1, 7)),
                ((2, 19), (2, 27)),
                ((4, 27), (5, 5)),
                ((7, 15), (8, 27)),
                ((10, 15), (10, 23)),
            ],
        }
    }
}

fn check_range(r: (f64, f64), what: &str) -> Result<()> {
    if !(r.0 <= r.1) || !r.0.is_finite() || !r.1.is_finite() {
        return Err(Error::Config(format!("{what}: range must be ordered")));
    }
    Ok(())
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{what} must be in [0, 1]")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.end_date <= self.start_date {
            return Err(Error::Config("end_date must be after start_date".into()));
        }
        if self.workplace.n_cars + self.residential.n_cars == 0 {
            return Err(Error::Config("at least one car is needed".into()));
        }
        if !(self.max_power_kw > 0.0) {
            return Err(Error::Config("max_power_kw must be positive".into()));
        }
        check_prob(self.new_car_fraction, "new_car_fraction")?;
        check_prob(self.dirty_fraction, "dirty_fraction")?;
        if self.new_car_window_days < 1 || self.new_car_window_start < 0 {
            return Err(Error::Config("new-car window must be non-empty".into()));
        }
        let w = &self.workplace;
        if w.n_cars > 0 && w.n_stations == 0 {
            return Err(Error::Config("workplace needs at least one station".into()));
        }
        check_range(w.daily_rate, "workplace daily_rate")?;
        check_range(w.arrival_mean, "workplace arrival_mean")?;
        check_range(w.stay_mean, "workplace stay_mean")?;
        if !(12.0..=24.0).contains(&w.latest_departure) {
            return Err(Error::Config("workplace latest_departure must be a local hour in 12..=24".into()));
        }
        if !(w.arrival_sd > 0.0 && w.stay_sd > 0.0) {
            return Err(Error::Config("workplace spreads must be positive".into()));
        }
        if (w.duration_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 || w.duration_weights.iter().any(|v| *v < 0.0) {
            return Err(Error::Config("workplace duration_weights must sum to 1".into()));
        }
        w.short_stay.validate("workplace short_stay")?;
        w.energy.validate("workplace energy")?;
        check_prob(w.weekend_parker_fraction, "weekend_parker_fraction")?;
        check_prob(w.weekend_park_prob, "weekend_park_prob")?;
        let r = &self.residential;
        check_range(r.daily_rate, "residential daily_rate")?;
        check_range(r.overnight_preference, "overnight_preference")?;
        check_range(r.departure_mean, "departure_mean")?;
        check_prob(r.overnight_preference.0, "overnight_preference")?;
        check_prob(r.overnight_preference.1, "overnight_preference")?;
        check_prob(r.long_weight, "long_weight")?;
        check_prob(r.away_station_prob, "away_station_prob")?;
        if !(r.car_arrival_shift_sd > 0.0 && r.departure_sd > 0.0) {
            return Err(Error::Config("residential spreads must be positive".into()));
        }
        r.short_arrival.validate("short_arrival")?;
        r.overnight_arrival.validate("overnight_arrival")?;
        r.short_stay.validate("residential short_stay")?;
        r.long_stay.validate("residential long_stay")?;
        r.energy.validate("residential energy")?;
        for (m, d) in &self.national_holidays {
            if NaiveDate::from_ymd_opt(2024, *m, *d).is_none() {
                return Err(Error::Config(format!("bad holiday {m}-{d}")));
            }
        }
        Ok(())
    }

    fn n_days(&self) -> i64 {
        (self.end_date - self.start_date).num_days() + 1
    }
}

/// Persistent habits of one synthetic car.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarProfile {
    pub car_id: String,
    pub location: Location,
    pub home_station: String,
    /// Day index (from the start date) of the first possible session.
    pub first_day: i64,
    pub daily_rate: f64,
    pub arrival_mean: f64,
    pub arrival_sd: f64,
    /// Workplace: mean stay length. Residential: mean departure hour.
    pub stay_mean: f64,
    /// Residential weight of overnight over short sessions.
    pub overnight_weight: f64,
    /// Workplace chance of leaving the car over the weekend on a Friday.
    pub weekend_park_prob: f64,
    pub energy_mean: f64,
    pub energy_sd: f64,
}

fn first_day(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> i64 {
    if rng.random::<f64>() < cfg.new_car_fraction {
        cfg.new_car_window_start + rng.random_range(0..cfg.new_car_window_days)
    } else {
        0
    }
}

/// Per-car values whose sample mean and spread match `b` exactly before
/// clamping, so small fleets still hit the target population moments.
fn moment_matched(rng: &mut ChaCha8Rng, n: usize, b: &Bounded) -> Vec<f64> {
    let normal = Normal::<f64>::new(0.0, 1.0).expect("unit spread");
    let z: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let m = z.iter().sum::<f64>() / n.max(1) as f64;
    let sd = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    let scale = if n >= 2 && sd > 0.0 { 1.0 / sd } else { 1.0 };
    z.iter()
        .map(|v| (b.mean + b.sd * (v - m) * scale).clamp(b.lo, b.hi))
        .collect()
}

fn energy_habits(mean: f64, e: &EnergyProfile) -> (f64, f64) {
    let sd = (e.within_factor * mean).clamp(e.within_min, e.within_max);
    (mean, sd)
}

pub fn gen_car_profiles(cfg: &SynthConfig) -> Result<Vec<CarProfile>> {
    cfg.validate()?;
    let mut rng = seeding::rng(seeding::derive(cfg.seed, &[1]));
    let mut cars = Vec::new();
    let w = &cfg.workplace;
    let r = &cfg.residential;
    let mut energy_rng = seeding::rng(seeding::derive(cfg.seed, &[5]));
    let work_energy = moment_matched(&mut energy_rng, w.n_cars, &w.energy.car_mean);
    let home_energy = moment_matched(&mut energy_rng, r.n_cars, &r.energy.car_mean);
    for i in 0..w.n_cars {
        let first_day = first_day(&mut rng, cfg);
        let (energy_mean, energy_sd) = energy_habits(work_energy[i], &w.energy);
        let parker = rng.random::<f64>() < w.weekend_parker_fraction;
        cars.push(CarProfile {
            car_id: format!("car-w{:03}", i + 1),
            location: Location::Workplace,
            home_station: format!("st-w{:02}", rng.random_range(0..w.n_stations) + 1),
            first_day,
            daily_rate: uniform(&mut rng, w.daily_rate),
            arrival_mean: uniform(&mut rng, w.arrival_mean),
            arrival_sd: w.arrival_sd,
            stay_mean: uniform(&mut rng, w.stay_mean),
            overnight_weight: 0.0,
            weekend_park_prob: if parker { w.weekend_park_prob } else { 0.0 },
            energy_mean,
            energy_sd,
        });
    }
    let shift = Normal::new(0.0, r.car_arrival_shift_sd).expect("validated spread");
    for i in 0..r.n_cars {
        let first_day = first_day(&mut rng, cfg);
        let (energy_mean, energy_sd) = energy_habits(home_energy[i], &r.energy);
        cars.push(CarProfile {
            car_id: format!("car-r{:03}", i + 1),
            location: Location::Residential,
            home_station: format!("st-r{:03}", i + 1),
            first_day,
            daily_rate: uniform(&mut rng, r.daily_rate),
            arrival_mean: shift.sample(&mut rng),
            arrival_sd: r.car_arrival_shift_sd,
            stay_mean: uniform(&mut rng, r.departure_mean),
            overnight_weight: uniform(&mut rng, r.overnight_preference),
            weekend_park_prob: 0.0,
            energy_mean,
            energy_sd,
        });
    }
    Ok(cars)
}

fn in_block(date: NaiveDate, from: (u32, u32), to: (u32, u32)) -> bool {
    let md = (date.month(), date.day());
    if from <= to {
        from <= md && md <= to
    } else {
        md >= from || md <= to
    }
}

/// Marks the configured yearly holidays over the date range (inclusive).
pub fn gen_calendar(cfg: &SynthConfig) -> Result<CalendarInfo> {
    if cfg.end_date < cfg.start_date {
        return Err(Error::Config("empty calendar range".into()));
    }
    let mut cal = CalendarInfo::default();
    let mut d = cfg.start_date;
    while d <= cfg.end_date {
        if cfg.national_holidays.contains(&(d.month(), d.day())) {
            cal.national_holidays.insert(d);
        }
        if cfg.school_holidays.iter().any(|&(a, b)| in_block(d, a, b)) {
            cal.school_holidays.insert(d);
        }
        d += Duration::days(1);
    }
    Ok(cal)
}

/// Hourly weather in UTC from the start date to one day past the end date:
/// seasonal and daily temperature cycles plus autocorrelated noise.
pub fn gen_weather(cfg: &SynthConfig) -> Result<Vec<WeatherRecord>> {
    if cfg.end_date < cfg.start_date {
        return Err(Error::Config("empty weather range".into()));
    }
    let mut rng = seeding::rng(seeding::derive(cfg.seed, &[2]));
    let start = cfg.start_date.and_hms_opt(0, 0, 0).expect("midnight");
    let hours = (cfg.n_days() + 1) * 24;
    let step = Normal::<f64>::new(0.0, 0.6).expect("constant spread");
    let gust = Normal::<f64>::new(0.0, 1.5).expect("constant spread");
    let rain = Exp::new(1.0 / 1.2).expect("constant rate");
    let mut temp_noise = 0.0;
    let mut wind_level: f64 = 4.0;
    let mut raining = false;
    let mut out = Vec::with_capacity(hours as usize);
    for h in 0..hours {
        let t = start + Duration::hours(h);
        let local = t + Duration::hours(cfg.utc_offset_hours as i64);
        let doy = local.ordinal() as f64;
        let hour = local.hour_f64();
        temp_noise = 0.97 * temp_noise + step.sample(&mut rng);
        let temp = 10.5 + 8.0 * (2.0 * std::f64::consts::PI * (doy - 110.0) / 365.25).sin()
            + 3.5 * (2.0 * std::f64::consts::PI * (hour - 9.0) / 24.0).sin()
            + temp_noise;
        wind_level = (0.95 * wind_level + 0.05 * 4.5 + 0.3 * gust.sample(&mut rng)).max(0.0);
        let wind = (wind_level + 0.5 * gust.sample(&mut rng)).max(0.0_f64);
        raining = if raining {
            rng.random::<f64>() < 0.7
        } else {
            rng.random::<f64>() < 0.04
        };
        let precip = if raining { rain.sample(&mut rng) } else { 0.0 };
        out.push(WeatherRecord {
            hour_start: t,
            temp_c: round_to(temp, 1),
            wind_mps: round_to(wind, 1),
            precip_mm: round_to(precip, 1),
        });
    }
    Ok(out)
}

trait HourF64 {
    fn hour_f64(&self) -> f64;
}

impl HourF64 for NaiveDateTime {
    fn hour_f64(&self) -> f64 {
        use chrono::Timelike;
        self.hour() as f64 + self.minute() as f64 / 60.0
    }
}

fn round_to(v: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (v * f).round() / f
}

/// Local wall-clock hour (possibly past 24) on `date` converted to UTC,
/// rounded to whole seconds.
fn local_to_utc(date: NaiveDate, local_hour: f64, offset: i32) -> NaiveDateTime {
    let secs = (local_hour * 3600.0).round() as i64 - offset as i64 * 3600;
    date.and_hms_opt(0, 0, 0).expect("midnight") + Duration::seconds(secs)
}

fn mean_temp_on(weather: &[WeatherRecord], start: NaiveDate, date: NaiveDate) -> f64 {
    let day = (date - start).num_days().max(0) as usize;
    let slice = weather.get(day * 24..(day + 1) * 24).unwrap_or(&[]);
    if slice.is_empty() {
        return 10.0;
    }
    slice.iter().map(|r| r.temp_c).sum::<f64>() / slice.len() as f64
}

/// Generates the session log: one draw per car per day, sorted by arrival.
pub fn gen_sessions(cfg: &SynthConfig) -> Result<Vec<ChargingSession>> {
    let cars = gen_car_profiles(cfg)?;
    let weather = gen_weather(cfg)?;
    let calendar = gen_calendar(cfg)?;
    let mut rng = seeding::rng(seeding::derive(cfg.seed, &[3]));
    let start_midnight = cfg.start_date.and_hms_opt(0, 0, 0).expect("midnight");
    let end = cfg.end_date.and_hms_opt(23, 59, 59).expect("valid time") - Duration::hours(cfg.utc_offset_hours as i64);
    let mut busy_until = vec![start_midnight - Duration::days(1); cars.len()];
    let mut sessions = Vec::new();
    for day in 0..cfg.n_days() {
        let date = cfg.start_date + Duration::days(day);
        let dow = date.weekday().num_days_from_monday() as usize;
        let cold = (10.0 - mean_temp_on(&weather, cfg.start_date, date)).max(0.0);
        for (ci, car) in cars.iter().enumerate() {
            // one uniform per car per day keeps streams aligned across configs
            let u: f64 = rng.random();
            if day < car.first_day {
                continue;
            }
            let draw = match car.location {
                Location::Workplace => {
                    let w = &cfg.workplace;
                    let mut p = car.daily_rate * w.weekday_weights[dow];
                    if calendar.is_national_holiday(date) {
                        p *= w.holiday_factor;
                    } else if calendar.is_school_holiday(date) {
                        p *= w.school_holiday_factor;
                    }
                    if u >= p {
                        continue;
                    }
                    workplace_session(&mut rng, cfg, car, date, cold)
                }
                Location::Residential => {
                    let r = &cfg.residential;
                    if u >= car.daily_rate * r.weekday_weights[dow] {
                        continue;
                    }
                    residential_session(&mut rng, cfg, car, date, cold)
                }
            };
            let (arrival, departure, energy, station) = draw;
            if arrival <= busy_until[ci] || departure > end {
                continue;
            }
            busy_until[ci] = departure;
            sessions.push(ChargingSession {
                session_id: String::new(),
                car_id: car.car_id.clone(),
                station_id: station,
                location: car.location,
                arrival,
                departure,
                energy_kwh: energy,
                max_power_kw: cfg.max_power_kw,
            });
        }
    }
    sessions.sort_by(|a, b| a.arrival.cmp(&b.arrival).then_with(|| a.car_id.cmp(&b.car_id)));
    let mut dirty_rng = seeding::rng(seeding::derive(cfg.seed, &[4]));
    for (i, s) in sessions.iter_mut().enumerate() {
        s.session_id = format!("s{:07}", i + 1);
        if dirty_rng.random::<f64>() < cfg.dirty_fraction {
            if dirty_rng.random::<bool>() {
                s.energy_kwh = round_to(dirty_rng.random_range(0.05..0.95), 3);
            } else {
                s.departure = s.arrival + Duration::seconds(dirty_rng.random_range(60..840));
            }
        }
    }
    Ok(sessions)
}

type Draw = (NaiveDateTime, NaiveDateTime, f64, String);

fn feasible_energy(raw: f64, duration_h: f64, max_power: f64) -> f64 {
    let cap = (0.98 * max_power * duration_h * 1000.0).floor() / 1000.0;
    round_to(raw, 3).clamp(1.0, cap.max(1.0))
}

fn finish(cfg: &SynthConfig, date: NaiveDate, arrival_h: f64, stay_h: f64, energy: f64, station: String) -> Draw {
    let arrival = local_to_utc(date, arrival_h, cfg.utc_offset_hours);
    let departure = local_to_utc(date, arrival_h + stay_h, cfg.utc_offset_hours);
    let dur = (departure - arrival).num_seconds() as f64 / 3600.0;
    (arrival, departure, feasible_energy(energy, dur, cfg.max_power_kw), station)
}

fn workplace_session(rng: &mut ChaCha8Rng, cfg: &SynthConfig, car: &CarProfile, date: NaiveDate, cold: f64) -> Draw {
    let w = &cfg.workplace;
    let arrival_h = truncated(rng, car.arrival_mean, car.arrival_sd, 5.0, 12.0);
    let friday = date.weekday() == Weekday::Fri;
    let stay = if friday && rng.random::<f64>() < car.weekend_park_prob {
        // parked until Monday morning
        72.0 - arrival_h + truncated(rng, car.arrival_mean, car.arrival_sd, 5.0, 12.0)
    } else if rng.random::<f64>() < w.duration_weights[1] {
        w.short_stay.sample(rng)
    } else {
        let late = arrival_h - car.arrival_mean;
        let stay = truncated(rng, car.stay_mean - w.late_arrival_slope * late, w.stay_sd, 1.0, 14.0);
        stay.min(w.latest_departure - arrival_h)
    };
    let station = if rng.random::<f64>() < 0.6 {
        car.home_station.clone()
    } else {
        format!("st-w{:02}", rng.random_range(0..w.n_stations) + 1)
    };
    let need = truncated(rng, car.energy_mean, car.energy_sd, 1.0, 80.0) * (1.0 + w.energy.cold_share_per_degree * cold)
        + w.energy.cold_kwh_per_degree * cold;
    finish(cfg, date, arrival_h, stay, need, station)
}

fn residential_session(rng: &mut ChaCha8Rng, cfg: &SynthConfig, car: &CarProfile, date: NaiveDate, cold: f64) -> Draw {
    let r = &cfg.residential;
    let shift = car.arrival_mean;
    let (arrival_h, stay, factor) = if rng.random::<f64>() < r.long_weight {
        let a = r.overnight_arrival.sample(rng) + shift;
        (a.clamp(0.0, 23.9), r.long_stay.sample(rng), r.long_energy_factor)
    } else if rng.random::<f64>() < car.overnight_weight {
        let a = (r.overnight_arrival.sample(rng) + shift).clamp(12.0, 23.9);
        let dep = truncated(rng, car.stay_mean, r.departure_sd, 4.0, 12.0) + 24.0;
        (a, dep - a, r.overnight_energy_factor)
    } else {
        let a = (r.short_arrival.sample(rng) + shift).clamp(5.0, 22.5);
        (a, r.short_stay.sample(rng), r.short_energy_factor)
    };
    let station = if rng.random::<f64>() < r.away_station_prob {
        format!("st-r{:03}", rng.random_range(0..r.n_cars.max(1)) + 1)
    } else {
        car.home_station.clone()
    };
    let need = factor * truncated(rng, car.energy_mean, car.energy_sd, 1.0, 90.0) * (1.0 + r.energy.cold_share_per_degree * cold)
        + r.energy.cold_kwh_per_degree * cold;
    finish(cfg, date, arrival_h, stay, need, station)
}
