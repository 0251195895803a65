use chrono::{NaiveDate, Timelike};
use proptest::prelude::*;
use sessioncast::features::*;
use sessioncast::sessions::*;
use sessioncast::synthgen::*;
use sessioncast::timefmt::to_local;

struct Fixture {
    sessions: Vec<ChargingSession>,
    weather: WeatherMap,
    calendar: CalendarInfo,
}

fn fixture(seed: u64) -> Fixture {
    let mut c = SynthConfig::default();
    c.seed = seed;
    c.start_date = NaiveDate::from_ymd_opt(2022, 10, 1).unwrap();
    c.end_date = NaiveDate::from_ymd_opt(2022, 12, 31).unwrap();
    c.new_car_window_start = 30;
    c.workplace.n_cars = 8;
    c.residential.n_cars = 10;
    Fixture {
        sessions: clean_sessions(&gen_sessions(&c).unwrap()).kept,
        weather: gen_weather(&c).unwrap().into_iter().map(|r| (r.hour_start, r)).collect(),
        calendar: gen_calendar(&c).unwrap(),
    }
}

fn ctx(f: &Fixture) -> FeatureContext<'_> {
    FeatureContext {
        weather: &f.weather,
        calendar: &f.calendar,
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Historical features recomputed by scanning every earlier session.
fn brute_force(all: &[ChargingSession], s: &ChargingSession, target: Target, offset: i32) -> [Option<f64>; 5] {
    let before: Vec<&ChargingSession> = all.iter().filter(|o| o.arrival < s.arrival).collect();
    let vals = |keep: &dyn Fn(&ChargingSession) -> bool| -> Vec<f64> {
        before.iter().filter(|o| keep(o)).map(|o| target.value(o)).collect()
    };
    let car = vals(&|o| o.car_id == s.car_id);
    let station = vals(&|o| o.station_id == s.station_id);
    let hour = to_local(&s.arrival, offset).hour();
    let same_hour = vals(&|o| to_local(&o.arrival, offset).hour() == hour);
    let global = mean(&vals(&|_| true));
    [
        mean(&car),
        car.iter().cloned().reduce(f64::max),
        car.iter().cloned().reduce(f64::min),
        mean(&station).or(global),
        mean(&same_hour).or(global),
    ]
}

#[test]
fn history_features_match_a_brute_force_scan() {
    let f = fixture(3);
    for target in Target::ALL {
        let index = HistoryIndex::build(&f.sessions, target, 1);
        for s in f.sessions.iter().step_by(7) {
            let [car_mean, car_max, car_min, station, hour] = brute_force(&f.sessions, s, target, 1);
            let m1 = featurize(s, &index, ctx(&f), Variant::Model1).unwrap();
            assert!((m1.get(FeatureId::HourMean) - hour.unwrap_or(0.0)).abs() < 1e-9);
            match car_mean {
                None => assert!(matches!(
                    featurize(s, &index, ctx(&f), Variant::Model2),
                    Err(sessioncast::Error::UnseenCar(_))
                )),
                Some(cm) => {
                    let m2 = featurize(s, &index, ctx(&f), Variant::Model2).unwrap();
                    assert!((m2.get(FeatureId::CarMean) - cm).abs() < 1e-9);
                    assert_eq!(m2.get(FeatureId::CarMax), car_max.unwrap());
                    assert_eq!(m2.get(FeatureId::CarMin), car_min.unwrap());
                    assert!((m2.get(FeatureId::StationMean) - station.unwrap()).abs() < 1e-9);
                    // Model2 keeps every Model1 slot unchanged
                    for id in FeatureId::ALL.iter().filter(|id| !FeatureId::MODEL2_ONLY.contains(id)) {
                        assert_eq!(m1.get(*id), m2.get(*id));
                    }
                }
            }
            for id in FeatureId::MODEL2_ONLY {
                assert_eq!(m1.get(id), 0.0);
            }
        }
    }
}

#[test]
fn calendar_and_weather_slots() {
    let f = fixture(4);
    let index = HistoryIndex::build(&f.sessions, Target::Energy, 1);
    for s in f.sessions.iter().take(40) {
        let v = featurize(s, &index, ctx(&f), Variant::Model1).unwrap();
        let local = to_local(&s.arrival, 1);
        assert_eq!(v.get(FeatureId::Hour), local.hour() as f64);
        let w = &f.weather[&sessioncast::timefmt::floor_hour(&s.arrival)];
        assert_eq!(v.get(FeatureId::Temperature), w.temp_c);
        assert_eq!(v.get(FeatureId::Precipitation), w.precip_mm);
        assert_eq!(
            v.get(FeatureId::SchoolHoliday),
            f.calendar.is_school_holiday(local.date()) as u8 as f64
        );
        assert_eq!(v.target, s.energy_kwh);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Deleting or perturbing sessions that arrive at or after `t` leaves
    /// every feature vector of a session arriving at or before `t` unchanged.
    #[test]
    fn future_sessions_never_leak(seed in 0u64..50, pick in 0.05f64..0.95, scale in 0.1f64..5.0, drop_every in 2usize..6) {
        let f = fixture(seed);
        let cut = ((f.sessions.len() as f64) * pick) as usize;
        let t = f.sessions[cut].arrival;
        let mut changed: Vec<ChargingSession> = Vec::new();
        for (i, s) in f.sessions.iter().enumerate() {
            if s.arrival < t {
                changed.push(s.clone());
            } else if i % drop_every != 0 {
                let mut p = s.clone();
                p.energy_kwh *= scale;
                p.departure += chrono::Duration::minutes((i % 300) as i64);
                p.station_id = format!("{}-x", p.station_id);
                changed.push(p);
            }
        }
        let probes: Vec<&ChargingSession> = f.sessions.iter().filter(|s| s.arrival <= t).collect();
        for target in Target::ALL {
            let before = HistoryIndex::build(&f.sessions, target, 1);
            let after = HistoryIndex::build(&changed, target, 1);
            for s in probes.iter().rev().take(30) {
                for variant in Variant::ALL {
                    let a = featurize(s, &before, ctx(&f), variant);
                    let b = featurize(s, &after, ctx(&f), variant);
                    match (a, b) {
                        (Ok(a), Ok(b)) => prop_assert_eq!(a.values, b.values),
                        (Err(_), Err(_)) => {}
                        _ => prop_assert!(false, "availability changed for {}", s.session_id),
                    }
                }
            }
        }
    }
}
