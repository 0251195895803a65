//! Run configuration: built-in defaults, then the JSON file, then
//! `SESSIONCAST_SEED`, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sessioncast::pipeline::{PipelineConfig, DEFAULT_LOOKBACK_WINDOWS};
use sessioncast::synthgen::SynthConfig;
use sessioncast::tuning::GridProfile;

use crate::CliError;

pub const SEED_ENV: &str = "SESSIONCAST_SEED";

pub const SESSIONS_FILE: &str = "sessions.csv";
pub const WEATHER_FILE: &str = "weather.csv";
pub const CALENDAR_FILE: &str = "calendar.json";

/// Everything a command needs, echoed verbatim into its reports. The output
/// directory is left out so reruns into different directories stay
/// byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sessions: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub lookback_windows: Vec<i64>,
    /// Generator settings for `synth`; its seed is the master seed.
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::with_profile(GridProfile::Full)
    }
}

impl RunConfig {
    fn with_profile(profile: GridProfile) -> Self {
        let pipeline = match profile {
            GridProfile::Full => PipelineConfig::default(),
            GridProfile::Fast => PipelineConfig::fast(),
        };
        Self {
            sessions: None,
            weather: None,
            calendar: None,
            pipeline,
            lookback_windows: DEFAULT_LOOKBACK_WINDOWS.to_vec(),
            synth: SynthConfig::default(),
        }
    }

    pub fn input(&self, which: &str) -> Result<&Path, CliError> {
        let path = match which {
            "sessions" => &self.sessions,
            "weather" => &self.weather,
            _ => &self.calendar,
        };
        path.as_deref()
            .ok_or_else(|| CliError::Usage(format!("no {which} file given (use --{which}, --data or the config file)")))
    }
}

/// Flag values; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub sessions: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub profile: Option<GridProfile>,
    pub pipeline: Vec<(&'static str, Value)>,
    pub lookback_windows: Option<Vec<i64>>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Reads the optional config file and applies the environment seed and the
/// flags on top.
pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, flags: &Overrides) -> Result<RunConfig, CliError> {
    let file_value = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            if !v.is_object() {
                return Err(usage(format!("{}: expected a JSON object", p.display())));
            }
            v
        }
        None => Value::Object(Default::default()),
    };
    let profile = match (flags.profile, file_value.get("profile")) {
        (Some(p), _) => p,
        (None, Some(v)) => serde_json::from_value(v.clone()).map_err(usage)?,
        (None, None) => GridProfile::Full,
    };
    let mut value = serde_json::to_value(RunConfig::with_profile(profile)).map_err(usage)?;
    merge(&mut value, file_value);
    let mut over = serde_json::Map::new();
    if let Some(s) = env_seed {
        let seed: u64 = s
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?;
        over.insert("seed".into(), seed.into());
    }
    if let Some(seed) = flags.seed {
        over.insert("seed".into(), seed.into());
    }
    if let Some(p) = flags.profile {
        over.insert("profile".into(), serde_json::to_value(p).map_err(usage)?);
    }
    if let Some(dir) = &flags.data {
        for (key, name) in [("sessions", SESSIONS_FILE), ("weather", WEATHER_FILE), ("calendar", CALENDAR_FILE)] {
            over.insert(key.into(), serde_json::to_value(dir.join(name)).map_err(usage)?);
        }
    }
    for (key, path) in [("sessions", &flags.sessions), ("weather", &flags.weather), ("calendar", &flags.calendar)] {
        if let Some(p) = path {
            over.insert(key.into(), serde_json::to_value(p).map_err(usage)?);
        }
    }
    for (key, v) in &flags.pipeline {
        over.insert((*key).into(), v.clone());
    }
    if let Some(w) = &flags.lookback_windows {
        over.insert("lookback_windows".into(), serde_json::to_value(w).map_err(usage)?);
    }
    merge(&mut value, Value::Object(over));
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(usage)?;
    cfg.synth.seed = cfg.pipeline.seed;
    cfg.synth.utc_offset_hours = cfg.pipeline.utc_offset_hours;
    cfg.pipeline.validate().map_err(usage)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_env_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"seed": 5, "n_weeks": 3, "synth": {"new_car_fraction": 0.5}}"#).unwrap();
        let none = Overrides::default();
        let c = resolve(Some(&file), None, &none).unwrap();
        assert_eq!((c.pipeline.seed, c.pipeline.n_weeks, c.synth.seed), (5, 3, 5));
        assert_eq!(c.synth.new_car_fraction, 0.5);
        assert_eq!(c.synth.workplace, SynthConfig::default().workplace);
        assert_eq!(resolve(Some(&file), Some("9"), &none).unwrap().pipeline.seed, 9);
        let flags = Overrides {
            seed: Some(11),
            ..Default::default()
        };
        assert_eq!(resolve(Some(&file), Some("9"), &flags).unwrap().pipeline.seed, 11);
        assert!(matches!(resolve(None, Some("x"), &none), Err(CliError::Usage(_))));
    }

    #[test]
    fn fast_profile_brings_its_caps_unless_overridden() {
        let flags = Overrides {
            profile: Some(GridProfile::Fast),
            pipeline: vec![("svr_row_cap", 123.into())],
            ..Default::default()
        };
        let c = resolve(None, None, &flags).unwrap();
        assert_eq!(c.pipeline.tune_row_cap, PipelineConfig::fast().tune_row_cap);
        assert_eq!(c.pipeline.svr_row_cap, 123);
        let full = resolve(None, None, &Overrides::default()).unwrap();
        assert_eq!(full.pipeline, PipelineConfig::default());
        assert_eq!(full.lookback_windows.len(), 7);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let flags = Overrides {
            pipeline: vec![("cv_folds", 1.into())],
            ..Default::default()
        };
        assert!(matches!(resolve(None, None, &flags), Err(CliError::Usage(_))));
        let flags = Overrides {
            data: Some("d".into()),
            ..Default::default()
        };
        let c = resolve(None, None, &flags).unwrap();
        assert_eq!(c.input("weather").unwrap(), Path::new("d/weather.csv"));
        assert!(resolve(None, None, &Overrides::default()).unwrap().input("sessions").is_err());
    }
}
