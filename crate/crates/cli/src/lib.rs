//! Command implementations behind the `sessioncast` binary.

pub mod config;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sessioncast::pipeline::{self, HorizonResult, MetricsReport, WeeklyIterationResult};
use sessioncast::sessions::{self, CalendarInfo, ChargingSession, WeatherMap};
use sessioncast::synthgen;

pub use config::{resolve, Overrides, RunConfig};

/// Exit code 2 for usage errors, 1 for everything else.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<sessioncast::Error> for CliError {
    fn from(e: sessioncast::Error) -> Self {
        match e {
            sessioncast::Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.into()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// A report file: the resolved config followed by the payload.
#[derive(Serialize)]
pub struct Echo<'a, T> {
    pub config: &'a RunConfig,
    #[serde(flatten)]
    pub body: T,
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub const CONFIG_FILE: &str = "config.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const LOOKBACK_CSV: &str = "lookback.csv";
pub const LOOKBACK_JSON: &str = "lookback.json";

pub fn week_file(iteration: usize) -> String {
    format!("week_{iteration:03}.json")
}

/// Writes sessions, weather and calendar files into `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let synth = &cfg.synth;
    let sessions = synthgen::gen_sessions(synth)?;
    let weather = synthgen::gen_weather(synth)?;
    let calendar = synthgen::gen_calendar(synth)?;
    create_dir(out)?;
    let paths: Vec<PathBuf> = [config::SESSIONS_FILE, config::WEATHER_FILE, config::CALENDAR_FILE]
        .iter()
        .map(|f| out.join(f))
        .collect();
    sessions::write_sessions(&paths[0], &sessions)?;
    sessions::write_weather(&paths[1], &weather)?;
    sessions::write_calendar(&paths[2], &calendar)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    Ok(paths)
}

pub struct Inputs {
    pub sessions: Vec<ChargingSession>,
    pub weather: WeatherMap,
    pub calendar: CalendarInfo,
    pub rejected: usize,
}

/// Loads and cleans the configured input files.
pub fn load_inputs(cfg: &RunConfig) -> CliResult<Inputs> {
    let raw = sessions::parse_sessions(cfg.input("sessions")?)?;
    let weather = sessions::load_weather(cfg.input("weather")?)?;
    let calendar = sessions::load_calendar(cfg.input("calendar")?)?;
    let mut cleaned = sessions::clean_sessions(&raw);
    cleaned
        .kept
        .sort_by(|a, b| a.arrival.cmp(&b.arrival).then_with(|| a.session_id.cmp(&b.session_id)));
    Ok(Inputs {
        sessions: cleaned.kept,
        weather,
        calendar,
        rejected: cleaned.rejected.len(),
    })
}

#[derive(Serialize)]
struct WeekBody<'a> {
    week: &'a WeeklyIterationResult,
}

#[derive(Serialize)]
struct AggregateBody<'a> {
    sessions_kept: usize,
    sessions_rejected: usize,
    weeks: Vec<&'a pipeline::SplitPlan>,
    aggregate: &'a MetricsReport,
}

/// Weekly loop over the configured horizon. Writes one JSON per week, the
/// pooled aggregate, metric and forecast tables, then the report files.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> CliResult<HorizonResult> {
    let inputs = load_inputs(cfg)?;
    let result = pipeline::run_horizon(&inputs.sessions, &inputs.weather, &inputs.calendar, &cfg.pipeline)?;
    create_dir(out)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    for w in &result.weeks {
        write_json(&out.join(week_file(w.plan.iteration)), &Echo { config: cfg, body: WeekBody { week: w } })?;
    }
    let body = AggregateBody {
        sessions_kept: inputs.sessions.len(),
        sessions_rejected: inputs.rejected,
        weeks: result.weeks.iter().map(|w| &w.plan).collect(),
        aggregate: &result.aggregate,
    };
    write_json(&out.join(AGGREGATE_FILE), &Echo { config: cfg, body })?;
    report::write_metrics_csv(&out.join(report::METRICS_CSV), &result.aggregate)?;
    report::write_forecasts_csv(&out.join(report::FORECASTS_CSV), &result.weeks)?;
    report::write_reports(out, cfg, &result.weeks, &result.aggregate)?;
    Ok(result)
}

#[derive(Serialize)]
struct LookbackBody<'a> {
    windows: &'a std::collections::BTreeMap<i64, MetricsReport>,
}

/// Reruns the weekly loop once per lookback window and tabulates pooled
/// metrics per (window, location, target).
pub fn cmd_lookback(cfg: &RunConfig, out: &Path) -> CliResult<std::collections::BTreeMap<i64, MetricsReport>> {
    let inputs = load_inputs(cfg)?;
    let mut windows = cfg.lookback_windows.clone();
    windows.sort_unstable();
    windows.dedup();
    let study = pipeline::lookback_study(&inputs.sessions, &inputs.weather, &inputs.calendar, &windows, &cfg.pipeline)?;
    create_dir(out)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    write_json(&out.join(LOOKBACK_JSON), &Echo { config: cfg, body: LookbackBody { windows: &study } })?;
    report::write_lookback_csv(&out.join(LOOKBACK_CSV), &study)?;
    Ok(study)
}

/// Re-renders the summary and plot-data files of a finished run directory.
pub fn cmd_report(run_dir: &Path) -> CliResult<String> {
    if !run_dir.is_dir() {
        return Err(CliError::Runtime(anyhow::anyhow!("{} is not a run directory", run_dir.display())));
    }
    let (cfg, weeks, aggregate) = report::load_run(run_dir)?;
    report::write_reports(run_dir, &cfg, &weeks, &aggregate)?;
    Ok(report::summary_table(&aggregate))
}
