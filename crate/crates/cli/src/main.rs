use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::Value;
use sessioncast::features::Target;
use sessioncast::pipeline::IncrementalMode;
use sessioncast::sessions::Location;
use sessioncast::tuning::GridProfile;
use sessioncast_cli::config::SEED_ENV;
use sessioncast_cli::{cmd_lookback, cmd_report, cmd_run, cmd_synth, report, resolve, CliError, Overrides};

/// Forecast energy demand and connection duration of EV charging sessions.
#[derive(Parser)]
#[command(name = "sessioncast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic sessions, weather and calendar files.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        /// First day of the log (YYYY-MM-DD).
        #[arg(long)]
        start: Option<String>,
        /// Last day of the log, inclusive.
        #[arg(long)]
        end: Option<String>,
    },
    /// Weekly retrain-and-forecast loop with pooled metrics.
    Run {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Repeat the weekly loop for several lookback windows.
    Lookback {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Comma-separated window lengths in days.
        #[arg(long, value_delimiter = ',')]
        windows: Option<Vec<i64>>,
    },
    /// Rebuild the summary and plot-data files of a run directory.
    Report {
        /// Directory written by `run`.
        run_dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides SESSIONCAST_SEED and the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    utc_offset: Option<i32>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Directory holding sessions.csv, weather.csv and calendar.json.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    sessions: Option<PathBuf>,
    #[arg(long)]
    weather: Option<PathBuf>,
    #[arg(long)]
    calendar: Option<PathBuf>,
    /// Number of weekly iterations.
    #[arg(long)]
    weeks: Option<usize>,
    #[arg(long)]
    initial_window_days: Option<i64>,
    /// Keep only this many most recent days of history for training.
    #[arg(long)]
    lookback_days: Option<i64>,
    /// growing | replay
    #[arg(long, value_parser = tag::<IncrementalMode>)]
    mode: Option<IncrementalMode>,
    #[arg(long)]
    replay_cap: Option<usize>,
    /// Cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// full | fast
    #[arg(long, value_parser = tag::<GridProfile>)]
    profile: Option<GridProfile>,
    #[arg(long)]
    svr_row_cap: Option<usize>,
    #[arg(long)]
    tune_row_cap: Option<usize>,
    /// Comma-separated: energy,duration
    #[arg(long, value_delimiter = ',', value_parser = tag::<Target>)]
    targets: Option<Vec<Target>>,
    /// Comma-separated: workplace,residential
    #[arg(long, value_delimiter = ',', value_parser = tag::<Location>)]
    locations: Option<Vec<Location>>,
}

/// Parses a value by its serialized name.
fn tag<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    let v = s.parse::<Value>().unwrap_or_else(|_| Value::String(s.to_string()));
    serde_json::from_value(v.clone())
        .or_else(|_| serde_json::from_value(Value::String(s.to_string())))
        .map_err(|e| format!("`{s}`: {e}"))
}

fn put(over: &mut Overrides, key: &'static str, v: Option<impl serde::Serialize>) {
    if let Some(v) = v {
        over.pipeline.push((key, serde_json::to_value(v).expect("plain value")));
    }
}

fn overrides(common: &Common, p: Option<&PipelineArgs>) -> Overrides {
    let mut o = Overrides {
        seed: common.seed,
        ..Default::default()
    };
    put(&mut o, "utc_offset_hours", common.utc_offset);
    if let Some(p) = p {
        o.data = p.data.clone();
        o.sessions = p.sessions.clone();
        o.weather = p.weather.clone();
        o.calendar = p.calendar.clone();
        o.profile = p.profile;
        put(&mut o, "n_weeks", p.weeks);
        put(&mut o, "initial_window_days", p.initial_window_days);
        put(&mut o, "lookback_days", p.lookback_days);
        put(&mut o, "mode", p.mode);
        put(&mut o, "replay_cap", p.replay_cap);
        put(&mut o, "cv_folds", p.folds);
        put(&mut o, "svr_row_cap", p.svr_row_cap);
        put(&mut o, "tune_row_cap", p.tune_row_cap);
        put(&mut o, "targets", p.targets.clone());
        put(&mut o, "locations", p.locations.clone());
    }
    o
}

fn set_jobs(jobs: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.into()))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let env_seed = std::env::var(SEED_ENV).ok();
    match cli.command {
        Command::Synth { out, common, start, end } => {
            set_jobs(common.jobs)?;
            let mut o = overrides(&common, None);
            let mut synth = serde_json::Map::new();
            if let Some(s) = start {
                synth.insert("start_date".into(), s.into());
            }
            if let Some(e) = end {
                synth.insert("end_date".into(), e.into());
            }
            if !synth.is_empty() {
                o.pipeline.push(("synth", Value::Object(synth)));
            }
            let cfg = resolve(common.config.as_deref(), env_seed.as_deref(), &o)?;
            for p in cmd_synth(&cfg, &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Run { out, common, pipeline } => {
            set_jobs(common.jobs)?;
            let cfg = resolve(common.config.as_deref(), env_seed.as_deref(), &overrides(&common, Some(&pipeline)))?;
            let result = cmd_run(&cfg, &out)?;
            print!("{}", report::summary_table(&result.aggregate));
            println!("wrote {} weekly reports to {}", result.weeks.len(), out.display());
        }
        Command::Lookback {
            out,
            common,
            pipeline,
            windows,
        } => {
            set_jobs(common.jobs)?;
            let mut o = overrides(&common, Some(&pipeline));
            o.lookback_windows = windows;
            let cfg = resolve(common.config.as_deref(), env_seed.as_deref(), &o)?;
            let study = cmd_lookback(&cfg, &out)?;
            for (w, r) in &study {
                for s in &r.strata {
                    if let Some(e) = s.ensemble() {
                        println!("{w:>4} days  {:<12} {:<9} R2 {:.3}", s.location.to_string(), s.target.to_string(), e.r2);
                    }
                }
            }
        }
        Command::Report { run_dir } => print!("{}", cmd_report(&run_dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
