//! Tables, plot-data CSVs and the plain-text summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Deserialize;
use sessioncast::features::{FeatureId, Variant};
use sessioncast::metrics::Metrics;
use sessioncast::pipeline::{aggregate_importance, ImportanceSummary, MetricsReport, WeeklyIterationResult, ENSEMBLE};
use sessioncast::regressors::Family;
use sessioncast::timefmt::format_timestamp;

use crate::{write_json, RunConfig, AGGREGATE_FILE};

pub const METRICS_CSV: &str = "metrics.csv";
pub const FORECASTS_CSV: &str = "forecasts.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const METRICS_BY_MODEL_CSV: &str = "metrics_by_model.csv";
pub const FEATURE_FREQUENCY_CSV: &str = "feature_frequency.csv";
pub const FEATURE_FREQUENCY_BY_STRATUM_CSV: &str = "feature_frequency_by_stratum.csv";
pub const BASE_FREQUENCY_CSV: &str = "base_model_frequency.csv";
pub const BASE_FREQUENCY_BY_STRATUM_CSV: &str = "base_model_frequency_by_stratum.csv";
pub const IMPORTANCE_JSON: &str = "importance.json";

fn model_names() -> impl Iterator<Item = &'static str> {
    Family::ALL.iter().map(|f| f.name()).chain([ENSEMBLE])
}

fn writer(path: &Path) -> anyhow::Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

fn metric_fields(m: &Metrics) -> [String; 4] {
    [m.n.to_string(), m.rmse.to_string(), m.mae.to_string(), m.r2.to_string()]
}

/// Pooled metrics per (scope, location, target, model), where scope is
/// `combined` or a variant.
pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> anyhow::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["scope", "location", "target", "model", "n", "rmse", "mae", "r2"])?;
    for s in &report.strata {
        let scopes = std::iter::once(("combined".to_string(), &s.combined))
            .chain(s.by_variant.iter().map(|(v, t)| (v.to_string(), t)));
        for (scope, table) in scopes {
            for name in model_names() {
                if let Some(m) = table.get(name) {
                    let mut row = vec![scope.clone(), s.location.to_string(), s.target.to_string(), name.to_string()];
                    row.extend(metric_fields(m));
                    w.write_record(&row)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Every test forecast of every week.
pub fn write_forecasts_csv(path: &Path, weeks: &[WeeklyIterationResult]) -> anyhow::Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["week", "location", "target", "session_id", "car_id", "arrival", "variant", "actual", ENSEMBLE];
    header.extend(Family::ALL.iter().map(|f| f.name()));
    w.write_record(&header)?;
    for week in weeks {
        for s in &week.strata {
            for f in &s.forecasts {
                let mut row = vec![
                    week.plan.iteration.to_string(),
                    s.location.to_string(),
                    s.target.to_string(),
                    f.session_id.clone(),
                    f.car_id.clone(),
                    format_timestamp(&f.arrival),
                    f.variant.to_string(),
                    f.actual.to_string(),
                    f.ensemble.to_string(),
                ];
                row.extend(f.bases.iter().map(|b| b.to_string()));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per (window, location, target), windows ascending.
pub fn write_lookback_csv(path: &Path, study: &BTreeMap<i64, MetricsReport>) -> anyhow::Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "window_days",
        "location",
        "target",
        "n",
        "rmse",
        "mae",
        "r2",
        "best_base",
        "best_base_r2",
    ])?;
    for (window, report) in study {
        for s in &report.strata {
            let Some(e) = s.ensemble() else { continue };
            let mut row = vec![window.to_string(), s.location.to_string(), s.target.to_string()];
            row.extend(metric_fields(e));
            match s.best_base() {
                Some((f, m)) => row.extend([f.name().to_string(), m.r2.to_string()]),
                None => row.extend([String::new(), String::new()]),
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct WeekFile {
    week: WeeklyIterationResult,
}

#[derive(Deserialize)]
struct AggregateFile {
    config: RunConfig,
    aggregate: MetricsReport,
}

/// Reads a run directory written by `run`.
pub fn load_run(dir: &Path) -> anyhow::Result<(RunConfig, Vec<WeeklyIterationResult>, MetricsReport)> {
    let agg_path = dir.join(AGGREGATE_FILE);
    let text = fs::read_to_string(&agg_path).with_context(|| format!("reading {}", agg_path.display()))?;
    let agg: AggregateFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", agg_path.display()))?;
    let mut names: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("week_") && n.ends_with(".json"))
        .collect();
    names.sort();
    let mut weeks = Vec::with_capacity(names.len());
    for n in names {
        let path = dir.join(&n);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let file: WeekFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        weeks.push(file.week);
    }
    anyhow::ensure!(!weeks.is_empty(), "{} holds no weekly reports", dir.display());
    Ok((agg.config, weeks, agg.aggregate))
}

/// Fixed-width table of pooled metrics per (location, target, model).
pub fn summary_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<9} {:<9} {:>6} {:>9} {:>9} {:>8} {:>9}",
        "location", "target", "model", "n", "RMSE", "MAE", "R2", "closest%"
    );
    for s in &report.strata {
        for name in model_names() {
            let Some(m) = s.combined.get(name) else { continue };
            let closest = Family::from_name(name)
                .and_then(|f| s.closest_model.get(&f))
                .map(|c| format!("{c:.1}"))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{:<12} {:<9} {:<9} {:>6} {:>9.3} {:>9.3} {:>8.3} {:>9}",
                s.location.to_string(),
                s.target.to_string(),
                name,
                m.n,
                m.rmse,
                m.mae,
                m.r2,
                closest
            );
        }
        let _ = writeln!(
            out,
            "{:<12} {:<9} routing: {} Model1, {} Model2",
            s.location.to_string(),
            s.target.to_string(),
            s.routing.model1,
            s.routing.model2
        );
    }
    out
}

type Summaries = Vec<(String, Variant, ImportanceSummary)>;

fn importance_by_stratum(cfg: &RunConfig, weeks: &[WeeklyIterationResult]) -> (Vec<(Variant, ImportanceSummary)>, Summaries) {
    let pooled = Variant::ALL
        .iter()
        .map(|&v| (v, aggregate_importance(weeks, |_, f| f.variant == v)))
        .collect();
    let mut by_stratum = Vec::new();
    for &loc in &cfg.pipeline.locations {
        for &target in &cfg.pipeline.targets {
            for &v in &Variant::ALL {
                let s = aggregate_importance(weeks, |s, f| s.location == loc && s.target == target && f.variant == v);
                by_stratum.push((format!("{loc},{target}"), v, s));
            }
        }
    }
    (pooled, by_stratum)
}

fn feature_rows(prefix: &[String], v: Variant, s: &ImportanceSummary, w: &mut csv::Writer<fs::File>) -> anyhow::Result<()> {
    for stat in &s.features {
        let mut row = prefix.to_vec();
        row.extend([
            v.to_string(),
            stat.feature.name().to_string(),
            s.n_fits.to_string(),
            stat.frequency.to_string(),
            stat.importance.to_string(),
        ]);
        row.extend(Family::ALL.iter().map(|f| stat.family_frequency.get(f).copied().unwrap_or(0.0).to_string()));
        w.write_record(&row)?;
    }
    Ok(())
}

fn base_rows(prefix: &[String], v: Option<Variant>, s: &ImportanceSummary, w: &mut csv::Writer<fs::File>) -> anyhow::Result<()> {
    for b in &s.bases {
        let mut row = prefix.to_vec();
        if let Some(v) = v {
            row.push(v.to_string());
        }
        row.extend([
            b.family.name().to_string(),
            s.n_fits.to_string(),
            b.frequency.to_string(),
            b.importance.to_string(),
        ]);
        w.write_record(&row)?;
    }
    Ok(())
}

fn feature_header(prefix: &[&'static str]) -> Vec<&'static str> {
    let mut h = prefix.to_vec();
    h.extend(["variant", "feature", "n_fits", "frequency", "importance"]);
    h.extend(Family::ALL.iter().map(|f| f.name()));
    h
}

/// Writes `summary.txt`, `metrics_by_model.csv`, the feature and base-model
/// frequency files and `importance.json` into `dir`.
pub fn write_reports(
    dir: &Path,
    cfg: &RunConfig,
    weeks: &[WeeklyIterationResult],
    aggregate: &MetricsReport,
) -> anyhow::Result<()> {
    let mut w = writer(&dir.join(METRICS_BY_MODEL_CSV))?;
    w.write_record(["location", "target", "model", "n", "rmse", "mae", "r2", "closest_percent"])?;
    for s in &aggregate.strata {
        for name in model_names() {
            let Some(m) = s.combined.get(name) else { continue };
            let mut row = vec![s.location.to_string(), s.target.to_string(), name.to_string()];
            row.extend(metric_fields(m));
            row.push(
                Family::from_name(name)
                    .and_then(|f| s.closest_model.get(&f))
                    .map(|c| c.to_string())
                    .unwrap_or_default(),
            );
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let (pooled, by_stratum) = importance_by_stratum(cfg, weeks);
    let mut w = writer(&dir.join(FEATURE_FREQUENCY_CSV))?;
    w.write_record(feature_header(&[]))?;
    for (v, s) in &pooled {
        feature_rows(&[], *v, s, &mut w)?;
    }
    w.flush()?;
    let mut w = writer(&dir.join(FEATURE_FREQUENCY_BY_STRATUM_CSV))?;
    w.write_record(feature_header(&["location", "target"]))?;
    for (key, v, s) in &by_stratum {
        let prefix: Vec<String> = key.split(',').map(String::from).collect();
        feature_rows(&prefix, *v, s, &mut w)?;
    }
    w.flush()?;

    let all = aggregate_importance(weeks, |_, _| true);
    let mut w = writer(&dir.join(BASE_FREQUENCY_CSV))?;
    w.write_record(["model", "n_fits", "frequency", "importance"])?;
    base_rows(&[], None, &all, &mut w)?;
    w.flush()?;
    let mut w = writer(&dir.join(BASE_FREQUENCY_BY_STRATUM_CSV))?;
    w.write_record(["location", "target", "variant", "model", "n_fits", "frequency", "importance"])?;
    for (key, v, s) in &by_stratum {
        let prefix: Vec<String> = key.split(',').map(String::from).collect();
        base_rows(&prefix, Some(*v), s, &mut w)?;
    }
    w.flush()?;

    #[derive(serde::Serialize)]
    struct Importance<'a> {
        pooled: BTreeMap<String, &'a ImportanceSummary>,
        all_fits: &'a ImportanceSummary,
    }
    let body = Importance {
        pooled: pooled.iter().map(|(v, s)| (v.to_string(), s)).collect(),
        all_fits: &all,
    };
    write_json(&dir.join(IMPORTANCE_JSON), &crate::Echo { config: cfg, body })?;

    let mut text = String::new();
    let _ = writeln!(text, "weeks: {}", weeks.len());
    if let (Some(first), Some(last)) = (weeks.first(), weeks.last()) {
        let _ = writeln!(
            text,
            "test period: {} to {}",
            format_timestamp(&first.plan.test_start),
            format_timestamp(&last.plan.test_end)
        );
    }
    let _ = writeln!(text, "mode: {:?}, replay cap: {}", cfg.pipeline.mode, cfg.pipeline.replay_cap);
    let _ = writeln!(text);
    text.push_str(&summary_table(aggregate));
    let _ = writeln!(text);
    let _ = writeln!(text, "most frequently selected features:");
    for (v, s) in &pooled {
        let mut top: Vec<(FeatureId, f64)> = s.features.iter().map(|f| (f.feature, f.frequency)).collect();
        top.sort_by(|a, b| b.1.total_cmp(&a.1));
        let names: Vec<String> = top.iter().take(5).map(|(f, x)| format!("{f} {x:.2}")).collect();
        let _ = writeln!(text, "  {v}: {}", names.join(", "));
    }
    let flags: Vec<String> = weeks
        .iter()
        .flat_map(|w| w.strata.iter().flat_map(move |s| s.flags.iter().map(move |f| format!("week {}: {f}", w.plan.iteration))))
        .collect();
    if !flags.is_empty() {
        let _ = writeln!(text);
        let _ = writeln!(text, "flags:");
        for f in flags {
            let _ = writeln!(text, "  {f}");
        }
    }
    let _ = writeln!(text);
    let _ = writeln!(text, "config:");
    text.push_str(&serde_json::to_string_pretty(cfg)?);
    text.push('\n');
    let path = dir.join(SUMMARY_TXT);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
