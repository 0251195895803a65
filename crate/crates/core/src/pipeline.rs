//! Weekly incremental forecasting study: temporal splits, Model1 / Model2
//! routing, per-week tuning and stacking, pooled evaluation, importance
//! aggregation and the lookback study.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDateTime};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{featurize, FeatureContext, FeatureId, FeatureMask, HistoryIndex, Target, Variant, N_FEATURES};
use crate::matrix::Matrix;
use crate::metrics::{closest_model_stats, metrics, Metrics};
use crate::par;
use crate::regressors::{Family, TrainData};
use crate::seeding;
use crate::sessions::{CalendarInfo, ChargingSession, Location, WeatherMap};
use crate::stacking::{stack_fit, BaseSpec, StackSummary, N_BASES};
use crate::timefmt::{self, format_timestamp};
use crate::tuning::{tune_and_select, CvPlan, GridProfile, HyperGrid, SelectionResult, DEFAULT_FOLDS};

/// Share of the training window, by row count, held out as validation.
pub const VALIDATION_PERCENT: usize = 20;
pub const WEEK_DAYS: i64 = 7;
pub const MIN_WINDOW_DAYS: i64 = 60;
pub const DEFAULT_LOOKBACK_WINDOWS: [i64; 7] = [60, 160, 260, 360, 460, 560, 660];
/// Key of the ensemble forecast in metric tables.
pub const ENSEMBLE: &str = "ENSEMBLE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncrementalMode {
    /// Every week is absorbed into a training window that keeps growing.
    Growing,
    /// The newest week plus a seeded sample of older rows, up to a cap.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub targets: Vec<Target>,
    pub locations: Vec<Location>,
    pub n_weeks: usize,
    pub initial_window_days: i64,
    /// Most recent days of history admitted into training; `None` keeps all.
    pub lookback_days: Option<i64>,
    pub mode: IncrementalMode,
    pub replay_cap: usize,
    pub cv_folds: usize,
    pub profile: GridProfile,
    pub svr_row_cap: usize,
    /// Tuning and feature selection use at most this many of the most recent
    /// training rows; final fits use all of them.
    pub tune_row_cap: Option<usize>,
    pub utc_offset_hours: i32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            targets: Target::ALL.to_vec(),
            locations: Location::ALL.to_vec(),
            n_weeks: 52,
            initial_window_days: 365,
            lookback_days: None,
            mode: IncrementalMode::Growing,
            replay_cap: 5000,
            cv_folds: DEFAULT_FOLDS,
            profile: GridProfile::Full,
            svr_row_cap: crate::regressors::svr::DEFAULT_ROW_CAP,
            tune_row_cap: None,
            utc_offset_hours: 1,
        }
    }
}

impl PipelineConfig {
    /// Reduced grids and row caps for quick runs.
    pub fn fast() -> Self {
        Self {
            profile: GridProfile::Fast,
            svr_row_cap: 800,
            tune_row_cap: Some(400),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_weeks < 1 {
            return Err(Error::Config("n_weeks must be at least 1".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config("cv_folds must be at least 2".into()));
        }
        if self.initial_window_days < MIN_WINDOW_DAYS {
            return Err(Error::Config(format!("initial_window_days must be at least {MIN_WINDOW_DAYS}")));
        }
        if self.lookback_days.is_some_and(|d| d < MIN_WINDOW_DAYS) {
            return Err(Error::Config(format!("lookback_days must be at least {MIN_WINDOW_DAYS}")));
        }
        if self.targets.is_empty() || self.locations.is_empty() {
            return Err(Error::Config("at least one target and one location are needed".into()));
        }
        if self.mode == IncrementalMode::Replay && self.replay_cap == 0 {
            return Err(Error::Config("replay_cap must be positive".into()));
        }
        if self.svr_row_cap == 0 || self.tune_row_cap == Some(0) {
            return Err(Error::Config("row caps must be positive".into()));
        }
        Ok(())
    }
}

/// Chronological split for one weekly iteration. Row indices refer to the
/// session slice the plan was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub iteration: usize,
    #[serde(with = "timefmt::serde_ts")]
    pub window_start: NaiveDateTime,
    /// Arrival of the first validation row; equals `test_start` when the
    /// window has no validation rows.
    #[serde(with = "timefmt::serde_ts")]
    pub validation_start: NaiveDateTime,
    #[serde(with = "timefmt::serde_ts")]
    pub test_start: NaiveDateTime,
    #[serde(with = "timefmt::serde_ts")]
    pub test_end: NaiveDateTime,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    #[serde(skip)]
    pub window_rows: Vec<usize>,
    #[serde(skip)]
    pub test_rows: Vec<usize>,
}

fn day_zero(sessions: &[ChargingSession]) -> Result<NaiveDateTime> {
    let first = sessions
        .iter()
        .map(|s| s.arrival)
        .min()
        .ok_or_else(|| Error::Horizon("no sessions".into()))?;
    Ok(first.date().and_hms_opt(0, 0, 0).expect("midnight"))
}

fn check_sorted(sessions: &[ChargingSession]) -> Result<()> {
    if sessions.windows(2).any(|w| w[1].arrival < w[0].arrival) {
        return Err(Error::Data("sessions must be sorted by arrival".into()));
    }
    Ok(())
}

/// Training window and test week of iteration `iteration`, with the first
/// test week starting `first_test_day` days after the first arrival's date.
fn split_at(sessions: &[ChargingSession], iteration: usize, first_test_day: i64, cfg: &PipelineConfig) -> Result<SplitPlan> {
    check_sorted(sessions)?;
    let day0 = day_zero(sessions)?;
    let test_start = day0 + Duration::days(first_test_day + WEEK_DAYS * iteration as i64);
    let test_end = test_start + Duration::days(WEEK_DAYS);
    let last = sessions.last().expect("non-empty").arrival;
    if last < test_end - Duration::days(1) {
        return Err(Error::Horizon(format!(
            "iteration {iteration} tests {} to {}, but the data ends at {}",
            format_timestamp(&test_start),
            format_timestamp(&test_end),
            format_timestamp(&last)
        )));
    }
    let window_start = cfg
        .lookback_days
        .map_or(day0, |d| (test_start - Duration::days(d)).max(day0));
    let lo = sessions.partition_point(|s| s.arrival < window_start);
    let mid = sessions.partition_point(|s| s.arrival < test_start);
    let hi = sessions.partition_point(|s| s.arrival < test_end);
    let mut window_rows: Vec<usize> = (lo..mid).collect();
    if cfg.mode == IncrementalMode::Replay && window_rows.len() > cfg.replay_cap {
        let recent_from = test_start - Duration::days(WEEK_DAYS);
        let split = sessions.partition_point(|s| s.arrival < recent_from).max(lo);
        let older = split - lo;
        let room = cfg.replay_cap.saturating_sub(mid - split).min(older);
        let mut rng = seeding::rng(seeding::derive(cfg.seed, &[iteration as u64, 0x5E1A]));
        let mut keep: Vec<usize> = sample(&mut rng, older, room).into_iter().map(|i| lo + i).collect();
        keep.sort_unstable();
        keep.extend(split..mid);
        window_rows = keep;
    }
    let n = window_rows.len();
    let n_train = n - n * VALIDATION_PERCENT / 100;
    let validation_start = window_rows.get(n_train).map_or(test_start, |&i| sessions[i].arrival);
    Ok(SplitPlan {
        iteration,
        window_start,
        validation_start,
        test_start,
        test_end,
        n_train,
        n_validation: n - n_train,
        n_test: hi - mid,
        window_rows,
        test_rows: (mid..hi).collect(),
    })
}

/// Growing-window split: iteration `i` trains on everything before
/// `initial_window_days + 7i` days and tests on the following week.
/// `sessions` must be sorted by arrival.
pub fn dynamic_split(sessions: &[ChargingSession], iteration: usize, cfg: &PipelineConfig) -> Result<SplitPlan> {
    split_at(sessions, iteration, cfg.initial_window_days, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub variant: Variant,
    /// Training sessions of the same car.
    pub seen_count: usize,
}

/// Per-car session counts of a training window.
#[derive(Debug, Clone, Default)]
pub struct RouteTable {
    seen: BTreeMap<String, usize>,
}

impl RouteTable {
    pub fn new<'a>(training: impl IntoIterator<Item = &'a ChargingSession>) -> Self {
        let mut seen = BTreeMap::new();
        for s in training {
            *seen.entry(s.car_id.clone()).or_insert(0) += 1;
        }
        Self { seen }
    }

    pub fn route(&self, session: &ChargingSession) -> RouteDecision {
        let seen_count = self.seen.get(&session.car_id).copied().unwrap_or(0);
        let variant = if seen_count > 0 { Variant::Model2 } else { Variant::Model1 };
        RouteDecision { variant, seen_count }
    }
}

/// Model2 if the car has any training session, Model1 otherwise.
pub fn route(session: &ChargingSession, training: &[ChargingSession]) -> RouteDecision {
    RouteTable::new(training.iter().filter(|s| s.car_id == session.car_id)).route(session)
}

/// One routed test session and every forecast made for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub session_id: String,
    pub car_id: String,
    #[serde(with = "timefmt::serde_ts")]
    pub arrival: NaiveDateTime,
    pub variant: Variant,
    pub actual: f64,
    pub ensemble: f64,
    /// Base forecasts in LR, SVR, DT, RF, GBDT order.
    pub bases: [f64; N_BASES],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoutingCounts {
    pub model1: usize,
    pub model2: usize,
}

impl RoutingCounts {
    pub fn total(&self) -> usize {
        self.model1 + self.model2
    }
}

/// Tuning, selection and ensemble record of one variant in one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantFit {
    pub variant: Variant,
    pub n_train: usize,
    pub n_test: usize,
    /// Tuning fell back to first grid values without feature selection.
    pub reduced: bool,
    /// One per base family, in LR, SVR, DT, RF, GBDT order.
    pub selections: Vec<SelectionResult>,
    /// Normalized importances of the refit base models over all fifteen
    /// features; `None` for families without importances.
    pub importances: Vec<Option<Vec<f64>>>,
    pub ensemble: StackSummary,
    /// Base forecasts with blend weight or used by the correction trees.
    pub base_selected: [bool; N_BASES],
    /// Blend weight of each base forecast.
    pub base_importance: [f64; N_BASES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumResult {
    pub location: Location,
    pub target: Target,
    pub n_window: usize,
    pub n_test: usize,
    pub routing: RoutingCounts,
    pub fits: Vec<VariantFit>,
    pub forecasts: Vec<Forecast>,
    /// Why parts of the stratum were skipped or reduced.
    pub flags: Vec<String>,
}

/// Metrics of one (location, target) over a set of forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumMetrics {
    pub location: Location,
    pub target: Target,
    pub n: usize,
    pub routing: RoutingCounts,
    /// Combined Model1 and Model2 forecasts, keyed by family name or
    /// [`ENSEMBLE`].
    pub combined: BTreeMap<String, Metrics>,
    pub by_variant: BTreeMap<Variant, BTreeMap<String, Metrics>>,
    /// Share of rows (percent) on which each family was closest to the truth.
    pub closest_model: BTreeMap<Family, f64>,
}

impl StratumMetrics {
    pub fn ensemble(&self) -> Option<&Metrics> {
        self.combined.get(ENSEMBLE)
    }

    pub fn best_base(&self) -> Option<(Family, &Metrics)> {
        Family::ALL
            .iter()
            .filter_map(|f| self.combined.get(f.name()).map(|m| (*f, m)))
            .fold(None, |best, (f, m)| match best {
                Some((_, b)) if b.r2 >= m.r2 => best,
                _ => Some((f, m)),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strata: Vec<StratumMetrics>,
}

impl MetricsReport {
    pub fn get(&self, location: Location, target: Target) -> Option<&StratumMetrics> {
        self.strata.iter().find(|s| s.location == location && s.target == target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyIterationResult {
    pub plan: SplitPlan,
    pub strata: Vec<StratumResult>,
    pub metrics: MetricsReport,
}

fn metric_table(rows: &[&Forecast]) -> Result<BTreeMap<String, Metrics>> {
    let y: Vec<f64> = rows.iter().map(|f| f.actual).collect();
    let mut table = BTreeMap::new();
    for (b, fam) in Family::ALL.iter().enumerate() {
        let pred: Vec<f64> = rows.iter().map(|f| f.bases[b]).collect();
        table.insert(fam.name().to_string(), metrics(&y, &pred)?);
    }
    let pred: Vec<f64> = rows.iter().map(|f| f.ensemble).collect();
    table.insert(ENSEMBLE.to_string(), metrics(&y, &pred)?);
    Ok(table)
}

/// Metrics over the given forecasts; `None` when there are none.
pub fn stratum_metrics(location: Location, target: Target, forecasts: &[&Forecast]) -> Result<Option<StratumMetrics>> {
    if forecasts.is_empty() {
        return Ok(None);
    }
    let mut routing = RoutingCounts::default();
    let mut by_variant = BTreeMap::new();
    for v in Variant::ALL {
        let rows: Vec<&Forecast> = forecasts.iter().copied().filter(|f| f.variant == v).collect();
        match v {
            Variant::Model1 => routing.model1 = rows.len(),
            Variant::Model2 => routing.model2 = rows.len(),
        }
        if !rows.is_empty() {
            by_variant.insert(v, metric_table(&rows)?);
        }
    }
    let y: Vec<f64> = forecasts.iter().map(|f| f.actual).collect();
    let per_family: BTreeMap<Family, Vec<f64>> = Family::ALL
        .iter()
        .enumerate()
        .map(|(b, fam)| (*fam, forecasts.iter().map(|f| f.bases[b]).collect()))
        .collect();
    Ok(Some(StratumMetrics {
        location,
        target,
        n: forecasts.len(),
        routing,
        combined: metric_table(forecasts)?,
        by_variant,
        closest_model: closest_model_stats(&per_family, &y)?,
    }))
}

/// Pools the forecasts of every (location, target) across `weeks` and scores
/// them jointly.
pub fn pooled_metrics(weeks: &[WeeklyIterationResult]) -> Result<MetricsReport> {
    let mut pools: BTreeMap<(Location, Target), Vec<&Forecast>> = BTreeMap::new();
    for w in weeks {
        for s in &w.strata {
            pools.entry((s.location, s.target)).or_default().extend(&s.forecasts);
        }
    }
    let mut strata = Vec::new();
    for ((loc, target), rows) in pools {
        strata.extend(stratum_metrics(loc, target, &rows)?);
    }
    Ok(MetricsReport { strata })
}

/// Training rows of one variant, featurized against the window's history.
fn training_rows(
    window: &[ChargingSession],
    index: &HistoryIndex,
    ctx: FeatureContext<'_>,
    variant: Variant,
) -> Result<(Matrix, Vec<f64>)> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for s in window {
        if variant == Variant::Model2 && index.car(&s.car_id, &s.arrival).count == 0 {
            continue;
        }
        let fv = featurize(s, index, ctx, variant)?;
        x.push(fv.values);
        y.push(fv.target);
    }
    let x = if x.is_empty() { Matrix::zeros(0, N_FEATURES) } else { Matrix::from_rows(&x)? };
    Ok((x, y))
}

fn tail_data(x: &Matrix, y: &[f64], cap: Option<usize>) -> (Matrix, Vec<f64>) {
    let n = y.len();
    let start = cap.map_or(0, |c| n.saturating_sub(c));
    let rows: Vec<usize> = (start..n).collect();
    (x.select_rows(&rows), y[start..].to_vec())
}

fn fit_variant(
    window: &[ChargingSession],
    index: &HistoryIndex,
    ctx: FeatureContext<'_>,
    variant: Variant,
    test: &[&ChargingSession],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<std::result::Result<(VariantFit, Vec<Forecast>), String>> {
    let (x, y) = training_rows(window, index, ctx, variant)?;
    let k = cfg.cv_folds;
    if y.len() < 2 * k {
        return Ok(Err(format!("{variant}: {} training rows, too few to fit", y.len())));
    }
    let allowed = FeatureMask::for_variant(variant).indices();
    let data = TrainData::new(&x, &y)?;
    let plan = CvPlan::contiguous(y.len(), k)?;
    let (tx, ty) = tail_data(&x, &y, cfg.tune_row_cap);
    let tune_data = TrainData::new(&tx, &ty)?;
    let tune_plan = CvPlan::contiguous(ty.len(), k)?;
    let selections = par::map(Family::ALL.to_vec(), |fam| {
        let grid = HyperGrid::for_profile(fam, cfg.profile).with_svr_row_cap(cfg.svr_row_cap);
        tune_and_select(&grid, &tune_data, &tune_plan, &allowed, seeding::derive(seed, &[1, fam.index() as u64]))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let bases: Vec<BaseSpec> = selections.iter().map(BaseSpec::from).collect();
    let meta_grid = HyperGrid::for_profile(Family::Boosted, cfg.profile);
    let ens = stack_fit(&data, &plan, &bases, &meta_grid, cfg.tune_row_cap, seeding::derive(seed, &[2]))?;

    let mut forecasts = Vec::with_capacity(test.len());
    for s in test {
        let fv = featurize(s, index, ctx, variant)?;
        let (bases, ensemble) = ens.predict_with_bases(&fv.values)?;
        forecasts.push(Forecast {
            session_id: s.session_id.clone(),
            car_id: s.car_id.clone(),
            arrival: s.arrival,
            variant,
            actual: fv.target,
            ensemble,
            bases,
        });
    }
    let importances = ens.bases.iter().map(|m| m.feature_importance().ok()).collect();
    let fit = VariantFit {
        variant,
        n_train: y.len(),
        n_test: test.len(),
        reduced: selections.iter().any(|s| s.reduced),
        selections,
        importances,
        ensemble: ens.summary(),
        base_selected: ens.base_selected(),
        base_importance: ens.base_importance()?,
    };
    Ok(Ok((fit, forecasts)))
}

fn run_stratum(
    sessions: &[ChargingSession],
    plan: &SplitPlan,
    location: Location,
    target: Target,
    ctx: FeatureContext<'_>,
    cfg: &PipelineConfig,
) -> Result<StratumResult> {
    let window: Vec<ChargingSession> = plan
        .window_rows
        .iter()
        .map(|&i| &sessions[i])
        .filter(|s| s.location == location)
        .cloned()
        .collect();
    let test: Vec<&ChargingSession> = plan
        .test_rows
        .iter()
        .map(|&i| &sessions[i])
        .filter(|s| s.location == location)
        .collect();
    let mut result = StratumResult {
        location,
        target,
        n_window: window.len(),
        n_test: test.len(),
        routing: RoutingCounts::default(),
        fits: Vec::new(),
        forecasts: Vec::new(),
        flags: Vec::new(),
    };
    if test.is_empty() {
        result.flags.push("no test sessions; stratum skipped".into());
        return Ok(result);
    }
    let table = RouteTable::new(&window);
    let mut routed: BTreeMap<Variant, Vec<&ChargingSession>> = BTreeMap::new();
    for s in &test {
        routed.entry(table.route(s).variant).or_default().push(s);
    }
    result.routing = RoutingCounts {
        model1: routed.get(&Variant::Model1).map_or(0, Vec::len),
        model2: routed.get(&Variant::Model2).map_or(0, Vec::len),
    };
    let index = HistoryIndex::build(&window, target, cfg.utc_offset_hours);
    let loc_tag = Location::ALL.iter().position(|l| *l == location).expect("known location") as u64;
    let target_tag = Target::ALL.iter().position(|t| *t == target).expect("known target") as u64;
    for (variant, rows) in routed {
        let v_tag = Variant::ALL.iter().position(|v| *v == variant).expect("known variant") as u64;
        let seed = seeding::derive(cfg.seed, &[plan.iteration as u64, loc_tag, target_tag, v_tag]);
        match fit_variant(&window, &index, ctx, variant, &rows, cfg, seed)? {
            Ok((fit, forecasts)) => {
                if fit.reduced {
                    result.flags.push(format!("{variant}: {} training rows, reduced tuning", fit.n_train));
                }
                result.fits.push(fit);
                result.forecasts.extend(forecasts);
            }
            Err(flag) => result.flags.push(format!("{flag}; {} test sessions not forecast", rows.len())),
        }
    }
    result.forecasts.sort_by(|a, b| a.arrival.cmp(&b.arrival).then_with(|| a.session_id.cmp(&b.session_id)));
    Ok(result)
}

fn run_plan(
    sessions: &[ChargingSession],
    weather: &WeatherMap,
    calendar: &CalendarInfo,
    plan: SplitPlan,
    cfg: &PipelineConfig,
) -> Result<WeeklyIterationResult> {
    let ctx = FeatureContext { weather, calendar };
    let jobs: Vec<(Location, Target)> = cfg
        .locations
        .iter()
        .flat_map(|l| cfg.targets.iter().map(move |t| (*l, *t)))
        .collect();
    let strata = par::map(jobs, |(l, t)| run_stratum(sessions, &plan, l, t, ctx, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricsReport::default();
    for s in &strata {
        let rows: Vec<&Forecast> = s.forecasts.iter().collect();
        report.strata.extend(stratum_metrics(s.location, s.target, &rows)?);
    }
    Ok(WeeklyIterationResult {
        plan,
        strata,
        metrics: report,
    })
}

/// One weekly iteration: split, route, tune, stack and forecast every
/// configured (location, target). `sessions` must be cleaned and sorted by
/// arrival.
pub fn run_week(
    sessions: &[ChargingSession],
    weather: &WeatherMap,
    calendar: &CalendarInfo,
    iteration: usize,
    cfg: &PipelineConfig,
) -> Result<WeeklyIterationResult> {
    cfg.validate()?;
    let plan = dynamic_split(sessions, iteration, cfg)?;
    run_plan(sessions, weather, calendar, plan, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonResult {
    pub weeks: Vec<WeeklyIterationResult>,
    /// Pooled over every week's forecasts.
    pub aggregate: MetricsReport,
}

fn run_weeks(
    sessions: &[ChargingSession],
    weather: &WeatherMap,
    calendar: &CalendarInfo,
    first_test_day: i64,
    cfg: &PipelineConfig,
) -> Result<HorizonResult> {
    cfg.validate()?;
    // fail before any fitting if the horizon is too short
    split_at(sessions, cfg.n_weeks - 1, first_test_day, cfg)?;
    let mut weeks = Vec::with_capacity(cfg.n_weeks);
    for i in 0..cfg.n_weeks {
        let plan = split_at(sessions, i, first_test_day, cfg)?;
        weeks.push(run_plan(sessions, weather, calendar, plan, cfg)?);
    }
    let aggregate = pooled_metrics(&weeks)?;
    Ok(HorizonResult { weeks, aggregate })
}

/// `cfg.n_weeks` consecutive weekly iterations with pooled metrics.
pub fn run_horizon(
    sessions: &[ChargingSession],
    weather: &WeatherMap,
    calendar: &CalendarInfo,
    cfg: &PipelineConfig,
) -> Result<HorizonResult> {
    run_weeks(sessions, weather, calendar, cfg.initial_window_days, cfg)
}

/// Runs the weekly loop once per lookback window. Test weeks start after
/// the larger of the initial window and the largest lookback window, so
/// every window sees the same test weeks.
pub fn lookback_study(
    sessions: &[ChargingSession],
    weather: &WeatherMap,
    calendar: &CalendarInfo,
    windows: &[i64],
    cfg: &PipelineConfig,
) -> Result<BTreeMap<i64, MetricsReport>> {
    let largest = *windows
        .iter()
        .max()
        .ok_or_else(|| Error::Config("no lookback windows".into()))?;
    let first_test_day = cfg.initial_window_days.max(largest);
    let mut out = BTreeMap::new();
    for &w in windows {
        let run_cfg = PipelineConfig {
            lookback_days: Some(w),
            ..cfg.clone()
        };
        out.insert(w, run_weeks(sessions, weather, calendar, first_test_day, &run_cfg)?.aggregate);
    }
    Ok(out)
}

/// Selection frequency and mean importance of one input feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub feature: FeatureId,
    /// Share of (fit, family) pairs whose selected mask holds the feature.
    pub frequency: f64,
    /// Mean normalized tree importance over the fits that selected it; 0
    /// when never selected by a tree family.
    pub importance: f64,
    pub family_frequency: BTreeMap<Family, f64>,
}

/// How often a base forecast was used by the meta model and its mean blend
/// weight when it was.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStat {
    pub family: Family,
    pub frequency: f64,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImportanceSummary {
    pub n_fits: usize,
    pub features: Vec<FeatureStat>,
    pub bases: Vec<BaseStat>,
}

fn mean_or_zero(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Aggregates selection frequencies and importances over every variant fit
/// of the given weeks that `keep` accepts.
pub fn aggregate_importance(
    weeks: &[WeeklyIterationResult],
    keep: impl Fn(&StratumResult, &VariantFit) -> bool,
) -> ImportanceSummary {
    let fits: Vec<&VariantFit> = weeks
        .iter()
        .flat_map(|w| &w.strata)
        .flat_map(|s| s.fits.iter().filter(|f| keep(s, f)))
        .collect();
    let n_fits = fits.len();
    let features = FeatureId::ALL
        .iter()
        .map(|&feat| {
            let mut family_hits: BTreeMap<Family, usize> = Family::ALL.iter().map(|f| (*f, 0)).collect();
            let (mut imp_sum, mut imp_n) = (0.0, 0);
            for fit in &fits {
                for (sel, imp) in fit.selections.iter().zip(&fit.importances) {
                    if !sel.columns.contains(&feat.index()) {
                        continue;
                    }
                    *family_hits.entry(sel.family).or_insert(0) += 1;
                    if let Some(imp) = imp {
                        imp_sum += imp[feat.index()];
                        imp_n += 1;
                    }
                }
            }
            let total: usize = family_hits.values().sum();
            FeatureStat {
                feature: feat,
                frequency: mean_or_zero(total as f64, n_fits * N_BASES),
                importance: mean_or_zero(imp_sum, imp_n),
                family_frequency: family_hits
                    .into_iter()
                    .map(|(f, c)| (f, mean_or_zero(c as f64, n_fits)))
                    .collect(),
            }
        })
        .collect();
    let bases = Family::ALL
        .iter()
        .enumerate()
        .map(|(b, &family)| {
            let chosen: Vec<&&VariantFit> = fits.iter().filter(|f| f.base_selected[b]).collect();
            BaseStat {
                family,
                frequency: mean_or_zero(chosen.len() as f64, n_fits),
                importance: mean_or_zero(chosen.iter().map(|f| f.base_importance[b]).sum(), chosen.len()),
            }
        })
        .collect();
    ImportanceSummary {
        n_fits,
        features,
        bases,
    }
}
