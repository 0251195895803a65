//! WebAssembly bindings for the static page in `www/`.
//!
//! Each export takes plain numbers or strings and returns a JSON document, so
//! the page needs no bundler. The same functions are callable natively.

use rand::Rng;
use serde::Serialize;
use sessioncast::matrix::Matrix;
use sessioncast::metrics::r2_score;
use sessioncast::regressors::*;
use sessioncast::sessions::{clean_sessions, Location};
use sessioncast::seeding;
use sessioncast::synthgen::{gen_sessions, SynthConfig};
use sessioncast::tuning::{sfbs, CvPlan, SfbsStep};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn of(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0; bins];
        for v in values {
            let b = ((v - lo) / width).floor().clamp(0.0, (bins - 1) as f64);
            counts[b as usize] += 1;
        }
        Histogram { lo, width, counts }
    }
}

#[derive(Debug, Serialize)]
pub struct LocationSummary {
    pub location: Location,
    pub sessions: usize,
    pub mean_energy_kwh: f64,
    pub mean_duration_h: f64,
    pub energy: Histogram,
    pub duration: Histogram,
}

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub kept: usize,
    pub rejected: usize,
    pub locations: Vec<LocationSummary>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Generates `days` of sessions and bins energy and stay length per location.
pub fn synth_summary(seed: u64, workplace_cars: usize, residential_cars: usize, days: u32) -> Result<SynthSummary, String> {
    let mut cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    cfg.workplace.n_cars = workplace_cars;
    cfg.residential.n_cars = residential_cars;
    cfg.end_date = cfg.start_date + chrono_days(days.max(7));
    let raw = gen_sessions(&cfg).map_err(|e| e.to_string())?;
    let cleaned = clean_sessions(&raw);
    let locations = Location::ALL
        .iter()
        .map(|&location| {
            let here: Vec<_> = cleaned.kept.iter().filter(|s| s.location == location).collect();
            let energy: Vec<f64> = here.iter().map(|s| s.energy_kwh).collect();
            let duration: Vec<f64> = here.iter().map(|s| s.duration_h()).collect();
            LocationSummary {
                location,
                sessions: here.len(),
                mean_energy_kwh: mean(&energy),
                mean_duration_h: mean(&duration),
                energy: Histogram::of(&energy, 0.0, 80.0, 40),
                duration: Histogram::of(&duration, 0.0, 24.0, 48),
            }
        })
        .collect();
    Ok(SynthSummary {
        kept: cleaned.kept.len(),
        rejected: cleaned.rejected.len(),
        locations,
    })
}

fn chrono_days(days: u32) -> chrono::Duration {
    chrono::Duration::days(days as i64)
}

#[derive(Debug, Serialize)]
pub struct CurveFit {
    pub family: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub grid: Vec<f64>,
    pub fitted: Vec<f64>,
    pub truth: Vec<f64>,
    pub r2_train: f64,
}

fn truth(x: f64) -> f64 {
    (1.5 * x).sin() * 3.0 + 0.4 * x
}

fn default_params(family: Family) -> FamilyParams {
    match family {
        Family::Linear => FamilyParams::Linear,
        Family::Svr => FamilyParams::Svr(SvrParams {
            c: 10.0,
            gamma: 0.5,
            epsilon: 0.1,
            kernel: Kernel::Rbf,
            row_cap: 2000,
        }),
        Family::Tree => FamilyParams::Tree(TreeParams {
            max_depth: Some(4),
            ..TreeParams::default()
        }),
        Family::Forest => FamilyParams::Forest(ForestParams {
            n_trees: 50,
            max_depth: Some(6),
            min_samples_split: 2,
            min_samples_leaf: 2,
            bootstrap: true,
        }),
        Family::Boosted => FamilyParams::Boosted(BoostParams {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: Some(3),
            subsample: 0.8,
            colsample: 1.0,
            min_split_loss: 0.0,
        }),
    }
}

/// Fits one base family to a noisy one-dimensional curve.
pub fn fit_curve(family: &str, n: usize, noise: f64, seed: u64) -> Result<CurveFit, String> {
    let fam = Family::from_name(family).ok_or_else(|| format!("unknown family {family:?}"))?;
    let mut rng = seeding::rng(seed);
    let x: Vec<f64> = (0..n.max(10)).map(|_| rng.random_range(-4.0..4.0)).collect();
    let y: Vec<f64> = x.iter().map(|&v| truth(v) + noise * (rng.random::<f64>() - 0.5) * 2.0).collect();
    let m = Matrix::from_rows(&x.iter().map(|&v| [v]).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let data = TrainData::new(&m, &y).map_err(|e| e.to_string())?;
    let model = fit_family(&default_params(fam), &data, &vec![1.0; y.len()], &[0], seed).map_err(|e| e.to_string())?;
    let predict = |v: f64| model.predict_row(&[v]).map_err(|e| e.to_string());
    let grid: Vec<f64> = (0..=160).map(|i| -4.0 + i as f64 * 0.05).collect();
    let fitted = grid.iter().map(|&v| predict(v)).collect::<Result<Vec<_>, _>>()?;
    let in_sample = x.iter().map(|&v| predict(v)).collect::<Result<Vec<_>, _>>()?;
    Ok(CurveFit {
        family: fam.name().to_string(),
        truth: grid.iter().map(|&v| truth(v)).collect(),
        r2_train: r2_score(&y, &in_sample).map_err(|e| e.to_string())?,
        x,
        y,
        grid,
        fitted,
    })
}

#[derive(Debug, Serialize)]
pub struct SelectionTrace {
    pub signal: Vec<usize>,
    pub selected: Vec<usize>,
    pub full_score: f64,
    pub score: f64,
    pub trajectory: Vec<SfbsStep>,
}

/// Backward floating selection with a linear model over `n_signal`
/// informative columns followed by `n_noise` pure-noise columns.
pub fn selection_trace(n_signal: usize, n_noise: usize, rows: usize, seed: u64) -> Result<SelectionTrace, String> {
    let p = n_signal + n_noise;
    if p == 0 || p > 20 {
        return Err("between 1 and 20 columns".into());
    }
    let mut rng = seeding::rng(seed);
    let rows = rows.max(30);
    let x: Vec<Vec<f64>> = (0..rows).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| r[..n_signal].iter().enumerate().map(|(j, v)| (j + 1) as f64 * v).sum::<f64>() + 0.3 * rng.random::<f64>())
        .collect();
    let m = Matrix::from_rows(&x).map_err(|e| e.to_string())?;
    let data = TrainData::new(&m, &y).map_err(|e| e.to_string())?;
    let plan = CvPlan::contiguous(rows, 5).map_err(|e| e.to_string())?;
    let all: Vec<usize> = (0..p).collect();
    let out = sfbs(&FamilyParams::Linear, &data, &plan, &all, seed).map_err(|e| e.to_string())?;
    Ok(SelectionTrace {
        signal: (0..n_signal).collect(),
        selected: out.columns,
        full_score: out.full_score,
        score: out.score,
        trajectory: out.trajectory,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = synthSummary)]
pub fn synth_summary_js(seed: u32, workplace_cars: u32, residential_cars: u32, days: u32) -> Result<String, JsError> {
    to_js(synth_summary(seed as u64, workplace_cars as usize, residential_cars as usize, days))
}

#[wasm_bindgen(js_name = fitCurve)]
pub fn fit_curve_js(family: &str, n: u32, noise: f64, seed: u32) -> Result<String, JsError> {
    to_js(fit_curve(family, n as usize, noise, seed as u64))
}

#[wasm_bindgen(js_name = selectionTrace)]
pub fn selection_trace_js(n_signal: u32, n_noise: u32, rows: u32, seed: u32) -> Result<String, JsError> {
    to_js(selection_trace(n_signal as usize, n_noise as usize, rows as usize, seed as u64))
}
