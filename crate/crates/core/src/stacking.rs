//! Stacked ensemble: a boosted meta model over out-of-fold forecasts of the
//! five base families concatenated with the original selected features.
//!
//! The meta model boosts from a base margin instead of the target mean: the
//! least-squares convex blend of the out-of-fold forecasts. Its trees fit what
//! the blend leaves over, and they are dropped when cross-validation finds no
//! gain on that residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureId;
use crate::matrix::Matrix;
use crate::par;
use crate::regressors::linear::cholesky_solve;
use crate::regressors::{fit_family, Family, FamilyParams, Model, TrainData};
use crate::seeding;
use crate::tuning::{tune_and_select, CvPlan, HyperGrid, SelectionResult};

pub const N_BASES: usize = 5;

/// A tuned base model: parameters plus the columns it was selected with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSpec {
    pub params: FamilyParams,
    pub columns: Vec<usize>,
}

impl From<&SelectionResult> for BaseSpec {
    fn from(s: &SelectionResult) -> Self {
        Self {
            params: s.params,
            columns: s.columns.clone(),
        }
    }
}

/// Meta model fitted on a meta matrix, with the tuning record behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFit {
    /// Convex weights of the base forecasts forming the base margin.
    pub weights: Vec<f64>,
    /// Boosted correction on top of the margin, trained on the residual.
    pub model: Model,
    pub selection: SelectionResult,
    /// False when the correction's CV R² on the residual was not positive.
    pub corrects: bool,
}

impl MetaFit {
    pub fn margin(&self, forecasts: &[f64]) -> f64 {
        forecasts.iter().zip(&self.weights).map(|(f, w)| f * w).sum()
    }

    /// `meta_row` starts with the base forecasts.
    pub fn predict_row(&self, meta_row: &[f64]) -> Result<f64> {
        let margin = self.margin(&meta_row[..self.weights.len()]);
        if self.corrects {
            Ok(margin + self.model.predict_row(meta_row)?)
        } else {
            Ok(margin)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedEnsemble {
    pub n_features: usize,
    /// Refit on all rows, in [`Family::ALL`] order.
    pub bases: Vec<Model>,
    pub base_columns: Vec<Vec<usize>>,
    /// Original columns appended after the five forecasts.
    pub original_columns: Vec<usize>,
    pub meta: MetaFit,
}

/// Compact description of an ensemble for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSummary {
    pub meta_params: FamilyParams,
    /// Meta input layout: base forecasts, then original feature names.
    pub layout: Vec<String>,
    /// Meta columns kept by feature selection.
    pub selected: Vec<String>,
    pub meta_cv_score: Option<f64>,
    /// Convex blend weights in family order.
    pub blend_weights: Vec<f64>,
    pub corrects: bool,
}

fn layout_name(original_columns: &[usize], c: usize) -> String {
    if c < N_BASES {
        Family::ALL[c].name().to_string()
    } else {
        let f = original_columns[c - N_BASES];
        FeatureId::from_index(f).map_or_else(|| format!("col{f}"), |id| id.name().to_string())
    }
}

/// Union of the base models' columns, ascending.
pub fn union_columns(bases: &[BaseSpec]) -> Vec<usize> {
    let mut all: Vec<usize> = bases.iter().flat_map(|b| b.columns.iter().copied()).collect();
    all.sort_unstable();
    all.dedup();
    all
}

/// Out-of-fold forecasts: column `b` holds base `b`'s forecast for each row,
/// made by a model that never saw that row's fold.
pub fn out_of_fold(data: &TrainData<'_>, plan: &CvPlan, bases: &[BaseSpec], seed: u64) -> Result<Matrix> {
    if plan.n_rows() != data.rows() {
        return Err(Error::Data("fold plan does not cover the training rows".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..bases.len())
        .flat_map(|b| (0..plan.k).map(move |f| (b, f)))
        .collect();
    let fits = par::map(jobs, |(b, f)| -> Result<(usize, usize, Vec<f64>)> {
        let (lo, hi) = plan.folds[f];
        let mut w = vec![1.0; data.rows()];
        w[lo..hi].iter_mut().for_each(|v| *v = 0.0);
        let m = fit_family(&bases[b].params, data, &w, &bases[b].columns, seeding::derive(seed, &[b as u64, f as u64]))?;
        let pred = (lo..hi).map(|i| m.predict_row(data.x.row(i))).collect::<Result<_>>()?;
        Ok((b, f, pred))
    });
    let mut oof = Matrix::zeros(data.rows(), bases.len());
    for fit in fits {
        let (b, f, pred) = fit?;
        for (i, p) in (plan.folds[f].0..).zip(pred) {
            oof.set(i, b, p);
        }
    }
    Ok(oof)
}

/// Minimizes `|y - F w|²` over the simplex `w >= 0, sum w = 1` by solving the
/// equality-constrained problem on every support and keeping the best
/// feasible one. Ties go to the support enumerated first.
pub fn convex_blend(forecasts: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let k = forecasts.cols();
    if k == 0 || k > 16 || forecasts.rows() != y.len() || y.is_empty() {
        return Err(Error::Data("blend needs 1 to 16 forecast columns, one row per target".into()));
    }
    let sse = |w: &[f64]| -> f64 {
        (0..y.len())
            .map(|i| (y[i] - forecasts.row(i).iter().zip(w).map(|(f, w)| f * w).sum::<f64>()).powi(2))
            .sum()
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|j| mask >> j & 1 == 1).collect();
        // the last support column absorbs the sum-to-one constraint
        let (&last, free) = support.split_last().expect("non-empty support");
        let m = free.len();
        let mut w = vec![0.0; k];
        if m == 0 {
            w[last] = 1.0;
        } else {
            let mut a = vec![0.0; m * m];
            let mut b = vec![0.0; m];
            for i in 0..y.len() {
                let r = forecasts.row(i);
                let d: Vec<f64> = free.iter().map(|&j| r[j] - r[last]).collect();
                let t = y[i] - r[last];
                for p in 0..m {
                    b[p] += d[p] * t;
                    for q in 0..m {
                        a[p * m + q] += d[p] * d[q];
                    }
                }
            }
            let scale = (0..m).map(|p| a[p * m + p]).fold(0.0, f64::max).max(1e-300);
            for p in 0..m {
                a[p * m + p] += 1e-10 * scale;
            }
            let Ok(v) = cholesky_solve(&a, &b, m) else { continue };
            let rest = 1.0 - v.iter().sum::<f64>();
            if v.iter().chain([&rest]).any(|x| *x < 0.0) {
                continue;
            }
            for (&j, x) in free.iter().zip(&v) {
                w[j] = *x;
            }
            w[last] = rest;
        }
        let e = sse(&w);
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            best = Some((e, w));
        }
    }
    // single-column supports are always feasible
    Ok(best.expect("some support is feasible").1)
}

/// Fits the meta model on `forecasts ++ x[original_columns]`: the convex
/// blend margin, then a boosted correction tuned on the residual. Tuning uses
/// the most recent `tune_rows` rows when given.
pub fn fit_meta(
    forecasts: &Matrix,
    data: &TrainData<'_>,
    original_columns: &[usize],
    meta_grid: &HyperGrid,
    k: usize,
    tune_rows: Option<usize>,
    seed: u64,
) -> Result<MetaFit> {
    let weights = convex_blend(forecasts, data.y)?;
    let residual: Vec<f64> = (0..data.rows())
        .map(|i| data.y[i] - forecasts.row(i).iter().zip(&weights).map(|(f, w)| f * w).sum::<f64>())
        .collect();
    let meta_x = forecasts.hstack(&data.x.select_columns(original_columns))?;
    let n = meta_x.rows();
    let start = tune_rows.map_or(0, |cap| n.saturating_sub(cap));
    let tail: Vec<usize> = (start..n).collect();
    let tune_x = meta_x.select_rows(&tail);
    let tune_data = TrainData::new(&tune_x, &residual[start..])?;
    let plan = CvPlan::contiguous(tail.len(), k)?;
    let allowed: Vec<usize> = (0..meta_x.cols()).collect();
    let selection = tune_and_select(meta_grid, &tune_data, &plan, &allowed, seeding::derive(seed, &[1]))?;
    let full = TrainData::new(&meta_x, &residual)?;
    let model = fit_family(&selection.params, &full, &vec![1.0; n], &selection.columns, seeding::derive(seed, &[2]))?;
    let corrects = selection.cv_score.is_some_and(|s| s > 0.0);
    Ok(MetaFit {
        weights,
        model,
        selection,
        corrects,
    })
}

/// Builds the ensemble: out-of-fold base forecasts, a tuned meta model, then
/// every base refit on all rows.
pub fn stack_fit(
    data: &TrainData<'_>,
    plan: &CvPlan,
    bases: &[BaseSpec],
    meta_grid: &HyperGrid,
    tune_rows: Option<usize>,
    seed: u64,
) -> Result<StackedEnsemble> {
    if bases.len() != N_BASES {
        return Err(Error::Config(format!("stacking needs {N_BASES} base models, got {}", bases.len())));
    }
    for (b, f) in bases.iter().zip(Family::ALL) {
        if b.params.family() != f {
            return Err(Error::Config(format!("base order must be LR, SVR, DT, RF, GBDT; found {}", b.params.family())));
        }
    }
    let oof = out_of_fold(data, plan, bases, seeding::derive(seed, &[0]))?;
    let original_columns = union_columns(bases);
    let meta = fit_meta(&oof, data, &original_columns, meta_grid, plan.k, tune_rows, seed)?;
    let w = vec![1.0; data.rows()];
    let refits = par::map(bases.iter().enumerate().collect(), |(b, spec)| {
        fit_family(&spec.params, data, &w, &spec.columns, seeding::derive(seed, &[3, b as u64]))
    });
    Ok(StackedEnsemble {
        n_features: data.x.cols(),
        bases: refits.into_iter().collect::<Result<_>>()?,
        base_columns: bases.iter().map(|b| b.columns.clone()).collect(),
        original_columns,
        meta,
    })
}

impl StackedEnsemble {
    pub fn meta_width(&self) -> usize {
        N_BASES + self.original_columns.len()
    }

    pub fn meta_row(&self, row: &[f64], forecasts: &[f64]) -> Vec<f64> {
        forecasts
            .iter()
            .copied()
            .chain(self.original_columns.iter().map(|&c| row[c]))
            .collect()
    }

    /// Base forecasts in family order and the ensemble forecast.
    pub fn predict_with_bases(&self, row: &[f64]) -> Result<([f64; N_BASES], f64)> {
        if row.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: row.len(),
            });
        }
        let mut f = [0.0; N_BASES];
        for (slot, m) in f.iter_mut().zip(&self.bases) {
            *slot = m.predict_row(row)?;
        }
        let out = self.meta.predict_row(&self.meta_row(row, &f))?;
        Ok((f, out))
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        Ok(self.predict_with_bases(row)?.1)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.iter_rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn summary(&self) -> StackSummary {
        let name = |c: usize| layout_name(&self.original_columns, c);
        StackSummary {
            meta_params: self.meta.selection.params,
            layout: (0..self.meta_width()).map(name).collect(),
            selected: self.meta.selection.columns.iter().map(|&c| name(c)).collect(),
            meta_cv_score: self.meta.selection.cv_score,
            blend_weights: self.meta.weights.clone(),
            corrects: self.meta.corrects,
        }
    }

    /// Whether each base forecast carries blend weight or feeds the
    /// correction trees.
    pub fn base_selected(&self) -> [bool; N_BASES] {
        let cols = &self.meta.selection.columns;
        std::array::from_fn(|b| self.meta.weights[b] > 0.0 || (self.meta.corrects && cols.contains(&b)))
    }

    /// Share of each base forecast in the ensemble: its blend weight.
    pub fn base_importance(&self) -> Result<[f64; N_BASES]> {
        Ok(std::array::from_fn(|b| self.meta.weights[b]))
    }
}
