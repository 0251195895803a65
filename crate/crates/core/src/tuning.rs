//! Grid-search hyperparameter tuning and sequential floating backward feature
//! selection, both scored by mean out-of-fold R² over contiguous folds.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureId, FeatureMask, N_FEATURES};
use crate::metrics::r2_score;
use crate::par;
use crate::regressors::svr::DEFAULT_ROW_CAP;
use crate::regressors::{
    fit_family, BoostParams, Criterion, Family, FamilyParams, ForestParams, Kernel, SvrParams, TrainData, TreeParams,
};
use crate::seeding;

pub const DEFAULT_FOLDS: usize = 5;
/// Strata with fewer training rows skip feature selection and use the first
/// value of every grid list.
pub const MIN_TUNING_ROWS: usize = 50;

/// Contiguous, time-ordered folds over `n` rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvPlan {
    pub k: usize,
    /// Half-open row ranges, one per fold.
    pub folds: Vec<(usize, usize)>,
}

impl CvPlan {
    pub fn contiguous(n: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {k}")));
        }
        if n < k {
            return Err(Error::Data(format!("{n} rows cannot fill {k} folds")));
        }
        let folds = (0..k).map(|f| (f * n / k, (f + 1) * n / k)).collect();
        Ok(Self { k, folds })
    }

    pub fn n_rows(&self) -> usize {
        self.folds.last().map_or(0, |f| f.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridProfile {
    /// Every value of every list.
    Full,
    /// The first two values of every list.
    Fast,
}

/// Candidate values per hyperparameter. Enumeration is cartesian with the
/// first listed parameter varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum HyperGrid {
    #[serde(rename = "LR")]
    Linear,
    #[serde(rename = "SVR")]
    Svr {
        c: Vec<f64>,
        gamma: Vec<f64>,
        kernel: Vec<Kernel>,
        epsilon: Vec<f64>,
        row_cap: usize,
    },
    #[serde(rename = "DT")]
    Tree {
        max_depth: Vec<usize>,
        min_samples_split: Vec<usize>,
        min_samples_leaf: Vec<usize>,
        criterion: Vec<Criterion>,
    },
    #[serde(rename = "RF")]
    Forest {
        n_trees: Vec<usize>,
        max_depth: Vec<usize>,
        min_samples_split: Vec<usize>,
        min_samples_leaf: Vec<usize>,
    },
    #[serde(rename = "GBDT")]
    Boosted {
        n_rounds: Vec<usize>,
        learning_rate: Vec<f64>,
        max_depth: Vec<usize>,
        subsample: Vec<f64>,
        colsample: Vec<f64>,
        min_split_loss: Vec<f64>,
    },
}

fn first<T: Clone>(v: &[T], n: usize) -> Vec<T> {
    v.iter().take(n).cloned().collect()
}

impl HyperGrid {
    /// The complete published search space for a family.
    pub fn table(family: Family) -> Self {
        match family {
            Family::Linear => HyperGrid::Linear,
            Family::Svr => HyperGrid::Svr {
                c: vec![1.0, 10.0, 100.0, 1000.0],
                gamma: vec![0.01, 0.1, 1.0, 10.0],
                kernel: vec![Kernel::Rbf, Kernel::Linear],
                epsilon: vec![0.01, 0.1, 0.5, 1.0],
                row_cap: DEFAULT_ROW_CAP,
            },
            Family::Tree => HyperGrid::Tree {
                max_depth: (1..=19).collect(),
                min_samples_split: (2..=19).collect(),
                min_samples_leaf: vec![1, 2, 4, 6],
                criterion: vec![Criterion::SquaredError, Criterion::FriedmanMse, Criterion::AbsoluteError],
            },
            Family::Forest => HyperGrid::Forest {
                n_trees: vec![50, 75, 100, 150, 200, 250, 300],
                max_depth: (2..=6).collect(),
                min_samples_split: (2..=6).collect(),
                min_samples_leaf: (1..=5).collect(),
            },
            Family::Boosted => HyperGrid::Boosted {
                n_rounds: vec![25, 50, 100, 150, 200],
                learning_rate: vec![0.01, 0.1, 0.2],
                max_depth: (2..=5).collect(),
                subsample: vec![0.8, 0.9, 1.0],
                colsample: vec![0.8, 0.9, 1.0],
                min_split_loss: vec![0.0, 0.1, 0.2, 0.5],
            },
        }
    }

    pub fn for_profile(family: Family, profile: GridProfile) -> Self {
        match profile {
            GridProfile::Full => Self::table(family),
            GridProfile::Fast => Self::table(family).truncated(2),
        }
    }

    /// Keeps the first `n` values of every list.
    pub fn truncated(&self, n: usize) -> Self {
        match self {
            HyperGrid::Linear => HyperGrid::Linear,
            HyperGrid::Svr {
                c,
                gamma,
                kernel,
                epsilon,
                row_cap,
            } => HyperGrid::Svr {
                c: first(c, n),
                gamma: first(gamma, n),
                kernel: first(kernel, n),
                epsilon: first(epsilon, n),
                row_cap: *row_cap,
            },
            HyperGrid::Tree {
                max_depth,
                min_samples_split,
                min_samples_leaf,
                criterion,
            } => HyperGrid::Tree {
                max_depth: first(max_depth, n),
                min_samples_split: first(min_samples_split, n),
                min_samples_leaf: first(min_samples_leaf, n),
                criterion: first(criterion, n),
            },
            HyperGrid::Forest {
                n_trees,
                max_depth,
                min_samples_split,
                min_samples_leaf,
            } => HyperGrid::Forest {
                n_trees: first(n_trees, n),
                max_depth: first(max_depth, n),
                min_samples_split: first(min_samples_split, n),
                min_samples_leaf: first(min_samples_leaf, n),
            },
            HyperGrid::Boosted {
                n_rounds,
                learning_rate,
                max_depth,
                subsample,
                colsample,
                min_split_loss,
            } => HyperGrid::Boosted {
                n_rounds: first(n_rounds, n),
                learning_rate: first(learning_rate, n),
                max_depth: first(max_depth, n),
                subsample: first(subsample, n),
                colsample: first(colsample, n),
                min_split_loss: first(min_split_loss, n),
            },
        }
    }

    pub fn with_svr_row_cap(mut self, cap: usize) -> Self {
        if let HyperGrid::Svr { row_cap, .. } = &mut self {
            *row_cap = cap;
        }
        self
    }

    pub fn family(&self) -> Family {
        match self {
            HyperGrid::Linear => Family::Linear,
            HyperGrid::Svr { .. } => Family::Svr,
            HyperGrid::Tree { .. } => Family::Tree,
            HyperGrid::Forest { .. } => Family::Forest,
            HyperGrid::Boosted { .. } => Family::Boosted,
        }
    }

    pub fn candidates(&self) -> Vec<FamilyParams> {
        let mut out = Vec::new();
        match self {
            HyperGrid::Linear => out.push(FamilyParams::Linear),
            HyperGrid::Svr {
                c,
                gamma,
                kernel,
                epsilon,
                row_cap,
            } => {
                for &c in c {
                    for &gamma in gamma {
                        for &kernel in kernel {
                            for &epsilon in epsilon {
                                out.push(FamilyParams::Svr(SvrParams {
                                    c,
                                    gamma,
                                    epsilon,
                                    kernel,
                                    row_cap: *row_cap,
                                }));
                            }
                        }
                    }
                }
            }
            HyperGrid::Tree {
                max_depth,
                min_samples_split,
                min_samples_leaf,
                criterion,
            } => {
                for &d in max_depth {
                    for &s in min_samples_split {
                        for &l in min_samples_leaf {
                            for &criterion in criterion {
                                out.push(FamilyParams::Tree(TreeParams {
                                    criterion,
                                    max_depth: Some(d),
                                    min_samples_split: s,
                                    min_samples_leaf: l,
                                }));
                            }
                        }
                    }
                }
            }
            HyperGrid::Forest {
                n_trees,
                max_depth,
                min_samples_split,
                min_samples_leaf,
            } => {
                for &t in n_trees {
                    for &d in max_depth {
                        for &s in min_samples_split {
                            for &l in min_samples_leaf {
                                out.push(FamilyParams::Forest(ForestParams {
                                    n_trees: t,
                                    max_depth: Some(d),
                                    min_samples_split: s,
                                    min_samples_leaf: l,
                                    bootstrap: true,
                                }));
                            }
                        }
                    }
                }
            }
            HyperGrid::Boosted {
                n_rounds,
                learning_rate,
                max_depth,
                subsample,
                colsample,
                min_split_loss,
            } => {
                for &r in n_rounds {
                    for &eta in learning_rate {
                        for &d in max_depth {
                            for &ss in subsample {
                                for &cs in colsample {
                                    for &g in min_split_loss {
                                        out.push(FamilyParams::Boosted(BoostParams {
                                            n_rounds: r,
                                            learning_rate: eta,
                                            max_depth: Some(d),
                                            subsample: ss,
                                            colsample: cs,
                                            min_split_loss: g,
                                        }));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.candidates().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameters that produce the same model map to the same key, so duplicate
/// grid points (e.g. gamma under a linear kernel) are fitted once.
fn canonical_key(p: &FamilyParams) -> String {
    let mut p = *p;
    if let FamilyParams::Svr(s) = &mut p {
        if s.kernel == Kernel::Linear {
            s.gamma = 0.0;
        }
    }
    serde_json::to_string(&p).unwrap_or_default()
}

/// Mean out-of-fold R² of `params` restricted to `columns`.
pub fn cv_score(params: &FamilyParams, data: &TrainData<'_>, plan: &CvPlan, columns: &[usize], seed: u64) -> Result<f64> {
    if plan.n_rows() != data.rows() {
        return Err(Error::Data(format!(
            "fold plan covers {} rows, data has {}",
            plan.n_rows(),
            data.rows()
        )));
    }
    let mut total = 0.0;
    let mut w = vec![1.0; data.rows()];
    for (f, &(lo, hi)) in plan.folds.iter().enumerate() {
        w.iter_mut().for_each(|v| *v = 1.0);
        w[lo..hi].iter_mut().for_each(|v| *v = 0.0);
        let model = fit_family(params, data, &w, columns, seeding::derive(seed, &[f as u64]))?;
        let pred: Vec<f64> = (lo..hi)
            .map(|i| model.predict_row(data.x.row(i)))
            .collect::<Result<_>>()?;
        total += r2_score(&data.y[lo..hi], &pred)?;
    }
    Ok(total / plan.k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: FamilyParams,
    pub score: f64,
    /// One score per candidate, in enumeration order.
    pub scores: Vec<f64>,
}

pub fn grid_search(grid: &HyperGrid, data: &TrainData<'_>, plan: &CvPlan, columns: &[usize], seed: u64) -> Result<GridResult> {
    let candidates = grid.candidates();
    if candidates.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    if data.rows() < plan.k {
        return Err(Error::Data(format!("{} rows for {} folds", data.rows(), plan.k)));
    }
    let mut unique: BTreeMap<String, usize> = BTreeMap::new();
    let mut jobs = Vec::new();
    let slots: Vec<usize> = candidates
        .iter()
        .map(|p| {
            let next = jobs.len();
            *unique.entry(canonical_key(p)).or_insert_with(|| {
                jobs.push(*p);
                next
            })
        })
        .collect();
    let results = par::map(jobs, |p| cv_score(&p, data, plan, columns, seed));
    let unique_scores: Vec<f64> = results.into_iter().collect::<Result<_>>()?;
    let scores: Vec<f64> = slots.iter().map(|&s| unique_scores[s]).collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(GridResult {
        best: candidates[best],
        score: scores[best],
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Start,
    Exclude,
    Include,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfbsStep {
    pub kind: StepKind,
    /// Column removed or re-added; absent for the starting point.
    pub column: Option<usize>,
    pub columns: Vec<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfbsOutcome {
    pub columns: Vec<usize>,
    pub score: f64,
    pub full_score: f64,
    /// Accepted steps in order.
    pub trajectory: Vec<SfbsStep>,
}

fn bits_of(columns: &[usize]) -> u64 {
    columns.iter().fold(0, |m, &c| m | (1 << c))
}

fn columns_of(bits: u64) -> Vec<usize> {
    (0..64).filter(|c| bits & (1 << c) != 0).collect()
}

/// Sequential floating backward selection over `allowed` columns. The
/// returned subset is the best-scoring one met along the accepted steps
/// (smaller subsets win ties), so it never scores below the full set.
pub fn sfbs(params: &FamilyParams, data: &TrainData<'_>, plan: &CvPlan, allowed: &[usize], seed: u64) -> Result<SfbsOutcome> {
    if allowed.iter().any(|&c| c >= 64) {
        return Err(Error::Config("feature selection supports at most 64 columns".into()));
    }
    let score_of = |bits: u64| cv_score(params, data, plan, &columns_of(bits), seed);
    let mut current = bits_of(allowed);
    let mut score = score_of(current)?;
    let full_score = score;
    let mut trajectory = vec![SfbsStep {
        kind: StepKind::Start,
        column: None,
        columns: columns_of(current),
        score,
    }];
    let mut visited: HashSet<u64> = HashSet::from([current]);
    let mut dropped: Vec<usize> = Vec::new();

    while current.count_ones() > 1 {
        let options: Vec<(usize, u64)> = columns_of(current)
            .into_iter()
            .map(|c| (c, current & !(1 << c)))
            .filter(|(_, m)| !visited.contains(m))
            .collect();
        let Some((col, mask, s)) = best_move(options, &score_of)? else {
            break;
        };
        if s < score {
            break;
        }
        current = mask;
        score = s;
        visited.insert(mask);
        dropped.push(col);
        trajectory.push(SfbsStep {
            kind: StepKind::Exclude,
            column: Some(col),
            columns: columns_of(mask),
            score,
        });
        loop {
            let options: Vec<(usize, u64)> = dropped
                .iter()
                .map(|&c| (c, current | (1 << c)))
                .filter(|(_, m)| !visited.contains(m))
                .collect();
            let Some((col, mask, s)) = best_move(options, &score_of)? else {
                break;
            };
            if s <= score {
                break;
            }
            current = mask;
            score = s;
            visited.insert(mask);
            dropped.retain(|&c| c != col);
            trajectory.push(SfbsStep {
                kind: StepKind::Include,
                column: Some(col),
                columns: columns_of(mask),
                score,
            });
        }
    }

    let mut best = &trajectory[0];
    for step in &trajectory[1..] {
        if step.score > best.score || (step.score == best.score && step.columns.len() < best.columns.len()) {
            best = step;
        }
    }
    Ok(SfbsOutcome {
        columns: best.columns.clone(),
        score: best.score,
        full_score,
        trajectory,
    })
}

/// Highest-scoring move; ties go to the lowest column index.
fn best_move<F>(mut options: Vec<(usize, u64)>, score_of: &F) -> Result<Option<(usize, u64, f64)>>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    options.sort_unstable();
    let masks: Vec<u64> = options.iter().map(|o| o.1).collect();
    let scores: Vec<f64> = par::map(masks, score_of).into_iter().collect::<Result<_>>()?;
    let mut best: Option<(usize, u64, f64)> = None;
    for ((c, m), s) in options.into_iter().zip(scores) {
        if best.is_none_or(|b| s > b.2) {
            best = Some((c, m, s));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub family: Family,
    pub params: FamilyParams,
    pub columns: Vec<usize>,
    /// CV R² of the final params on the final columns; absent when there were
    /// too few rows to cross-validate.
    pub cv_score: Option<f64>,
    /// Best grid point and score on the full allowed set.
    pub initial_params: FamilyParams,
    pub initial_score: Option<f64>,
    pub trajectory: Vec<SfbsStep>,
    /// The stratum was too small for a full search: first grid values and
    /// no feature selection.
    pub reduced: bool,
}

impl SelectionResult {
    /// Selected columns as a feature mask; columns past the feature layout
    /// are ignored.
    pub fn mask(&self) -> FeatureMask {
        FeatureMask::from_ids(self.columns.iter().filter_map(|&c| FeatureId::from_index(c)))
    }

    pub fn selection_flags(&self) -> [bool; N_FEATURES] {
        let mask = self.mask();
        FeatureId::ALL.map(|f| mask.contains(f))
    }
}

/// Grid search on all allowed columns, feature selection with the winning
/// params, then a second grid search on the selected columns.
pub fn tune_and_select(grid: &HyperGrid, data: &TrainData<'_>, plan: &CvPlan, allowed: &[usize], seed: u64) -> Result<SelectionResult> {
    let family = grid.family();
    if data.rows() < MIN_TUNING_ROWS || allowed.len() < 2 {
        let reduced = data.rows() < MIN_TUNING_ROWS;
        let small = if reduced { grid.truncated(1) } else { grid.clone() };
        let (params, score) = if data.rows() >= plan.k {
            let r = grid_search(&small, data, plan, allowed, seed)?;
            (r.best, Some(r.score))
        } else {
            (small.candidates()[0], None)
        };
        return Ok(SelectionResult {
            family,
            params,
            columns: allowed.to_vec(),
            cv_score: score,
            initial_params: params,
            initial_score: score,
            trajectory: Vec::new(),
            reduced,
        });
    }
    let pass1 = grid_search(grid, data, plan, allowed, seed)?;
    let selection = sfbs(&pass1.best, data, plan, allowed, seed)?;
    let pass3 = grid_search(grid, data, plan, &selection.columns, seed)?;
    Ok(SelectionResult {
        family,
        params: pass3.best,
        columns: selection.columns,
        cv_score: Some(pass3.score),
        initial_params: pass1.best,
        initial_score: Some(pass1.score),
        trajectory: selection.trajectory,
        reduced: false,
    })
}
