use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, GrowInput, SortedColumns, TreeModel, TreeParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Resample rows with replacement for each tree. Disabling it is a test hook.
    #[serde(default = "yes")]
    pub bootstrap: bool,
}

fn yes() -> bool {
    true
}

impl ForestParams {
    fn tree_params(&self) -> TreeParams {
        TreeParams {
            criterion: Criterion::SquaredError,
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            min_samples_leaf: self.min_samples_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub trees: Vec<TreeModel>,
    pub tree_seeds: Vec<u64>,
}

impl ForestModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn raw_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for t in &self.trees {
            for (a, b) in imp.iter_mut().zip(t.raw_importance()) {
                *a += b;
            }
        }
        imp
    }
}

/// Bootstrap-aggregated trees. Every split considers all `features`.
pub(crate) fn fit(input: GrowInput<'_>, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    if params.n_trees == 0 {
        return Err(Error::Hyperparameter("a forest needs at least one tree".into()));
    }
    let active: Vec<usize> = (0..input.w.len()).filter(|&i| input.w[i] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::Data("forest training set is empty".into()));
    }
    let tree_params = params.tree_params();
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut tree_seeds = Vec::with_capacity(params.n_trees);
    let mut counts = vec![0.0; input.w.len()];
    for t in 0..params.n_trees {
        let tree_seed = seeding::derive(seed, &[t as u64]);
        let weights: &[f64] = if params.bootstrap {
            counts.iter_mut().for_each(|c| *c = 0.0);
            let mut rng = seeding::rng(tree_seed);
            for _ in 0..active.len() {
                let r = active[rng.random_range(0..active.len())];
                counts[r] += input.w[r];
            }
            &counts
        } else {
            input.w
        };
        trees.push(grow(GrowInput { w: weights, ..input }, &tree_params, 0.0)?);
        tree_seeds.push(tree_seed);
    }
    Ok(ForestModel {
        n_features: input.x.cols(),
        trees,
        tree_seeds,
    })
}

/// Fits a forest on every column of `x`.
pub fn rf_fit(x: &Matrix, y: &[f64], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let sorted = SortedColumns::new(x);
    let w = vec![1.0; x.rows()];
    let features: Vec<usize> = (0..x.cols()).collect();
    fit(
        GrowInput {
            x,
            sorted: &sorted,
            y,
            w: &w,
            features: &features,
        },
        params,
        seed,
    )
}
