use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, GrowInput, SortedColumns, TreeModel, TreeParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    /// Fraction of rows drawn for each round.
    pub subsample: f64,
    /// Fraction of columns drawn for each tree.
    pub colsample: f64,
    /// Minimum squared-error reduction needed to keep a split.
    pub min_split_loss: f64,
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Hyperparameter(m.to_string()));
        if self.n_rounds == 0 {
            return bad("boosting needs at least one round");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        if !(self.colsample > 0.0 && self.colsample <= 1.0) {
            return bad("colsample must be in (0, 1]");
        }
        if !(self.min_split_loss >= 0.0) {
            return bad("min_split_loss must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub n_features: usize,
    /// Weighted training mean; the prediction before any tree.
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<TreeModel>,
    /// Weighted training MSE after each round.
    pub train_mse: Vec<f64>,
}

impl BoostedModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_score
            + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
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

/// Squared-error gradient boosting: each round fits a depth-limited tree to the
/// current residuals on a seeded row and column subsample.
pub(crate) fn fit(input: GrowInput<'_>, params: &BoostParams, seed: u64) -> Result<BoostedModel> {
    params.validate()?;
    let GrowInput { x, y, w, features, .. } = input;
    let active: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    if active.is_empty() || features.is_empty() {
        return Err(Error::Data("boosting needs rows and at least one feature".into()));
    }
    let total_w: f64 = active.iter().map(|&i| w[i]).sum();
    let base_score = active.iter().map(|&i| w[i] * y[i]).sum::<f64>() / total_w;
    let tree_params = TreeParams {
        criterion: Criterion::SquaredError,
        max_depth: params.max_depth,
        min_samples_split: 2,
        min_samples_leaf: 1,
    };
    let n_cols = ((params.colsample * features.len() as f64).round() as usize).clamp(1, features.len());

    let mut residual: Vec<f64> = y.iter().map(|v| v - base_score).collect();
    let mut round_w = vec![0.0; w.len()];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut train_mse = Vec::with_capacity(params.n_rounds);
    for round in 0..params.n_rounds {
        let mut rng = seeding::rng(seeding::derive(seed, &[round as u64]));
        let mut kept = 0;
        for &i in &active {
            let keep = params.subsample >= 1.0 || rng.random::<f64>() < params.subsample;
            round_w[i] = if keep { w[i] } else { 0.0 };
            kept += keep as usize;
        }
        if kept == 0 {
            active.iter().for_each(|&i| round_w[i] = w[i]);
        }
        let cols: Vec<usize> = if n_cols == features.len() {
            features.to_vec()
        } else {
            let mut c: Vec<usize> = sample(&mut rng, features.len(), n_cols)
                .into_iter()
                .map(|k| features[k])
                .collect();
            c.sort_unstable();
            c
        };
        let tree = grow(
            GrowInput {
                y: &residual,
                w: &round_w,
                features: &cols,
                ..input
            },
            &tree_params,
            params.min_split_loss,
        )?;
        for i in 0..x.rows() {
            residual[i] -= params.learning_rate * tree.predict_row(x.row(i));
        }
        let sse: f64 = active.iter().map(|&i| w[i] * residual[i] * residual[i]).sum();
        train_mse.push(sse / total_w);
        trees.push(tree);
    }
    Ok(BoostedModel {
        n_features: x.cols(),
        base_score,
        learning_rate: params.learning_rate,
        trees,
        train_mse,
    })
}

/// Fits a boosted model on every column of `x`.
pub fn gbdt_fit(x: &Matrix, y: &[f64], params: &BoostParams, seed: u64) -> Result<BoostedModel> {
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

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BoostParams {
        BoostParams {
            n_rounds: 30,
            learning_rate: 0.2,
            max_depth: Some(2),
            subsample: 1.0,
            colsample: 1.0,
            min_split_loss: 0.0,
        }
    }

    fn fixture() -> (Matrix, Vec<f64>) {
        let rows: Vec<[f64; 3]> = (0..60)
            .map(|i| [(i % 9) as f64, ((i * 7) % 13) as f64, (i % 2) as f64])
            .collect();
        let y = rows
            .iter()
            .map(|r| (r[0] - 4.0).powi(2) + 3.0 * r[2] - 0.5 * r[1])
            .collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn training_loss_never_increases_without_subsampling() {
        let (x, y) = fixture();
        let m = gbdt_fit(&x, &y, &params(), 3).unwrap();
        for w in m.train_mse.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn invalid_hyperparameters() {
        let (x, y) = fixture();
        for p in [
            BoostParams { n_rounds: 0, ..params() },
            BoostParams { learning_rate: 0.0, ..params() },
            BoostParams { learning_rate: 1.5, ..params() },
            BoostParams { subsample: 0.0, ..params() },
            BoostParams { colsample: 1.2, ..params() },
        ] {
            assert!(matches!(gbdt_fit(&x, &y, &p, 1), Err(Error::Hyperparameter(_))));
        }
    }

    #[test]
    fn seeded_subsampling_is_reproducible() {
        let (x, y) = fixture();
        let p = BoostParams {
            subsample: 0.8,
            colsample: 0.67,
            ..params()
        };
        assert_eq!(gbdt_fit(&x, &y, &p, 11).unwrap(), gbdt_fit(&x, &y, &p, 11).unwrap());
        assert_ne!(gbdt_fit(&x, &y, &p, 11).unwrap(), gbdt_fit(&x, &y, &p, 12).unwrap());
    }

    #[test]
    fn large_split_loss_prunes_everything() {
        let (x, y) = fixture();
        let p = BoostParams {
            min_split_loss: 1e12,
            ..params()
        };
        let m = gbdt_fit(&x, &y, &p, 1).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((m.predict_row(x.row(0)) - mean).abs() < 1e-9);
    }
}
