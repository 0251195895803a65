//! The five base regression families behind one [`Model`] type.
//!
//! Every model is trained on full-width rows plus a list of active column
//! indices, so a fitted model can be applied to the same row layout whatever
//! feature subset it was selected with.

pub mod boost;
pub mod forest;
pub mod linear;
pub mod svr;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use boost::{gbdt_fit, BoostParams, BoostedModel};
pub use forest::{rf_fit, ForestModel, ForestParams};
pub use linear::{ols_fit, LinearModel};
pub use svr::{svr_fit, Kernel, SvrModel, SvrParams};
pub use tree::{dt_fit, Criterion, SortedColumns, TreeModel, TreeParams};

use crate::error::{Error, Result};
use crate::features::{FeatureId, N_FEATURES};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "LR")]
    Linear,
    #[serde(rename = "SVR")]
    Svr,
    #[serde(rename = "DT")]
    Tree,
    #[serde(rename = "RF")]
    Forest,
    #[serde(rename = "GBDT")]
    Boosted,
}

impl Family {
    /// Base-model order used everywhere, including the stacking layout.
    pub const ALL: [Family; 5] = [
        Family::Linear,
        Family::Svr,
        Family::Tree,
        Family::Forest,
        Family::Boosted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Linear => "LR",
            Family::Svr => "SVR",
            Family::Tree => "DT",
            Family::Forest => "RF",
            Family::Boosted => "GBDT",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_name(name: &str) -> Option<Family> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum FamilyParams {
    #[serde(rename = "LR")]
    Linear,
    #[serde(rename = "SVR")]
    Svr(SvrParams),
    #[serde(rename = "DT")]
    Tree(TreeParams),
    #[serde(rename = "RF")]
    Forest(ForestParams),
    #[serde(rename = "GBDT")]
    Boosted(BoostParams),
}

impl FamilyParams {
    pub fn family(&self) -> Family {
        match self {
            FamilyParams::Linear => Family::Linear,
            FamilyParams::Svr(_) => Family::Svr,
            FamilyParams::Tree(_) => Family::Tree,
            FamilyParams::Forest(_) => Family::Forest,
            FamilyParams::Boosted(_) => Family::Boosted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "model")]
pub enum Model {
    #[serde(rename = "LR")]
    Linear(LinearModel),
    #[serde(rename = "SVR")]
    Svr(SvrModel),
    #[serde(rename = "DT")]
    Tree(TreeModel),
    #[serde(rename = "RF")]
    Forest(ForestModel),
    #[serde(rename = "GBDT")]
    Boosted(BoostedModel),
}

#[derive(Serialize)]
struct ModelDump<'a> {
    format: &'static str,
    version: u32,
    #[serde(flatten)]
    model: &'a Model,
}

impl Model {
    pub fn family(&self) -> Family {
        match self {
            Model::Linear(_) => Family::Linear,
            Model::Svr(_) => Family::Svr,
            Model::Tree(_) => Family::Tree,
            Model::Forest(_) => Family::Forest,
            Model::Boosted(_) => Family::Boosted,
        }
    }

    /// Row width the model was trained on.
    pub fn n_features(&self) -> usize {
        match self {
            Model::Linear(m) => m.n_features,
            Model::Svr(m) => m.n_features,
            Model::Tree(m) => m.n_features,
            Model::Forest(m) => m.n_features,
            Model::Boosted(m) => m.n_features,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        Ok(self.predict_unchecked(row))
    }

    fn predict_unchecked(&self, row: &[f64]) -> f64 {
        match self {
            Model::Linear(m) => m.predict_row(row),
            Model::Svr(m) => m.predict_row(row),
            Model::Tree(m) => m.predict_row(row),
            Model::Forest(m) => m.predict_row(row),
            Model::Boosted(m) => m.predict_row(row),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: x.cols(),
            });
        }
        Ok(x.iter_rows().map(|r| self.predict_unchecked(r)).collect())
    }

    /// Split improvement per column, normalized to sum to 1 (all zeros when
    /// the model never split).
    pub fn feature_importance(&self) -> Result<Vec<f64>> {
        let raw = match self {
            Model::Linear(_) => return Err(Error::ImportanceUnsupported("LR")),
            Model::Svr(_) => return Err(Error::ImportanceUnsupported("SVR")),
            Model::Tree(m) => m.raw_importance(),
            Model::Forest(m) => m.raw_importance(),
            Model::Boosted(m) => m.raw_importance(),
        };
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            Ok(raw.iter().map(|v| v / total).collect())
        } else {
            Ok(vec![0.0; raw.len()])
        }
    }

    /// Importance keyed by feature, for models trained on the feature layout.
    pub fn importance_by_feature(&self) -> Result<BTreeMap<FeatureId, f64>> {
        let imp = self.feature_importance()?;
        if imp.len() != N_FEATURES {
            return Err(Error::DimensionMismatch {
                expected: N_FEATURES,
                got: imp.len(),
            });
        }
        Ok(FeatureId::ALL.into_iter().zip(imp).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDump {
            format: "sessioncast-model",
            version: 1,
            model: self,
        })?)
    }
}

/// A training matrix with targets and lazily built per-column orderings that
/// every tree fit on this matrix shares.
#[derive(Debug)]
pub struct TrainData<'a> {
    pub x: &'a Matrix,
    pub y: &'a [f64],
    sorted: OnceLock<SortedColumns>,
}

impl<'a> TrainData<'a> {
    pub fn new(x: &'a Matrix, y: &'a [f64]) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Data(format!(
                "{} targets for {} rows",
                y.len(),
                x.rows()
            )));
        }
        Ok(Self {
            x,
            y,
            sorted: OnceLock::new(),
        })
    }

    pub fn sorted(&self) -> &SortedColumns {
        self.sorted.get_or_init(|| SortedColumns::new(self.x))
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }
}

/// Fits one model on the rows with positive weight, using only `features`.
pub fn fit_family(params: &FamilyParams, data: &TrainData<'_>, w: &[f64], features: &[usize], seed: u64) -> Result<Model> {
    if w.len() != data.rows() {
        return Err(Error::Data(format!("{} weights for {} rows", w.len(), data.rows())));
    }
    if let Some(&c) = features.iter().find(|&&c| c >= data.x.cols()) {
        return Err(Error::DimensionMismatch {
            expected: data.x.cols(),
            got: c + 1,
        });
    }
    let grow_input = || tree::GrowInput {
        x: data.x,
        sorted: data.sorted(),
        y: data.y,
        w,
        features,
    };
    Ok(match params {
        FamilyParams::Linear => Model::Linear(linear::fit(data.x, data.y, w, features)?),
        FamilyParams::Svr(p) => Model::Svr(svr::fit(data.x, data.y, w, features, p, seed)?),
        FamilyParams::Tree(p) => Model::Tree(tree::grow(grow_input(), p, 0.0)?),
        FamilyParams::Forest(p) => Model::Forest(forest::fit(grow_input(), p, seed)?),
        FamilyParams::Boosted(p) => Model::Boosted(boost::fit(grow_input(), p, seed)?),
    })
}
