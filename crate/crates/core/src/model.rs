//! Model specifications shared by the experiment harness and the CLI.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cart::{fit_tree, FitConfig, Tree};
use crate::data::{Dataset, Task};
use crate::ebf::{fit_ebf, predict_ebf, EbfModel, TrunkConfig};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, fit_ssf, predict_forest, Forest, ForestConfig, Predictions};
use crate::weights::{derive_seed, WeightMode, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Single unweighted CART tree.
    Dt,
    /// Bayesian forest.
    Bf,
    /// Random forest (bootstrap counts).
    Rf,
    /// Empirical Bayesian forest.
    Ebf,
    /// Sub-sample forest.
    Ssf,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dt" | "cart" => Ok(ModelKind::Dt),
            "bf" => Ok(ModelKind::Bf),
            "rf" => Ok(ModelKind::Rf),
            "ebf" => Ok(ModelKind::Ebf),
            "ssf" => Ok(ModelKind::Ssf),
            other => Err(Error::invalid(format!("unknown model kind '{other}'"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Dt => "DT",
            ModelKind::Bf => "BF",
            ModelKind::Rf => "RF",
            ModelKind::Ebf => "EBF",
            ModelKind::Ssf => "SSF",
        })
    }
}

/// Hyperparameters of one model. Defaults: min leaf 3, 100 trees, a
/// five-leaf EBF trunk and five SSF chunks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    pub n_trees: usize,
    pub tree: FitConfig,
    /// Weight mode of EBF branch forests.
    pub branch_mode: WeightMode,
    pub trunk: TrunkConfig,
    pub chunks: usize,
    /// Overrides the experiment's master seed for this model.
    pub seed: Option<u64>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            name: kind.to_string(),
            kind,
            n_trees: 100,
            tree: FitConfig::default(),
            branch_mode: WeightMode::Exponential,
            trunk: TrunkConfig::max_leaves(5),
            chunks: 5,
            seed: None,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.n_trees = n_trees;
        self
    }

    pub fn with_trunk(mut self, trunk: TrunkConfig) -> Self {
        self.trunk = trunk;
        self
    }

    pub fn forest_config(&self, seed: u64) -> ForestConfig {
        let weight_mode = match self.kind {
            ModelKind::Dt => WeightMode::Unit,
            ModelKind::Rf => WeightMode::Multinomial,
            ModelKind::Ebf => self.branch_mode,
            ModelKind::Bf | ModelKind::Ssf => WeightMode::Exponential,
        };
        ForestConfig {
            n_trees: self.n_trees,
            weight_mode,
            tree: self.tree.clone(),
            seed,
        }
    }

    /// Fits on `data` with the given seed.
    pub fn fit(&self, data: &Dataset, seed: u64) -> Result<Model> {
        Ok(match self.kind {
            ModelKind::Dt => Model::Tree(fit_tree(data, &WeightVector::unit(data.n_rows()), &self.tree, None)?),
            ModelKind::Bf | ModelKind::Rf => Model::Forest(fit_forest(data, &self.forest_config(seed))?),
            ModelKind::Ssf => Model::Forest(fit_ssf(
                data,
                self.chunks,
                &self.forest_config(seed),
                derive_seed(seed, u64::MAX),
            )?),
            ModelKind::Ebf => Model::Ebf(fit_ebf(data, &self.trunk, &self.forest_config(seed))?),
        })
    }
}

/// A fitted model of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Tree(Tree),
    Forest(Forest),
    Ebf(EbfModel),
}

impl Model {
    pub fn n_features(&self) -> usize {
        match self {
            Model::Tree(t) => t.n_features,
            Model::Forest(f) => f.n_features,
            Model::Ebf(m) => m.n_features,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Model::Tree(t) => t.task,
            Model::Forest(f) => f.task,
            Model::Ebf(m) => m.task,
        }
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Predictions> {
        match self {
            Model::Tree(t) => {
                let values = rows
                    .iter()
                    .map(|x| t.predict(x).cloned())
                    .collect::<Result<Vec<_>>>()?;
                Ok(Predictions::from_leaf_values(t.task, t.n_classes, values))
            }
            Model::Forest(f) => predict_forest(f, rows),
            Model::Ebf(m) => predict_ebf(m, rows),
        }
    }
}
