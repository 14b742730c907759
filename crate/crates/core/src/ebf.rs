//! Empirical Bayesian forests.
//!
//! A shallow trunk is fit once to the unweighted data. Its leaves cut the
//! rows into branches and each branch gets its own Bayesian forest, fit with
//! no shared state, so branches can run on separate workers.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{fit_tree, FitConfig, LeafValue, Tree};
use crate::data::{subset, Dataset, Task};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, Forest, ForestConfig, Predictions};
use crate::weights::{part_seed, WeightVector};

/// Trunk sizing: exactly one of a minimum leaf size or a leaf budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrunkSize {
    MinLeafCount(usize),
    MaxLeaves(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrunkConfig {
    pub size: TrunkSize,
    /// Leaf floor used when sizing by `MaxLeaves`.
    pub base_min_leaf: usize,
}

impl TrunkConfig {
    pub fn min_leaf(count: usize) -> Self {
        TrunkConfig {
            size: TrunkSize::MinLeafCount(count),
            base_min_leaf: 3,
        }
    }

    pub fn max_leaves(leaves: usize) -> Self {
        TrunkConfig {
            size: TrunkSize::MaxLeaves(leaves),
            base_min_leaf: 3,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        match self.size {
            TrunkSize::MinLeafCount(m) => FitConfig::with_min_leaf(m),
            TrunkSize::MaxLeaves(k) => FitConfig {
                max_leaves: Some(k),
                ..FitConfig::with_min_leaf(self.base_min_leaf)
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbfModel {
    pub task: Task,
    pub n_features: usize,
    #[serde(default)]
    pub n_classes: usize,
    pub trunk_config: TrunkConfig,
    pub branch_config: ForestConfig,
    pub trunk: Tree,
    /// Branch forest per trunk leaf id.
    pub branches: BTreeMap<usize, Forest>,
}

const EBF_FORMAT: &str = "bayes-forest/ebf";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EbfDocument {
    format: String,
    version: u32,
    model: EbfModel,
}

impl EbfModel {
    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<LeafValue> {
        let leaf = self.trunk.leaf_id(x)?;
        Ok(self.branch(leaf).predict_row_unchecked(x))
    }

    fn branch(&self, leaf: usize) -> &Forest {
        self.branches.get(&leaf).expect("every trunk leaf has a branch")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&EbfDocument {
            format: EBF_FORMAT.into(),
            version: FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: EbfDocument = serde_json::from_str(s)?;
        if doc.format != EBF_FORMAT || doc.version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported EBF document {} v{}",
                doc.format, doc.version
            )));
        }
        Ok(doc.model)
    }
}

/// Unit-weight CART trunk.
pub fn fit_trunk(dataset: &Dataset, config: &TrunkConfig) -> Result<Tree> {
    fit_tree(dataset, &WeightVector::unit(dataset.n_rows()), &config.fit_config(), None)
}

/// Trunk leaf id of every row.
pub fn route(trunk: &Tree, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
    rows.iter().map(|x| trunk.leaf_id(x)).collect()
}

/// Training rows of each trunk leaf, ascending. Leaves that receive no rows
/// are present with an empty list.
pub fn branch_rows(trunk: &Tree, dataset: &Dataset) -> Result<BTreeMap<usize, Vec<usize>>> {
    let mut out: BTreeMap<usize, Vec<usize>> = trunk.leaf_ids().into_iter().map(|l| (l, Vec::new())).collect();
    for (i, leaf) in route(trunk, &dataset.rows())?.into_iter().enumerate() {
        out.get_mut(&leaf).expect("routed to a leaf").push(i);
    }
    Ok(out)
}

/// Forest configuration of the branch at trunk leaf `leaf_id`.
pub fn branch_forest_config(config: &ForestConfig, leaf_id: usize) -> ForestConfig {
    ForestConfig {
        seed: part_seed(config.seed, leaf_id as u64),
        ..config.clone()
    }
}

/// Builds a model from a trunk and externally fit branch forests.
pub fn assemble_ebf(
    dataset: &Dataset,
    trunk: Tree,
    trunk_config: &TrunkConfig,
    branch_config: &ForestConfig,
    branches: BTreeMap<usize, Forest>,
) -> Result<EbfModel> {
    let leaves = trunk.leaf_ids();
    if leaves.len() != branches.len() || leaves.iter().any(|l| !branches.contains_key(l)) {
        return Err(Error::invalid(format!(
            "trunk has leaves {leaves:?} but branches cover {:?}",
            branches.keys().collect::<Vec<_>>()
        )));
    }
    if let Some(bad) = branches.values().find(|f| f.n_features != dataset.n_features()) {
        return Err(Error::DimensionMismatch {
            expected: dataset.n_features(),
            got: bad.n_features,
        });
    }
    Ok(EbfModel {
        task: dataset.task(),
        n_features: dataset.n_features(),
        n_classes: dataset.n_classes(),
        trunk_config: *trunk_config,
        branch_config: branch_config.clone(),
        trunk,
        branches,
    })
}

/// Fits the trunk, then one Bayesian forest per trunk leaf in parallel.
/// Branch seeds come from the leaf id, so a single-leaf trunk reproduces
/// `fit_forest` exactly.
pub fn fit_ebf(dataset: &Dataset, trunk_config: &TrunkConfig, branch_config: &ForestConfig) -> Result<EbfModel> {
    branch_config.validate(dataset.n_features())?;
    let trunk = fit_trunk(dataset, trunk_config)?;
    let parts: Vec<(usize, Vec<usize>)> = branch_rows(&trunk, dataset)?.into_iter().collect();
    if let Some((leaf, _)) = parts.iter().find(|(_, rows)| rows.is_empty()) {
        return Err(Error::Internal(format!("trunk leaf {leaf} received no rows")));
    }
    let forests = parts
        .par_iter()
        .map(|(leaf, rows)| {
            let data = subset(dataset, rows)?;
            fit_forest(&data, &branch_forest_config(branch_config, *leaf))
        })
        .collect::<Result<Vec<_>>>()?;
    let branches = parts.iter().map(|(leaf, _)| *leaf).zip(forests).collect();
    assemble_ebf(dataset, trunk, trunk_config, branch_config, branches)
}

/// Route each row through the trunk, then predict with its branch forest.
pub fn predict_ebf(model: &EbfModel, rows: &[Vec<f64>]) -> Result<Predictions> {
    if let Some(bad) = rows.iter().find(|r| r.len() != model.n_features) {
        return Err(Error::DimensionMismatch {
            expected: model.n_features,
            got: bad.len(),
        });
    }
    let values: Vec<LeafValue> = rows
        .par_iter()
        .map(|x| model.branch(model.trunk.leaf_id_unchecked(x)).predict_row_unchecked(x))
        .collect();
    Ok(Predictions::from_leaf_values(model.task, model.n_classes, values))
}
