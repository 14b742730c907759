//! Tree ensembles: Bayesian forests (exponential weights), random forests
//! (multinomial weights) and sub-sample forests.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{argmax, fit_tree_sorted, FitConfig, LeafValue, SortedColumns, Tree};
use crate::data::{near_equal_chunks, subset, Dataset, Task};
use crate::error::{Error, Result};
use crate::weights::{derive_seed, draw_weights_with, part_seed, rng_from_seed, WeightMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub weight_mode: WeightMode,
    pub tree: FitConfig,
    pub seed: u64,
}

impl ForestConfig {
    /// Bayesian forest with the usual defaults: 100 trees, min leaf 3.
    pub fn bayesian(seed: u64) -> Self {
        ForestConfig {
            n_trees: 100,
            weight_mode: WeightMode::Exponential,
            tree: FitConfig::default(),
            seed,
        }
    }

    pub fn with_mode(mut self, mode: WeightMode) -> Self {
        self.weight_mode = mode;
        self
    }

    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.n_trees = n_trees;
        self
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("a forest needs at least one tree"));
        }
        self.tree.validate(n_features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub task: Task,
    pub n_features: usize,
    #[serde(default)]
    pub n_classes: usize,
    pub config: ForestConfig,
    /// Number of disjoint data chunks the trees were fit on (1 unless SSF).
    pub chunks: usize,
    pub seeds: Vec<u64>,
    pub trees: Vec<Tree>,
}

const FOREST_FORMAT: &str = "bayes-forest/forest";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ForestDocument {
    format: String,
    version: u32,
    #[serde(flatten)]
    forest: Forest,
}

/// Batch predictions: means for regression, averaged class proportions for
/// classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predictions {
    Real(Vec<f64>),
    Proportions(Vec<Vec<f64>>),
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Real(v) => v.len(),
            Predictions::Proportions(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Argmax class per row, lowest index on ties.
    pub fn labels(&self) -> Vec<usize> {
        match self {
            Predictions::Real(v) => v.iter().map(|&x| x.round().max(0.0) as usize).collect(),
            Predictions::Proportions(p) => p.iter().map(|row| argmax(row)).collect(),
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Predictions::Real(v) => Some(v),
            Predictions::Proportions(_) => None,
        }
    }

    pub(crate) fn from_leaf_values(task: Task, n_classes: usize, rows: Vec<LeafValue>) -> Self {
        match task {
            Task::Regression => Predictions::Real(rows.into_iter().map(|v| v.value()).collect()),
            Task::Classification => Predictions::Proportions(
                rows.into_iter()
                    .map(|v| match v {
                        LeafValue::Proportions(p) => p,
                        LeafValue::Mean(_) => vec![0.0; n_classes],
                    })
                    .collect(),
            ),
        }
    }
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Average of the tree predictions at `x`.
    pub fn predict_row(&self, x: &[f64]) -> Result<LeafValue> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.predict_row_unchecked(x))
    }

    pub(crate) fn predict_row_unchecked(&self, x: &[f64]) -> LeafValue {
        let b = self.trees.len() as f64;
        match self.task {
            Task::Regression => {
                let mut sum = 0.0;
                for t in &self.trees {
                    sum += t.nodes[t.leaf_id_unchecked(x)].leaf_value().expect("leaf").value();
                }
                LeafValue::Mean(sum / b)
            }
            Task::Classification => {
                let mut acc = vec![0.0; self.n_classes];
                for t in &self.trees {
                    if let Some(LeafValue::Proportions(p)) = t.nodes[t.leaf_id_unchecked(x)].leaf_value() {
                        for (a, v) in acc.iter_mut().zip(p) {
                            *a += v;
                        }
                    }
                }
                acc.iter_mut().for_each(|a| *a /= b);
                LeafValue::Proportions(acc)
            }
        }
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Predictions> {
        predict_forest(self, &dataset.rows())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ForestDocument {
            format: FOREST_FORMAT.into(),
            version: FORMAT_VERSION,
            forest: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ForestDocument = serde_json::from_str(s)?;
        if doc.format != FOREST_FORMAT || doc.version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported forest document {} v{}",
                doc.format, doc.version
            )));
        }
        Ok(doc.forest)
    }
}

/// Fits one tree per weight draw. Tree `b` uses the seed
/// `derive_seed(config.seed, b)` for both its weights and any feature
/// sampling, so the result does not depend on the thread pool.
pub fn fit_forest(dataset: &Dataset, config: &ForestConfig) -> Result<Forest> {
    config.validate(dataset.n_features())?;
    let sorted = SortedColumns::new(dataset);
    let seeds: Vec<u64> = (0..config.n_trees as u64).map(|b| derive_seed(config.seed, b)).collect();
    let trees = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = rng_from_seed(seed);
            let weights = draw_weights_with(dataset.n_rows(), config.weight_mode, &mut rng)?;
            fit_tree_sorted(dataset, &sorted, &weights, &config.tree, None, Some(rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        task: dataset.task(),
        n_features: dataset.n_features(),
        n_classes: dataset.n_classes(),
        config: config.clone(),
        chunks: 1,
        seeds,
        trees,
    })
}

/// Ensemble prediction for row-major inputs.
pub fn predict_forest(forest: &Forest, rows: &[Vec<f64>]) -> Result<Predictions> {
    if let Some(bad) = rows.iter().find(|r| r.len() != forest.n_features) {
        return Err(Error::DimensionMismatch {
            expected: forest.n_features,
            got: bad.len(),
        });
    }
    let values: Vec<LeafValue> = rows.par_iter().map(|x| forest.predict_row_unchecked(x)).collect();
    Ok(Predictions::from_leaf_values(forest.task, forest.n_classes, values))
}

/// Sub-sample forest: rows are shuffled with `seed` and cut into `n_chunks`
/// disjoint near-equal chunks; an independent forest of `config.n_trees`
/// trees is fit to each chunk and all trees are pooled.
pub fn fit_ssf(dataset: &Dataset, n_chunks: usize, config: &ForestConfig, seed: u64) -> Result<Forest> {
    if n_chunks == 0 {
        return Err(Error::invalid("n_chunks must be at least 1"));
    }
    config.validate(dataset.n_features())?;
    let n = dataset.n_rows();
    if n_chunks > n {
        return Err(Error::invalid(format!("{n_chunks} chunks for {n} rows")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let min_leaf = config.tree.min_leaf_count.unwrap_or(1);
    let chunks: Vec<Vec<usize>> = near_equal_chunks(n, n_chunks)
        .into_iter()
        .map(|positions| {
            let mut rows: Vec<usize> = positions.into_iter().map(|p| perm[p]).collect();
            rows.sort_unstable();
            rows
        })
        .collect();
    if let Some(small) = chunks.iter().find(|c| c.len() < min_leaf) {
        return Err(Error::invalid(format!(
            "chunk of {} rows is smaller than min_leaf_count {min_leaf}",
            small.len()
        )));
    }
    let forests = chunks
        .iter()
        .enumerate()
        .map(|(c, rows)| {
            let part = subset(dataset, rows)?;
            let cfg = ForestConfig {
                seed: part_seed(config.seed, c as u64),
                ..config.clone()
            };
            fit_forest(&part, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut seeds = Vec::with_capacity(n_chunks * config.n_trees);
    let mut trees = Vec::with_capacity(n_chunks * config.n_trees);
    for f in forests {
        seeds.extend(f.seeds);
        trees.extend(f.trees);
    }
    Ok(Forest {
        task: dataset.task(),
        n_features: dataset.n_features(),
        n_classes: dataset.n_classes(),
        config: config.clone(),
        chunks: n_chunks,
        seeds,
        trees,
    })
}
