//! Experiment harness: the Friedman generator, k-fold cross-validation,
//! error metrics and percent-worse-than-best tables.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{kfold_split, load_csv, subset, Dataset, Response, Schema, Task};
use crate::ebf::TrunkConfig;
use crate::error::{Error, Result};
use crate::forest::Predictions;
use crate::model::{ModelKind, ModelSpec};
use crate::weights::{derive_seed, rng_from_seed};

/// Friedman's benchmark function; only the first five inputs matter.
pub fn friedman_f(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

/// `n` rows of p i.i.d. U(0,1) features with y = f(x) + N(0, noise_sd²).
/// Also returns the noiseless f(x).
pub fn friedman_sample(n: usize, p: usize, noise_sd: f64, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    if p < 5 {
        return Err(Error::invalid(format!("Friedman data needs p >= 5, got {p}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::invalid(format!("noise_sd must be finite and >= 0, got {noise_sd}")));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        let fx = friedman_f(&x);
        let eps: f64 = rng.sample(StandardNormal);
        y.push(fx + noise_sd * eps);
        f.push(fx);
        rows.push(x);
    }
    Ok((Dataset::from_rows(&rows, Response::Real(y))?, f))
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: b, got: a });
    }
    if a == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Misclassification rate.
pub fn mcr<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let wrong = pred.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Rmse,
    Mcr,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmse" => Ok(Metric::Rmse),
            "mcr" => Ok(Metric::Mcr),
            other => Err(Error::invalid(format!("unknown metric '{other}'"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Rmse => "rmse",
            Metric::Mcr => "mcr",
        })
    }
}

/// Error of `pred` against held-out truth.
pub fn score(metric: Metric, pred: &Predictions, truth: &Response) -> Result<f64> {
    match (metric, truth) {
        (Metric::Rmse, Response::Real(y)) => match pred {
            Predictions::Real(p) => rmse(p, y),
            Predictions::Proportions(_) => Err(Error::invalid("rmse needs real predictions")),
        },
        (Metric::Rmse, Response::Class { .. }) => Err(Error::invalid("rmse needs a real response")),
        (Metric::Mcr, Response::Class { labels, .. }) => mcr(&pred.labels(), labels),
        (Metric::Mcr, Response::Real(y)) => match pred {
            Predictions::Real(p) => mcr(p, y),
            Predictions::Proportions(_) => Err(Error::invalid("class predictions for a real response")),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub mean: f64,
    /// Per-fold or per-repeat values.
    pub values: Vec<f64>,
    /// 100·(mean − best)/best; `None` when the best mean is 0 and this
    /// model's is not.
    pub pct_wtb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub metric: Metric,
    pub rows: Vec<ResultRow>,
}

pub fn pct_worse(mean: f64, best: f64) -> Option<f64> {
    if mean == best {
        Some(0.0)
    } else if best == 0.0 {
        None
    } else {
        Some(100.0 * (mean - best) / best)
    }
}

impl ResultsTable {
    pub fn from_values(metric: Metric, values: Vec<(String, Vec<f64>)>) -> Self {
        let means: Vec<f64> = values
            .iter()
            .map(|(_, v)| v.iter().sum::<f64>() / v.len().max(1) as f64)
            .collect();
        let best = means.iter().copied().fold(f64::INFINITY, f64::min);
        let rows = values
            .into_iter()
            .zip(means)
            .map(|((model, values), mean)| ResultRow {
                model,
                mean,
                values,
                pct_wtb: pct_worse(mean, best),
            })
            .collect();
        ResultsTable { metric, rows }
    }

    pub fn row(&self, model: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let metric = self.metric.to_string().to_uppercase();
        let _ = writeln!(s, "{:<width$}  {:>14}  {:>8}", "model", metric, "%WTB");
        for r in &self.rows {
            let wtb = r.pct_wtb.map_or("-".to_string(), |v| format!("{v:.1}"));
            let _ = writeln!(s, "{:<width$}  {:>14.6}  {:>8}", r.model, r.mean, wtb);
        }
        s
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Internal(e.to_string());
        let n_values = self.rows.iter().map(|r| r.values.len()).max().unwrap_or(0);
        let mut header = vec!["model".to_string(), format!("mean_{}", self.metric), "pct_wtb".into()];
        header.extend((0..n_values).map(|i| format!("v{i}")));
        w.write_record(&header).map_err(err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.model.clone(),
                r.mean.to_string(),
                r.pct_wtb.map_or(String::new(), |v| v.to_string()),
            ];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            rec.resize(header.len(), String::new());
            w.write_record(&rec).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Seed of the fold-`fold` fit of a model.
pub fn model_seed(spec: &ModelSpec, master: u64, fold: usize) -> u64 {
    derive_seed(spec.seed.unwrap_or(master), fold as u64)
}

/// Seed of the fold assignment of an experiment.
pub fn fold_seed(master: u64) -> u64 {
    derive_seed(master, u64::MAX - 1)
}

/// k-fold CV with one shared fold assignment for every model.
pub fn run_cv(dataset: &Dataset, models: &[ModelSpec], k: usize, seed: u64, metric: Metric) -> Result<ResultsTable> {
    if models.is_empty() {
        return Err(Error::invalid("experiment lists no models"));
    }
    let folds = kfold_split(dataset.n_rows(), k, fold_seed(seed))?;
    let mut values = vec![Vec::with_capacity(k); models.len()];
    for fold in 0..k {
        let train = subset(dataset, &folds.train_indices(fold))?;
        let test = subset(dataset, &folds.test_indices(fold))?;
        let rows = test.rows();
        for (m, spec) in models.iter().enumerate() {
            let model = spec.fit(&train, model_seed(spec, seed, fold))?;
            values[m].push(score(metric, &model.predict(&rows)?, test.response())?);
        }
    }
    Ok(ResultsTable::from_values(
        metric,
        models.iter().map(|m| m.name.clone()).zip(values).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Csv { path: PathBuf, schema: Schema },
    Friedman { n: usize, p: usize, noise_sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub source: DataSource,
    pub models: Vec<ModelSpec>,
    pub folds: usize,
    pub seed: u64,
    pub metric: Metric,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::invalid("experiment lists no models"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("cross-validation needs at least 2 folds"));
        }
        Ok(())
    }

    pub fn load(&self) -> Result<Dataset> {
        match &self.source {
            DataSource::Csv { path, schema } => Ok(load_csv(path, schema)?.0),
            DataSource::Friedman { n, p, noise_sd } => {
                Ok(friedman_sample(*n, *p, *noise_sd, derive_seed(self.seed, u64::MAX - 2))?.0)
            }
        }
    }
}

pub fn run_cv_experiment(spec: &ExperimentSpec) -> Result<ResultsTable> {
    spec.validate()?;
    let data = spec.load()?;
    if spec.metric == Metric::Rmse && data.task() == Task::Classification {
        return Err(Error::invalid("rmse needs a regression response"));
    }
    run_cv(&data, &spec.models, spec.folds, spec.seed, spec.metric)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanSpec {
    pub repeats: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub p: usize,
    pub noise_sd: f64,
    pub models: Vec<ModelSpec>,
    pub seed: u64,
}

impl FriedmanSpec {
    /// 100 repeats of 100 training and 1000 test points, p = 10, unit noise.
    pub fn standard(models: Vec<ModelSpec>, seed: u64) -> Self {
        FriedmanSpec {
            repeats: 100,
            n_train: 100,
            n_test: 1000,
            p: 10,
            noise_sd: 1.0,
            models,
            seed,
        }
    }
}

/// Repeated train/test draws; test RMSE is against the noiseless f.
pub fn run_friedman_experiment(spec: &FriedmanSpec) -> Result<ResultsTable> {
    if spec.models.is_empty() {
        return Err(Error::invalid("experiment lists no models"));
    }
    if spec.repeats == 0 {
        return Err(Error::invalid("need at least one repeat"));
    }
    let mut values = vec![Vec::with_capacity(spec.repeats); spec.models.len()];
    for r in 0..spec.repeats {
        let (train, _) = friedman_sample(spec.n_train, spec.p, spec.noise_sd, derive_seed(spec.seed, 2 * r as u64))?;
        let (test, f) = friedman_sample(spec.n_test, spec.p, spec.noise_sd, derive_seed(spec.seed, 2 * r as u64 + 1))?;
        let rows = test.rows();
        for (m, ms) in spec.models.iter().enumerate() {
            let model = ms.fit(&train, model_seed(ms, spec.seed, r))?;
            let pred = model.predict(&rows)?;
            let p = pred.values().ok_or_else(|| Error::invalid("Friedman needs regression models"))?;
            values[m].push(rmse(p, &f)?);
        }
    }
    Ok(ResultsTable::from_values(
        Metric::Rmse,
        spec.models.iter().map(|m| m.name.clone()).zip(values).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub min_leaf: usize,
    pub n_branches: Vec<usize>,
    pub ebf_mean: f64,
    pub bf_mean: f64,
    /// EBF mean error relative to the full BF, in percent.
    pub pct_wtb: Option<f64>,
}

/// CV error of EBFs with trunks of each minimum leaf size, against a BF on
/// the same folds. `branch` supplies the per-branch forest settings.
pub fn trunk_depth_sensitivity(
    dataset: &Dataset,
    mls_values: &[usize],
    branch: &ModelSpec,
    k: usize,
    seed: u64,
    metric: Metric,
) -> Result<Vec<SensitivityRow>> {
    if mls_values.is_empty() {
        return Err(Error::invalid("no trunk sizes given"));
    }
    let bf = ModelSpec {
        kind: ModelKind::Bf,
        name: "BF".into(),
        ..branch.clone()
    };
    let mut models = vec![bf];
    for &m in mls_values {
        models.push(ModelSpec {
            kind: ModelKind::Ebf,
            name: format!("EBF-{m}"),
            trunk: TrunkConfig::min_leaf(m),
            ..branch.clone()
        });
    }
    let table = run_cv(dataset, &models, k, seed, metric)?;
    let bf_mean = table.rows[0].mean;
    let folds = kfold_split(dataset.n_rows(), k, fold_seed(seed))?;
    mls_values
        .iter()
        .zip(&table.rows[1..])
        .map(|(&m, row)| {
            let n_branches = (0..k)
                .map(|fold| {
                    let train = subset(dataset, &folds.train_indices(fold))?;
                    Ok(crate::ebf::fit_trunk(&train, &TrunkConfig::min_leaf(m))?.n_leaves())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SensitivityRow {
                min_leaf: m,
                n_branches,
                ebf_mean: row.mean,
                bf_mean,
                pct_wtb: pct_worse(row.mean, bf_mean),
            })
        })
        .collect()
}
