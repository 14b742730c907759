//! Flat run configuration: a TOML document whose (possibly nested) keys are
//! flattened to dotted paths, with `--set key=value` overrides on top.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use bayes_forest::bench::Metric;
use bayes_forest::data::ColumnRole;
use bayes_forest::{FitConfig, ModelKind, ModelSpec, Schema, Task, TrunkConfig, TrunkSize, WeightMode};
use toml::Value;

/// Exact keys every command understands.
const KEYS: &[&str] = &[
    "seed",
    "threads",
    "data.path",
    "data.task",
    "data.response",
    "data.default_role",
    "model.kind",
    "model.name",
    "model.n_trees",
    "model.min_leaf_count",
    "model.min_leaf_weight",
    "model.max_leaves",
    "model.feature_subset_size",
    "model.weight_mode",
    "model.branch_mode",
    "model.chunks",
    "model.seed",
    "model.trunk.min_leaf_count",
    "model.trunk.max_leaves",
    "model.trunk.base_min_leaf",
    "ebf.execution",
    "ebf.work_dir",
    "output.model",
    "output.results_csv",
    "output.results_json",
    "output.report_json",
    "output.histogram_csv",
    "cv.folds",
    "cv.metric",
    "cv.models",
    "friedman.repeats",
    "friedman.n_train",
    "friedman.n_test",
    "friedman.p",
    "friedman.noise_sd",
    "friedman.models",
    "stability.draws",
    "stability.weight_mode",
    "stability.mc_draws",
    "stability.node_min_leaf",
];

/// Keys of the form `<prefix><column>`.
const PREFIXES: &[&str] = &["data.role."];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
    /// Directory relative paths resolve against.
    base: PathBuf,
}

/// Configuration problems map to the usage exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(ConfigError(msg.into()))
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn known(key: &str) -> bool {
    KEYS.contains(&key) || PREFIXES.iter().any(|p| key.len() > p.len() && key.starts_with(p))
}

fn parse_scalar(raw: &str) -> Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig {
            base: PathBuf::from("."),
            ..Default::default()
        };
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
            let table: toml::Table = text
                .parse()
                .map_err(|e| config_err(format!("invalid config {}: {e}", path.display())))?;
            flatten("", &table, &mut cfg.values);
            cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            if cfg.base.as_os_str().is_empty() {
                cfg.base = PathBuf::from(".");
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| config_err(format!("--set expects key=value, got '{o}'")))?;
            cfg.values.insert(k.trim().to_string(), parse_scalar(v.trim()));
        }
        if let Some(bad) = cfg.values.keys().find(|k| !known(k)) {
            return Err(config_err(format!("unknown config key '{bad}'")));
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.values.insert(key.to_string(), value);
    }

    pub fn str(&self, key: &str) -> Result<Option<String>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(config_err(format!("'{key}' must be a string, got {other}"))),
        }
    }

    pub fn require_str(&self, key: &str) -> Result<String> {
        self.str(key)?.ok_or_else(|| config_err(format!("missing config key '{key}'")))
    }

    pub fn int(&self, key: &str) -> Result<Option<u64>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(other) => Err(config_err(format!("'{key}' must be a nonnegative integer, got {other}"))),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.int(key)?.map(|v| v as usize))
    }

    pub fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(other) => Err(config_err(format!("'{key}' must be a number, got {other}"))),
        }
    }

    pub fn list(&self, key: &str) -> Result<Option<Vec<String>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    other => Err(config_err(format!("'{key}' entries must be strings, got {other}"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(Value::String(s)) => Ok(Some(s.split(',').map(|p| p.trim().to_string()).collect())),
            Some(other) => Err(config_err(format!("'{key}' must be a list of strings, got {other}"))),
        }
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.str(key)?
            .map(|s| s.parse::<T>().map_err(|e| config_err(format!("'{key}': {e}"))))
            .transpose()
    }

    pub fn seed(&self) -> Result<u64> {
        Ok(self.int("seed")?.unwrap_or(0))
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.str(key)?.map(|p| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                self.base.join(p)
            }
        }))
    }

    /// Output path whose parent directory must exist.
    pub fn output_path(&self, key: &str) -> Result<Option<PathBuf>> {
        let Some(p) = self.path(key)? else { return Ok(None) };
        let parent = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !parent.is_dir() {
            return Err(config_err(format!(
                "'{key}': directory {} does not exist",
                parent.display()
            )));
        }
        Ok(Some(p))
    }

    pub fn require_output(&self, key: &str) -> Result<PathBuf> {
        self.output_path(key)?.ok_or_else(|| config_err(format!("missing config key '{key}'")))
    }

    pub fn data_path(&self) -> Result<PathBuf> {
        let p = self
            .path("data.path")?
            .ok_or_else(|| config_err("missing config key 'data.path'"))?;
        if !p.is_file() {
            return Err(config_err(format!("data file {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn schema(&self) -> Result<Schema> {
        let task: Task = self.parsed("data.task")?.unwrap_or(Task::Regression);
        let response = self.require_str("data.response")?;
        let mut schema = Schema::numeric(task, &response);
        if let Some(role) = self.parsed::<ColumnRole>("data.default_role")? {
            schema.default_role = Some(role);
        }
        for (k, _) in self.values.range("data.role.".to_string()..) {
            let Some(column) = k.strip_prefix("data.role.") else { break };
            let role: ColumnRole = self.parsed(k)?.expect("present");
            schema = schema.with_role(column, role);
        }
        Ok(schema)
    }

    pub fn metric(&self) -> Result<Metric> {
        Ok(self.parsed("cv.metric")?.unwrap_or(Metric::Rmse))
    }

    fn trunk(&self, default: TrunkConfig) -> Result<TrunkConfig> {
        let mls = self.usize("model.trunk.min_leaf_count")?;
        let ml = self.usize("model.trunk.max_leaves")?;
        let mut trunk = match (mls, ml) {
            (Some(_), Some(_)) => {
                return Err(config_err(
                    "set only one of model.trunk.min_leaf_count and model.trunk.max_leaves",
                ))
            }
            (Some(m), None) => TrunkConfig::min_leaf(m),
            (None, Some(k)) => TrunkConfig::max_leaves(k),
            (None, None) => default,
        };
        if let Some(b) = self.usize("model.trunk.base_min_leaf")? {
            trunk.base_min_leaf = b;
        }
        if matches!(trunk.size, TrunkSize::MinLeafCount(0) | TrunkSize::MaxLeaves(0)) {
            return Err(config_err("trunk size must be positive"));
        }
        Ok(trunk)
    }

    /// Model settings for `kind` with the shared `model.*` overrides.
    pub fn model_spec(&self, kind: ModelKind) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(kind);
        if let Some(n) = self.str("model.name")? {
            spec.name = n;
        }
        if let Some(b) = self.usize("model.n_trees")? {
            spec.n_trees = b;
        }
        let mut tree = FitConfig::default();
        if let Some(m) = self.usize("model.min_leaf_count")? {
            tree.min_leaf_count = Some(m);
        }
        if let Some(w) = self.float("model.min_leaf_weight")? {
            tree.min_leaf_weight = Some(w);
        }
        tree.max_leaves = self.usize("model.max_leaves")?;
        tree.feature_subset_size = self.usize("model.feature_subset_size")?;
        spec.tree = tree;
        if let Some(m) = self.parsed::<WeightMode>("model.branch_mode")? {
            spec.branch_mode = m;
        }
        if let Some(m) = self.parsed::<WeightMode>("model.weight_mode")? {
            spec.branch_mode = m;
            spec.kind = match (kind, m) {
                (ModelKind::Bf | ModelKind::Rf, WeightMode::Exponential) => ModelKind::Bf,
                (ModelKind::Bf | ModelKind::Rf, WeightMode::Multinomial) => ModelKind::Rf,
                _ => kind,
            };
        }
        spec.trunk = self.trunk(spec.trunk)?;
        if let Some(c) = self.usize("model.chunks")? {
            spec.chunks = c;
        }
        spec.seed = self.int("model.seed")?;
        Ok(spec)
    }

    pub fn model_kinds(&self, key: &str, default: &[ModelKind]) -> Result<Vec<ModelKind>> {
        match self.list(key)? {
            None => Ok(default.to_vec()),
            Some(names) => names
                .iter()
                .map(|n| n.parse::<ModelKind>().map_err(|e| config_err(format!("'{key}': {e}"))))
                .collect(),
        }
    }
}

/// Usage error unless `cond` holds.
pub fn ensure(cond: bool, msg: impl Into<String>) -> Result<()> {
    if !cond {
        bail!(ConfigError(msg.into()));
    }
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid {what} {}", path.display()))
}
