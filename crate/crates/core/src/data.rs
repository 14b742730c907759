//! Tabular datasets: CSV ingestion, categorical encoding, row subsets and
//! cross-validation folds.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(Error::Schema(format!("unknown task '{other}'"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Regression => f.write_str("regression"),
            Task::Classification => f.write_str("classification"),
        }
    }
}

/// Response column. Class responses are dense indices into `classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Response {
    Real(Vec<f64>),
    Class {
        labels: Vec<usize>,
        classes: Vec<String>,
    },
}

impl Response {
    pub fn len(&self) -> usize {
        match self {
            Response::Real(y) => y.len(),
            Response::Class { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Response::Real(_) => Task::Regression,
            Response::Class { .. } => Task::Classification,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Response::Real(_) => 0,
            Response::Class { classes, .. } => classes.len(),
        }
    }

    fn select(&self, indices: &[usize]) -> Response {
        match self {
            Response::Real(y) => Response::Real(indices.iter().map(|&i| y[i]).collect()),
            Response::Class { labels, classes } => Response::Class {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                classes: classes.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnRole {
    FeatureNumeric,
    FeatureCategorical,
    Response,
    Ignore,
}

impl FromStr for ColumnRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature-numeric" | "numeric" => Ok(ColumnRole::FeatureNumeric),
            "feature-categorical" | "categorical" => Ok(ColumnRole::FeatureCategorical),
            "response" => Ok(ColumnRole::Response),
            "ignore" => Ok(ColumnRole::Ignore),
            other => Err(Error::Schema(format!("unknown column role '{other}'"))),
        }
    }
}

/// Column roles for [`load_csv`]. Columns not listed take `default_role`;
/// with no default every column must be listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub task: Task,
    pub roles: BTreeMap<String, ColumnRole>,
    pub default_role: Option<ColumnRole>,
}

impl Schema {
    /// Every column is a numeric feature except `response`.
    pub fn numeric(task: Task, response: &str) -> Self {
        let mut roles = BTreeMap::new();
        roles.insert(response.to_string(), ColumnRole::Response);
        Schema {
            task,
            roles,
            default_role: Some(ColumnRole::FeatureNumeric),
        }
    }

    pub fn with_role(mut self, column: &str, role: ColumnRole) -> Self {
        self.roles.insert(column.to_string(), role);
        self
    }

    fn role_of(&self, column: &str) -> Result<ColumnRole> {
        self.roles
            .get(column)
            .copied()
            .or(self.default_role)
            .ok_or_else(|| Error::Schema(format!("no role given for column '{column}'")))
    }
}

/// How one source CSV column maps onto model features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceColumn {
    pub name: String,
    pub role: ColumnRole,
    /// Sorted levels for categorical columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

/// The fitted encoding of a CSV file: enough to re-encode new files into
/// the same feature layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub task: Task,
    pub columns: Vec<SourceColumn>,
    /// Class labels in index order (classification only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
}

impl Encoding {
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for col in &self.columns {
            match col.role {
                ColumnRole::FeatureNumeric => names.push(col.name.clone()),
                ColumnRole::FeatureCategorical => {
                    names.extend(col.levels.iter().map(|l| format!("{}_{}", col.name, l)))
                }
                _ => {}
            }
        }
        names
    }

    pub fn response_name(&self) -> Option<&str> {
        self.columns
            .iter()
            .find(|c| c.role == ColumnRole::Response)
            .map(|c| c.name.as_str())
    }
}

/// Feature matrix (column-major) plus response. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    response: Response,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(columns: Vec<Vec<f64>>, response: Response, feature_names: Vec<String>) -> Result<Self> {
        let n = response.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if columns.is_empty() {
            return Err(Error::Schema("dataset has no feature columns".into()));
        }
        if feature_names.len() != columns.len() {
            return Err(Error::Schema(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                columns.len()
            )));
        }
        for (name, col) in feature_names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::Schema(format!(
                    "column '{name}' has {} rows, response has {n}",
                    col.len()
                )));
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row,
                    column: name.clone(),
                });
            }
        }
        match &response {
            Response::Real(y) => {
                if let Some(row) = y.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        row,
                        column: "<response>".into(),
                    });
                }
            }
            Response::Class { labels, classes } => {
                if classes.is_empty() {
                    return Err(Error::Schema("classification response with no classes".into()));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
                    return Err(Error::Schema(format!(
                        "class index {bad} outside 0..{}",
                        classes.len()
                    )));
                }
            }
        }
        Ok(Dataset {
            columns,
            response,
            feature_names,
        })
    }

    /// Builds a dataset from row-major feature vectors.
    pub fn from_rows(rows: &[Vec<f64>], response: Response) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::with_capacity(rows.len()); p];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Schema(format!("row {i} has {} features, expected {p}", row.len())));
            }
            for (c, &v) in columns.iter_mut().zip(row) {
                c.push(v);
            }
        }
        let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
        Dataset::new(columns, response, names)
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn task(&self) -> Task {
        self.response.task()
    }

    pub fn n_classes(&self) -> usize {
        self.response.n_classes()
    }

    pub fn feature(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn response(&self) -> &Response {
        &self.response
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows()).map(|i| self.row(i)).collect()
    }

    /// Real-valued response, or the class index as a float.
    pub fn response_values(&self) -> Vec<f64> {
        match &self.response {
            Response::Real(y) => y.clone(),
            Response::Class { labels, .. } => labels.iter().map(|&l| l as f64).collect(),
        }
    }
}

/// Row subset in the given order, keeping column metadata.
pub fn subset(dataset: &Dataset, indices: &[usize]) -> Result<Dataset> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.n_rows();
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let columns = dataset
        .columns
        .iter()
        .map(|c| indices.iter().map(|&i| c[i]).collect())
        .collect();
    Ok(Dataset {
        columns,
        response: dataset.response.select(indices),
        feature_names: dataset.feature_names.clone(),
    })
}

/// Orders strings numerically when both parse as numbers, lexically otherwise.
fn level_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

fn sorted_levels(values: BTreeSet<String>) -> Vec<String> {
    let mut levels: Vec<String> = values.into_iter().collect();
    levels.sort_by(|a, b| level_cmp(a, b));
    levels
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "N/A" | "null" | "NULL" | "?")
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64> {
    let s = raw.trim();
    if is_missing(s) {
        return Err(Error::MissingValue {
            row,
            column: column.to_string(),
        });
    }
    let v: f64 = s.parse().map_err(|_| Error::NonNumeric {
        row,
        column: column.to_string(),
        value: s.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            row,
            column: column.to_string(),
        });
    }
    Ok(v)
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let csv_err = |e: csv::Error| Error::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::EmptyDataset);
    }
    let mut seen = BTreeSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::Schema(format!("duplicate column '{h}'")));
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(RawTable { header, rows })
}

/// Loads a CSV with a header row, expanding categorical columns into 0/1
/// indicator columns named `<column>_<level>` (levels in sorted order).
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<(Dataset, Encoding)> {
    let table = read_table(path.as_ref())?;
    for name in schema.roles.keys() {
        if !table.header.contains(name) {
            return Err(Error::Schema(format!("schema column '{name}' not in file")));
        }
    }
    let roles: Vec<ColumnRole> = table
        .header
        .iter()
        .map(|h| schema.role_of(h))
        .collect::<Result<_>>()?;
    let n_response = roles.iter().filter(|&&r| r == ColumnRole::Response).count();
    if n_response != 1 {
        return Err(Error::Schema(format!(
            "expected exactly one response column, found {n_response}"
        )));
    }

    let mut columns = Vec::with_capacity(table.header.len());
    let mut classes = Vec::new();
    for (c, (name, &role)) in table.header.iter().zip(&roles).enumerate() {
        let mut levels = Vec::new();
        let categorical = role == ColumnRole::FeatureCategorical
            || (role == ColumnRole::Response && schema.task == Task::Classification);
        if categorical {
            let mut set = BTreeSet::new();
            for (i, row) in table.rows.iter().enumerate() {
                let v = row[c].trim();
                if is_missing(v) {
                    return Err(Error::MissingValue {
                        row: i,
                        column: name.clone(),
                    });
                }
                set.insert(v.to_string());
            }
            levels = sorted_levels(set);
        }
        if role == ColumnRole::Response {
            classes = std::mem::take(&mut levels);
        }
        columns.push(SourceColumn {
            name: name.clone(),
            role,
            levels,
        });
    }
    let encoding = Encoding {
        task: schema.task,
        columns,
        classes,
    };
    let (features, response) = encode_rows(&table, &encoding, true)?;
    let dataset = Dataset::new(
        features,
        response.expect("response required"),
        encoding.feature_names(),
    )?;
    Ok((dataset, encoding))
}

/// Re-encodes a CSV with a previously fitted encoding. The file must hold
/// exactly the encoding's feature columns; the response and ignored columns
/// are optional. Returns the feature columns and the response when present.
pub fn load_with_encoding(
    path: impl AsRef<Path>,
    encoding: &Encoding,
) -> Result<(Vec<Vec<f64>>, Option<Response>)> {
    let table = read_table(path.as_ref())?;
    let (features, response) = encode_rows(&table, encoding, false)?;
    Ok((features, response))
}

fn encode_rows(
    table: &RawTable,
    encoding: &Encoding,
    require_response: bool,
) -> Result<(Vec<Vec<f64>>, Option<Response>)> {
    for h in &table.header {
        if !encoding.columns.iter().any(|c| &c.name == h) {
            return Err(Error::Schema(format!("unexpected column '{h}'")));
        }
    }
    let position = |name: &str| table.header.iter().position(|h| h == name);
    let n = table.rows.len();
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut response = None;
    for col in &encoding.columns {
        let idx = position(&col.name);
        match col.role {
            ColumnRole::Ignore => {}
            ColumnRole::FeatureNumeric => {
                let c = idx.ok_or_else(|| Error::Schema(format!("missing column '{}'", col.name)))?;
                let mut values = Vec::with_capacity(n);
                for (i, row) in table.rows.iter().enumerate() {
                    values.push(parse_number(&row[c], i, &col.name)?);
                }
                features.push(values);
            }
            ColumnRole::FeatureCategorical => {
                let c = idx.ok_or_else(|| Error::Schema(format!("missing column '{}'", col.name)))?;
                let mut block = vec![vec![0.0; n]; col.levels.len()];
                for (i, row) in table.rows.iter().enumerate() {
                    let v = row[c].trim();
                    if is_missing(v) {
                        return Err(Error::MissingValue {
                            row: i,
                            column: col.name.clone(),
                        });
                    }
                    let level = col.levels.iter().position(|l| l == v).ok_or_else(|| {
                        Error::Schema(format!("unknown level '{v}' in column '{}' at row {i}", col.name))
                    })?;
                    block[level][i] = 1.0;
                }
                features.extend(block);
            }
            ColumnRole::Response => {
                let Some(c) = idx else {
                    if require_response {
                        return Err(Error::Schema(format!("missing response column '{}'", col.name)));
                    }
                    continue;
                };
                response = Some(match encoding.task {
                    Task::Regression => {
                        let mut y = Vec::with_capacity(n);
                        for (i, row) in table.rows.iter().enumerate() {
                            y.push(parse_number(&row[c], i, &col.name)?);
                        }
                        Response::Real(y)
                    }
                    Task::Classification => {
                        let mut labels = Vec::with_capacity(n);
                        for (i, row) in table.rows.iter().enumerate() {
                            let v = row[c].trim();
                            if is_missing(v) {
                                return Err(Error::MissingValue {
                                    row: i,
                                    column: col.name.clone(),
                                });
                            }
                            let k = encoding.classes.iter().position(|l| l == v).ok_or_else(|| {
                                Error::Schema(format!("unknown class '{v}' at row {i}"))
                            })?;
                            labels.push(k);
                        }
                        Response::Class {
                            labels,
                            classes: encoding.classes.clone(),
                        }
                    }
                });
            }
        }
    }
    Ok((features, response))
}

/// Fold index per observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
}

impl FoldAssignment {
    /// Held-out rows of `fold`, ascending.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    /// Training rows for `fold` (every other fold), ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded random permutation of `0..n` cut into `k` near-equal folds.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("fold count {k} must be in 2..={n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (fold, chunk) in near_equal_chunks(n, k).into_iter().enumerate() {
        for &pos in &chunk {
            fold_of[perm[pos]] = fold;
        }
    }
    Ok(FoldAssignment { fold_of, k })
}

/// Splits positions `0..n` into `k` contiguous ranges whose sizes differ by
/// at most one (larger ranges first).
pub(crate) fn near_equal_chunks(n: usize, k: usize) -> Vec<Vec<usize>> {
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    (0..k)
        .map(|c| {
            let len = base + usize::from(c < extra);
            let chunk = (start..start + len).collect();
            start += len;
            chunk
        })
        .collect()
}
