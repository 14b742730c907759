//! On-disk model files and branch-worker job files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use bayes_forest::data::{ColumnRole, Encoding, SourceColumn};
use bayes_forest::{Dataset, ForestConfig, Model, ModelSpec};
use serde::{Deserialize, Serialize};

pub const MODEL_FORMAT: &str = "bayes-forest/model";
pub const JOB_FORMAT: &str = "bayes-forest/branch-job";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    /// How input CSVs map onto model features.
    pub encoding: Encoding,
    pub spec: ModelSpec,
    pub seed: u64,
    pub model: Model,
}

impl ModelFile {
    pub fn new(encoding: Encoding, spec: ModelSpec, seed: u64, model: Model) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: VERSION,
            encoding,
            spec,
            seed,
            model,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).with_context(|| format!("cannot write model {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: ModelFile = crate::config::read_json(path, "model file")?;
        if file.format != MODEL_FORMAT || file.version != VERSION {
            bail!("{} is not a v{VERSION} {MODEL_FORMAT} file", path.display());
        }
        Ok(file)
    }
}

/// One branch of a process-per-branch EBF fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchJob {
    pub format: String,
    pub version: u32,
    pub leaf_id: usize,
    /// Layout of the chunk CSV: numeric features then the response.
    pub encoding: Encoding,
    /// Forest settings with the branch seed already derived.
    pub config: ForestConfig,
}

pub const CHUNK_RESPONSE: &str = "_response";

impl BranchJob {
    pub fn new(leaf_id: usize, dataset: &Dataset, config: ForestConfig) -> Self {
        let mut columns: Vec<SourceColumn> = dataset
            .feature_names()
            .iter()
            .map(|n| SourceColumn {
                name: n.clone(),
                role: ColumnRole::FeatureNumeric,
                levels: Vec::new(),
            })
            .collect();
        columns.push(SourceColumn {
            name: CHUNK_RESPONSE.into(),
            role: ColumnRole::Response,
            levels: Vec::new(),
        });
        let classes = match dataset.response() {
            bayes_forest::Response::Class { classes, .. } => classes.clone(),
            bayes_forest::Response::Real(_) => Vec::new(),
        };
        BranchJob {
            format: JOB_FORMAT.into(),
            version: VERSION,
            leaf_id,
            encoding: Encoding {
                task: dataset.task(),
                columns,
                classes,
            },
            config,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let job: BranchJob = crate::config::read_json(path, "branch job")?;
        if job.format != JOB_FORMAT || job.version != VERSION {
            bail!("{} is not a v{VERSION} {JOB_FORMAT} file", path.display());
        }
        Ok(job)
    }
}

/// Writes a dataset as CSV with shortest round-trip float formatting, so
/// reading it back reproduces every value bit for bit.
pub fn write_chunk(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut header: Vec<String> = dataset.feature_names().to_vec();
    header.push(CHUNK_RESPONSE.into());
    w.write_record(&header)?;
    let labels: Vec<String> = match dataset.response() {
        bayes_forest::Response::Real(y) => y.iter().map(|v| v.to_string()).collect(),
        bayes_forest::Response::Class { labels, classes } => labels.iter().map(|&l| classes[l].clone()).collect(),
    };
    for (i, label) in labels.into_iter().enumerate() {
        let mut rec: Vec<String> = dataset.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(label);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
