//! `bforest`: train, predict and benchmark Bayesian forests from the shell.

mod artifact;
mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use anyhow::{anyhow, bail, Context, Result};
use bayes_forest::bench::{run_cv_experiment, run_friedman_experiment, DataSource, ExperimentSpec, FriedmanSpec, ResultsTable};
use bayes_forest::data::{load_csv, load_with_encoding, subset};
use bayes_forest::ebf::{assemble_ebf, branch_forest_config, branch_rows, fit_trunk};
use bayes_forest::stability::{analyze_node, split_posterior_distribution};
use bayes_forest::{fit_forest, Dataset, Forest, Model, ModelKind, Predictions, WeightMode};
use clap::{Args, Parser, Subcommand};

use crate::artifact::{write_chunk, BranchJob, ModelFile};
use crate::config::{ensure, ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "bforest", version, about = "Bayesian and empirical Bayesian forests")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.n_trees=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a model and write it as JSON.
    Train(ConfigArgs),
    /// Predict a CSV with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// k-fold cross-validation of several models.
    Cv(ConfigArgs),
    /// Repeated train/test study on Friedman data.
    Friedman {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated model kinds.
        #[arg(long)]
        models: Option<String>,
        #[arg(long)]
        trees: Option<usize>,
    },
    /// Posterior split distribution of weighted trunks, plus bounds at the root.
    Stability(ConfigArgs),
    /// Fit one EBF branch forest from a chunk file.
    BranchWorker {
        #[arg(long)]
        chunk: PathBuf,
        #[arg(long)]
        job: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 usage or config, 2 data, 3 internal.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<bayes_forest::Error>() {
            return match err {
                bayes_forest::Error::InvalidArgument(_) => 1,
                e if e.is_data_error() => 2,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
            || cause.downcast_ref::<csv::Error>().is_some()
        {
            return 2;
        }
    }
    3
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    let pool = |cfg: Option<&RunConfig>| -> Result<()> {
        let n = match threads {
            Some(n) => Some(n),
            None => match cfg {
                Some(c) => c.usize("threads")?,
                None => None,
            },
        };
        if let Some(n) = n {
            ensure(n >= 1, "--threads must be at least 1")?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| anyhow!("cannot start thread pool: {e}"))?;
        }
        Ok(())
    };
    match cli.command {
        Cmd::Train(args) => {
            let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
            pool(Some(&cfg))?;
            cmd_train(&cfg, threads)
        }
        Cmd::Predict { model, data, output } => {
            pool(None)?;
            cmd_predict(&model, &data, &output)
        }
        Cmd::Cv(args) => {
            let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
            pool(Some(&cfg))?;
            cmd_cv(&cfg)
        }
        Cmd::Friedman {
            config,
            repeats,
            seed,
            models,
            trees,
        } => {
            let mut cfg = RunConfig::load(config.config.as_deref(), &config.overrides)?;
            if let Some(r) = repeats {
                cfg.set("friedman.repeats", toml::Value::Integer(r as i64));
            }
            if let Some(s) = seed {
                cfg.set("seed", toml::Value::Integer(s as i64));
            }
            if let Some(m) = models {
                cfg.set("friedman.models", toml::Value::String(m));
            }
            if let Some(t) = trees {
                cfg.set("model.n_trees", toml::Value::Integer(t as i64));
            }
            pool(Some(&cfg))?;
            cmd_friedman(&cfg)
        }
        Cmd::Stability(args) => {
            let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
            pool(Some(&cfg))?;
            cmd_stability(&cfg)
        }
        Cmd::BranchWorker { chunk, job, output } => {
            pool(None)?;
            cmd_branch_worker(&chunk, &job, &output)
        }
    }
}

fn load_data(cfg: &RunConfig) -> Result<(Dataset, bayes_forest::data::Encoding)> {
    let path = cfg.data_path()?;
    let schema = cfg.schema()?;
    load_csv(&path, &schema).with_context(|| format!("loading {}", path.display()))
}

fn cmd_train(cfg: &RunConfig, threads: Option<usize>) -> Result<()> {
    let kind: ModelKind = cfg
        .parsed("model.kind")?
        .ok_or_else(|| anyhow!(ConfigError("missing config key 'model.kind'".into())))?;
    let out = cfg.require_output("output.model")?;
    let spec = cfg.model_spec(kind)?;
    let seed = spec.seed.unwrap_or(cfg.seed()?);
    let execution = cfg.str("ebf.execution")?.unwrap_or_else(|| "threads".into());
    ensure(
        execution == "threads" || execution == "processes",
        format!("ebf.execution must be 'threads' or 'processes', got '{execution}'"),
    )?;
    let (data, encoding) = load_data(cfg)?;
    let model = if kind == ModelKind::Ebf && execution == "processes" {
        let work = match cfg.path("ebf.work_dir")? {
            Some(p) => p,
            None => out.with_extension("branches"),
        };
        fit_ebf_processes(&data, &spec, seed, &work, threads)?
    } else {
        spec.fit(&data, seed)?
    };
    ModelFile::new(encoding, spec, seed, model).write(&out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// EBF with one worker process per branch: routed chunks and job files are
/// written to `work`, `bforest branch-worker` fits each, and the branch
/// forests are read back.
fn fit_ebf_processes(
    data: &Dataset,
    spec: &bayes_forest::ModelSpec,
    seed: u64,
    work: &Path,
    threads: Option<usize>,
) -> Result<Model> {
    std::fs::create_dir_all(work).with_context(|| format!("cannot create {}", work.display()))?;
    let config = spec.forest_config(seed);
    config.validate(data.n_features())?;
    let trunk = fit_trunk(data, &spec.trunk)?;
    let exe = std::env::current_exe().context("cannot locate bforest executable")?;
    let mut children = Vec::new();
    for (leaf, rows) in branch_rows(&trunk, data)? {
        if rows.is_empty() {
            bail!(bayes_forest::Error::Internal(format!("trunk leaf {leaf} received no rows")));
        }
        let chunk = work.join(format!("branch_{leaf}.csv"));
        let job_path = work.join(format!("branch_{leaf}.job.json"));
        let output = work.join(format!("branch_{leaf}.forest.json"));
        write_chunk(&subset(data, &rows)?, &chunk)?;
        let job = BranchJob::new(leaf, data, branch_forest_config(&config, leaf));
        std::fs::write(&job_path, serde_json::to_string(&job)?)?;
        let mut cmd = Command::new(&exe);
        if let Some(t) = threads {
            cmd.arg("--threads").arg(t.to_string());
        }
        cmd.arg("branch-worker")
            .arg("--chunk")
            .arg(&chunk)
            .arg("--job")
            .arg(&job_path)
            .arg("--output")
            .arg(&output);
        children.push((leaf, output, cmd.spawn().context("cannot start branch worker")?));
    }
    let mut branches = BTreeMap::new();
    for (leaf, output, mut child) in children {
        let status = child.wait()?;
        if !status.success() {
            bail!(bayes_forest::Error::Internal(format!("branch worker for leaf {leaf} failed: {status}")));
        }
        let text = std::fs::read_to_string(&output)?;
        branches.insert(leaf, Forest::from_json(&text)?);
    }
    Ok(Model::Ebf(assemble_ebf(data, trunk, &spec.trunk, &config, branches)?))
}

fn cmd_branch_worker(chunk: &Path, job: &Path, output: &Path) -> Result<()> {
    let job = BranchJob::read(job)?;
    let (features, response) =
        load_with_encoding(chunk, &job.encoding).with_context(|| format!("reading chunk {}", chunk.display()))?;
    let response = response.ok_or_else(|| {
        bayes_forest::Error::Schema(format!("chunk {} has no response column", chunk.display()))
    })?;
    let data = Dataset::new(features, response, job.encoding.feature_names())?;
    let forest = fit_forest(&data, &job.config)?;
    std::fs::write(output, forest.to_json()?).with_context(|| format!("cannot write {}", output.display()))?;
    Ok(())
}

fn cmd_predict(model: &Path, data: &Path, output: &Path) -> Result<()> {
    let file = ModelFile::read(model)?;
    let (columns, _) =
        load_with_encoding(data, &file.encoding).with_context(|| format!("reading {}", data.display()))?;
    let n = columns.first().map_or(0, Vec::len);
    let rows: Vec<Vec<f64>> = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    let pred = file.model.predict(&rows)?;
    let mut w = csv::Writer::from_path(output).with_context(|| format!("cannot write {}", output.display()))?;
    match &pred {
        Predictions::Real(values) => {
            w.write_record(["prediction"])?;
            for v in values {
                w.write_record([v.to_string()])?;
            }
        }
        Predictions::Proportions(probs) => {
            let classes = &file.encoding.classes;
            let mut header: Vec<String> = classes.iter().map(|c| format!("prob_{c}")).collect();
            header.push("prediction".into());
            w.write_record(&header)?;
            for (p, label) in probs.iter().zip(pred.labels()) {
                let mut rec: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                rec.push(classes[label].clone());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_table(cfg: &RunConfig, table: &ResultsTable) -> Result<()> {
    print!("{}", table.to_text());
    if let Some(p) = cfg.output_path("output.results_csv")? {
        std::fs::write(&p, table.to_csv()?)?;
    }
    if let Some(p) = cfg.output_path("output.results_json")? {
        std::fs::write(&p, table.to_json()?)?;
    }
    Ok(())
}

const ALL_MODELS: &[ModelKind] = &[
    ModelKind::Dt,
    ModelKind::Bf,
    ModelKind::Rf,
    ModelKind::Ebf,
    ModelKind::Ssf,
];

fn cmd_cv(cfg: &RunConfig) -> Result<()> {
    let kinds = cfg.model_kinds("cv.models", ALL_MODELS)?;
    let models = kinds.iter().map(|&k| cfg.model_spec(k)).collect::<Result<Vec<_>>>()?;
    let spec = ExperimentSpec {
        source: DataSource::Csv {
            path: cfg.data_path()?,
            schema: cfg.schema()?,
        },
        models,
        folds: cfg.usize("cv.folds")?.unwrap_or(10),
        seed: cfg.seed()?,
        metric: cfg.metric()?,
    };
    ensure(spec.folds >= 2, "cv.folds must be at least 2")?;
    // Validate output paths before the long run.
    cfg.output_path("output.results_csv")?;
    cfg.output_path("output.results_json")?;
    let table = run_cv_experiment(&spec)?;
    write_table(cfg, &table)
}

fn cmd_friedman(cfg: &RunConfig) -> Result<()> {
    let kinds = cfg.model_kinds("friedman.models", &[ModelKind::Dt, ModelKind::Bf, ModelKind::Rf])?;
    let models = kinds.iter().map(|&k| cfg.model_spec(k)).collect::<Result<Vec<_>>>()?;
    let mut spec = FriedmanSpec::standard(models, cfg.seed()?);
    if let Some(r) = cfg.usize("friedman.repeats")? {
        spec.repeats = r;
    }
    if let Some(n) = cfg.usize("friedman.n_train")? {
        spec.n_train = n;
    }
    if let Some(n) = cfg.usize("friedman.n_test")? {
        spec.n_test = n;
    }
    if let Some(p) = cfg.usize("friedman.p")? {
        spec.p = p;
    }
    if let Some(s) = cfg.float("friedman.noise_sd")? {
        spec.noise_sd = s;
    }
    cfg.output_path("output.results_csv")?;
    cfg.output_path("output.results_json")?;
    let table = run_friedman_experiment(&spec)?;
    write_table(cfg, &table)
}

fn cmd_stability(cfg: &RunConfig) -> Result<()> {
    let json_out = cfg.require_output("output.report_json")?;
    let csv_out = cfg.output_path("output.histogram_csv")?;
    let (data, _) = load_data(cfg)?;
    let trunk = cfg.model_spec(ModelKind::Ebf)?.trunk;
    let draws = cfg.usize("stability.draws")?.unwrap_or(100);
    let mode: WeightMode = cfg.parsed("stability.weight_mode")?.unwrap_or(WeightMode::Exponential);
    let seed = cfg.seed()?;
    let (_, hist) = split_posterior_distribution(&data, mode, &trunk, draws, seed)?;

    let all: Vec<usize> = (0..data.n_rows()).collect();
    let node_min_leaf = cfg
        .usize("stability.node_min_leaf")?
        .unwrap_or_else(|| trunk.fit_config().min_leaf_count.unwrap_or(1));
    let mc_draws = cfg.usize("stability.mc_draws")?.unwrap_or(0);
    let mut report = analyze_node(&all, &data, node_min_leaf, mc_draws, seed)?;

    let names = data.feature_names();
    let name = |j: usize| names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
    println!("draws: {draws}");
    println!("root split: {} <= {}", name(report.reference.feature), report.reference.threshold);
    println!("gaussian bound at root: {:.6}", report.gaussian_bound);
    println!("exponential bound at root: {:.6}", report.exp_bound);
    if let Some(mc) = &report.mc {
        println!("monte carlo match rate: {:.4} (se {:.4}, {} draws)", mc.estimate, mc.std_error, mc.draws);
    }
    for (depth, label) in [(1, "first"), (2, "second")] {
        let mut by_feature: BTreeMap<String, usize> = BTreeMap::new();
        let feats = if depth == 1 { &hist.first_features } else { &hist.second_features };
        for f in feats.iter().flatten() {
            *by_feature.entry(name(*f)).or_default() += 1;
        }
        println!("{label} split features: {by_feature:?}");
    }
    println!("modal trunk frequency, exact thresholds: {:.2}", hist.modal_frequency());
    println!(
        "modal trunk frequency, thresholds within {:e}: {:.2}",
        bayes_forest::stability::STRUCTURE_TOL,
        hist.tolerant_classes.first().map_or(0.0, |c| c.frequency)
    );
    println!("modal trunk frequency, split features only: {:.2}", hist.modal_feature_frequency());
    if let Some(p) = &csv_out {
        std::fs::write(p, hist.to_csv(names)?)?;
    }
    report.split_histograms = Some(hist);
    std::fs::write(&json_out, serde_json::to_string_pretty(&report)?)?;
    Ok(())
}
