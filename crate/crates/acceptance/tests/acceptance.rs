//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run all: `cargo test -p bforest-acceptance --test acceptance`
//! Run some: `cargo test -p bforest-acceptance --test acceptance -- 3 7`

#[path = "../../core/tests/support/data.rs"]
mod data;
#[path = "../../core/tests/support/nodes.rs"]
mod nodes;
#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use bayes_forest::bench::{run_cv, run_friedman_experiment, trunk_depth_sensitivity, FriedmanSpec, Metric, ResultsTable};
use bayes_forest::data::{load_csv, subset};
use bayes_forest::stability::{
    analyze_node, candidate_splits, delta_stats, reference_split, split_posterior_distribution,
};
use bayes_forest::{
    fit_ebf, fit_forest, predict_ebf, predict_forest, Dataset, ForestConfig, ModelKind, ModelSpec, Predictions, Schema,
    Task, TrunkConfig, WeightMode,
};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value / target - 1.0).abs() <= rel
}

fn all_rows(d: &Dataset) -> Vec<usize> {
    (0..d.n_rows()).collect()
}

fn bits(p: &Predictions) -> Vec<u64> {
    match p {
        Predictions::Real(v) => v.iter().map(|x| x.to_bits()).collect(),
        Predictions::Proportions(p) => p.iter().flatten().map(|x| x.to_bits()).collect(),
    }
}

fn table_line(table: &ResultsTable) -> String {
    table
        .rows
        .iter()
        .map(|r| format!("{} {:.4} ({})", r.model, r.mean, r.pct_wtb.map_or("-".into(), |v| format!("{v:.1}%"))))
        .collect::<Vec<_>>()
        .join(", ")
}

fn paper_models() -> Vec<ModelSpec> {
    [ModelKind::Dt, ModelKind::Bf, ModelKind::Rf, ModelKind::Ebf, ModelKind::Ssf]
        .into_iter()
        .map(ModelSpec::new)
        .collect()
}

fn c1_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    let mut splits = 0;
    for case in 0..200 {
        let (data, min_leaf) = oracle::random_instance(&mut rng, case % 2 == 1);
        let tree = bayes_forest::fit_tree(
            &data,
            &bayes_forest::WeightVector::unit(data.n_rows()),
            &bayes_forest::FitConfig::with_min_leaf(min_leaf),
            None,
        )
        .unwrap();
        let reference = oracle::oracle_tree(&data, min_leaf);
        splits += reference.n_leaves() - 1;
        if let Err(e) = oracle::compare(&tree, &reference) {
            failures.push(format!("case {case}: {e}"));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{}/200 instances identical ({splits} oracle splits), {:.1} s{}",
            200 - failures.len(),
            elapsed.as_secs_f64(),
            failures.first().map_or(String::new(), |f| format!("; first mismatch {f}"))
        ),
    )
}

fn degenerate_identity(data: &Dataset, seed: u64) -> bool {
    let config = ForestConfig::bayesian(seed);
    let forest = fit_forest(data, &config).unwrap();
    let ebf = fit_ebf(data, &TrunkConfig::max_leaves(1), &config).unwrap();
    let rows = data.rows();
    ebf.n_branches() == 1 && bits(&predict_forest(&forest, &rows).unwrap()) == bits(&predict_ebf(&ebf, &rows).unwrap())
}

fn c2_degenerate_trunk() -> Outcome {
    let start = Instant::now();
    let wine = data::red_wine();
    let housing = data::housing();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut idx = sample(&mut rng, housing.n_rows(), 5000).into_vec();
    idx.sort_unstable();
    let small = subset(&housing, &idx).unwrap();
    let wine_ok = degenerate_identity(&wine, SEED);
    let housing_ok = degenerate_identity(&small, SEED);
    let elapsed = start.elapsed();
    outcome(
        wine_ok && housing_ok && elapsed < Duration::from_secs(120),
        format!(
            "wine ({} rows) identical: {wine_ok}, housing 5k subsample identical: {housing_ok}, 100 trees each, {:.1} s",
            wine.n_rows(),
            elapsed.as_secs_f64()
        ),
    )
}

fn c3_housing_cv() -> Outcome {
    let start = Instant::now();
    let table = run_cv(&data::housing(), &paper_models(), 10, SEED, Metric::Rmse).unwrap();
    let targets = [("DT", 65_600.0), ("BF", 48_200.0), ("RF", 48_500.0), ("EBF", 49_400.0), ("SSF", 53_100.0)];
    let mean = |m: &str| table.row(m).unwrap().mean;
    let wtb = |m: &str| table.row(m).unwrap().pct_wtb.unwrap_or(f64::INFINITY);
    let off: Vec<String> = targets
        .iter()
        .filter(|(m, t)| !within(mean(m), *t, 0.06))
        .map(|(m, t)| format!("{m} {:+.1}%", 100.0 * (mean(m) / t - 1.0)))
        .collect();
    let order = mean("BF") <= mean("RF") && mean("RF") < mean("EBF") && mean("EBF") < mean("SSF") && mean("SSF") < mean("DT");
    let pass = off.is_empty() && order && wtb("EBF") <= 4.0 && wtb("SSF") >= 7.0;
    outcome(
        pass,
        format!(
            "{}; outside ±6%: [{}]; ordering {}; {:.0} s",
            table_line(&table),
            off.join(", "),
            if order { "ok" } else { "violated" },
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c4_wine_cv() -> Outcome {
    let dir = data::data_dir();
    let mut found = None;
    for name in ["winequality-white.csv", "winequality.csv", "wine.csv"] {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        for response in ["quality", "class"] {
            if let Ok((d, _)) = load_csv(&path, &Schema::numeric(Task::Regression, response)) {
                if d.n_rows() == 4898 {
                    found = Some(d);
                }
            }
        }
    }
    let red = data::red_wine();
    let red_table = run_cv(&red, &paper_models(), 10, SEED, Metric::Rmse).unwrap();
    let supplement = format!("red-wine supplement ({} rows): {}", red.n_rows(), table_line(&red_table));
    let Some(wine) = found else {
        return outcome(
            false,
            format!("the 4898-row wine data is not available under {}; {supplement}", dir.display()),
        );
    };
    let table = run_cv(&wine, &paper_models(), 10, SEED, Metric::Rmse).unwrap();
    let mean = |m: &str| table.row(m).unwrap().mean;
    let bf = mean("BF");
    let pass = within(bf, 0.5905, 0.05) && mean("EBF") <= 1.02 * bf && mean("SSF") >= 1.08 * bf && mean("DT") >= 1.25 * bf;
    outcome(pass, format!("{}; {supplement}", table_line(&table)))
}

fn c5_friedman() -> Outcome {
    let start = Instant::now();
    let models = vec![ModelSpec::new(ModelKind::Dt), ModelSpec::new(ModelKind::Bf), ModelSpec::new(ModelKind::Rf)];
    let table = run_friedman_experiment(&FriedmanSpec::standard(models, SEED)).unwrap();
    let mean = |m: &str| table.row(m).unwrap().mean;
    let (dt, bf, rf) = (mean("DT"), mean("BF"), mean("RF"));
    let close = (bf - rf).abs() <= 0.02 * bf.min(rf);
    let better = bf <= 0.8 * dt && rf <= 0.8 * dt;
    let elapsed = start.elapsed();
    outcome(
        close && better && elapsed < Duration::from_secs(600),
        format!(
            "100 repeats: {}; BF vs RF {:+.2}%, BF vs DT {:+.1}%, RF vs DT {:+.1}%; {:.0} s",
            table_line(&table),
            100.0 * (bf / rf - 1.0),
            100.0 * (bf / dt - 1.0),
            100.0 * (rf / dt - 1.0),
            elapsed.as_secs_f64()
        ),
    )
}

fn c6_trunk_depth() -> Outcome {
    let start = Instant::now();
    let rows = trunk_depth_sensitivity(&data::housing(), &[6000, 3000, 1500], &ModelSpec::new(ModelKind::Ebf), 10, SEED, Metric::Rmse)
        .unwrap();
    let targets = [1.6, 2.4, 4.3];
    let wtb: Vec<f64> = rows.iter().map(|r| r.pct_wtb.unwrap_or(f64::NAN)).collect();
    let monotone = wtb.windows(2).all(|w| w[1] > w[0]);
    let close = wtb.iter().zip(targets).all(|(v, t)| (v - t).abs() <= 2.0);
    let detail: Vec<String> = rows
        .iter()
        .zip(targets)
        .map(|(r, t)| {
            format!(
                "MLS {} -> {:.2}% (target {t}, {}-{} branches)",
                r.min_leaf,
                r.pct_wtb.unwrap_or(f64::NAN),
                r.n_branches.iter().min().unwrap(),
                r.n_branches.iter().max().unwrap()
            )
        })
        .collect();
    outcome(
        monotone && close,
        format!(
            "BF {:.0}; {}; monotone {monotone}; {:.0} s",
            rows[0].bf_mean,
            detail.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c7_stability() -> Outcome {
    let housing = data::housing();
    let income = housing.feature_names().iter().position(|n| n == "median_income").unwrap();
    let (_, hist) =
        split_posterior_distribution(&housing, WeightMode::Exponential, &TrunkConfig::min_leaf(3500), 100, SEED).unwrap();
    let on_income = (hist.first_two_on(income) * 100.0).round() as usize;
    let modal = hist.modal_feature_frequency();
    let classes: Vec<String> = hist.feature_classes.iter().map(|c| c.count.to_string()).collect();
    outcome(
        on_income >= 98 && (modal - 0.62).abs() <= 0.10,
        format!(
            "first and second split on median income in {on_income}/100 draws; modal trunk frequency {:.0}% \
             (trunk classes by split features: {}; with exact thresholds the modal frequency is {:.0}%)",
            100.0 * modal,
            classes.join("/"),
            100.0 * hist.modal_frequency()
        ),
    )
}

/// Node `k` of the battery: n cycles through 50..5000, candidate counts
/// through 2..50, and the step size puts √n·z in an informative range.
fn battery_node(k: usize) -> Dataset {
    const NS: [usize; 7] = [50, 120, 300, 700, 1500, 3000, 5000];
    let n = NS[k % NS.len()];
    let features = 1 + k % 3;
    let per_feature = 50 / features;
    let levels = 3 + (k * 7) % (per_feature - 1);
    let strength = [0.6, 0.9, 1.3, 2.0][k % 4];
    let signal = strength * 6.0 / (n as f64).powf(0.25);
    nodes::step_node(n, features, levels, signal, 1000 + k as u64)
}

fn c8_bound_validity() -> Outcome {
    let mut violations = Vec::new();
    let mut informative = 0;
    let mut min_margin = f64::INFINITY;
    let mut counts = (usize::MAX, 0);
    let n_nodes = 56;
    for k in 0..n_nodes {
        let d = battery_node(k);
        let report = analyze_node(&all_rows(&d), &d, 1, 2000, k as u64).unwrap();
        let live = report.stats.iter().filter(|s| !s.exact_tie && !s.duplicate).count() + 1;
        counts = (counts.0.min(live), counts.1.max(live));
        let mc = report.mc.unwrap();
        let margin = mc.estimate + 3.0 * mc.std_error - report.gaussian_bound;
        min_margin = min_margin.min(margin);
        if report.gaussian_bound > 0.0 && report.gaussian_bound < 1.0 {
            informative += 1;
        }
        if margin < 0.0 {
            violations.push(format!(
                "node {k} (n={}): MC {:.4} se {:.4} < bound {:.4}",
                d.n_rows(),
                mc.estimate,
                mc.std_error,
                report.gaussian_bound
            ));
        }
    }
    let mut replication = Vec::new();
    let mut monotone = true;
    for seed in 0..5u64 {
        let base = nodes::step_node(80, 2, 6, 1.0, 77 + seed);
        let bounds: Vec<f64> = [1, 2, 4, 8]
            .iter()
            .map(|&r| {
                let d = nodes::replicate(&base, r);
                analyze_node(&all_rows(&d), &d, 1, 0, 0).unwrap().gaussian_bound
            })
            .collect();
        let ok = bounds.windows(2).all(|w| w[1] >= w[0]) && (bounds[3] > bounds[0] || bounds[0] == 1.0);
        monotone &= ok;
        replication.push(format!("[{}]", bounds.iter().map(|b| format!("{b:.3}")).collect::<Vec<_>>().join(" ")));
    }
    outcome(
        violations.is_empty() && monotone,
        format!(
            "{n_nodes} nodes, {}..{} partitions per node, {informative} with 0 < bound < 1, smallest MC+3SE-bound margin {min_margin:.4}{}; \
             bounds over replication x1/x2/x4/x8: {}",
            counts.0,
            counts.1,
            violations.first().map_or(String::new(), |v| format!("; {} violations, first {v}", violations.len())),
            replication.join(" ")
        ),
    )
}

fn c9_self_consistency() -> Outcome {
    let draws = 100_000;
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    let mut checked = 0;
    for (seed, n) in [(3u64, 200usize), (4, 400)] {
        let d = nodes::step_node(n, 2, 5, 0.7, seed);
        let rows = all_rows(&d);
        let candidates = candidate_splits(&rows, &d, 1).unwrap();
        let reference = reference_split(&rows, &d, &candidates).unwrap();
        let stats = delta_stats(&rows, &d, &reference, &candidates).unwrap();
        let live: Vec<_> = stats.iter().filter(|s| !s.exact_tie && !s.duplicate).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
        let mut acc = vec![(0.0, 0.0); live.len()];
        for _ in 0..draws {
            let theta: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
            for (a, s) in acc.iter_mut().zip(&live) {
                let g = nodes::linearized_gap(&d, &reference, &s.split, &theta);
                a.0 += g;
                a.1 += g * g;
            }
        }
        for ((sum, sq), s) in acc.iter().zip(&live) {
            let mean = sum / draws as f64;
            let var = sq / draws as f64 - mean * mean;
            let se = (var / draws as f64).sqrt();
            worst_mean = worst_mean.max((mean - s.dbar).abs() / se);
            worst_var = worst_var.max((var / (s.dss_over_n / n as f64) - 1.0).abs());
            checked += 1;
        }
    }
    outcome(
        worst_mean <= 3.0 && worst_var <= 0.10,
        format!(
            "{checked} candidate gaps, 1e5 Exp(1) draws each: largest |mean - dbar| = {worst_mean:.2} SE, \
             largest relative variance error {:.2}%",
            100.0 * worst_var
        ),
    )
}

fn c10_determinism() -> Outcome {
    let exe = bforest_acceptance::bforest_exe();
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    let wine = data::data_dir().join("winequality-red.csv");
    let max = std::thread::available_parallelism().map_or(1, |n| n.get()).to_string();
    let run = |threads: &str, body: &str| -> Result<Vec<u8>, String> {
        let cfg = dir.join("train.toml");
        std::fs::write(&cfg, body).unwrap();
        let _ = std::fs::remove_file(dir.join("model.json"));
        let out = Command::new(&exe)
            .current_dir(dir)
            .args(["--threads", threads, "train", "-c"])
            .arg(&cfg)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        std::fs::read(dir.join("model.json")).map_err(|e| e.to_string())
    };
    let mut checked = Vec::new();
    let mut failures = Vec::new();
    let variants = [
        ("dt", ""),
        ("bf", ""),
        ("rf", ""),
        ("ebf", ""),
        ("ssf", ""),
        ("ebf", "[ebf]\nexecution = \"processes\"\nwork_dir = \"branches\"\n"),
    ];
    for (kind, extra) in variants {
        let body = format!(
            "seed = 3\n[data]\npath = \"{}\"\nresponse = \"class\"\n[model]\nkind = \"{kind}\"\nn_trees = 25\n\
             feature_subset_size = 4\n[output]\nmodel = \"model.json\"\n{extra}",
            wine.display()
        );
        let label = if extra.is_empty() { kind.to_string() } else { format!("{kind} (processes)") };
        let files: Result<Vec<_>, _> = ["1", "4", max.as_str()].iter().map(|t| run(t, &body)).collect();
        match files {
            Ok(f) if f.windows(2).all(|w| w[0] == w[1]) => checked.push(label),
            Ok(_) => failures.push(format!("{label} differs")),
            Err(e) => failures.push(format!("{label}: {e}")),
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "threads 1/4/{max}: identical for [{}]{}",
            checked.join(", "),
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join("; ")) }
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", c1_oracle),
        ("degenerate-trunk identity", c2_degenerate_trunk),
        ("California housing 10-fold CV", c3_housing_cv),
        ("wine 10-fold CV", c4_wine_cv),
        ("Friedman study", c5_friedman),
        ("trunk-depth sensitivity", c6_trunk_depth),
        ("trunk stability", c7_stability),
        ("bound validity", c8_bound_validity),
        ("numerical self-consistency", c9_self_consistency),
        ("determinism across thread counts", c10_determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    assert!(Path::new(&data::data_dir()).exists(), "data directory missing");
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let result = check();
        println!("criterion {id} ({name}): {}: {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
        if !result.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
