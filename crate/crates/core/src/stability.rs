//! Split stability under posterior reweighting.
//!
//! Every candidate split is treated as a binary feature. For a reference
//! split `1` and a competitor `j`, the linearized impurity gap at weights θ is
//! Δ_j(θ) = (1/n) Σ θ_i d_ji with d_ji = (y_i − ȳ_1(x_i1))² − (y_i − ȳ_j(x_ij))²,
//! where ȳ are unweighted child means. Under Exp(1) weights Δ_j has mean d̄_j
//! and variance d_jᵀd_j/n², which gives Gaussian and exponential lower bounds
//! on the probability that a weighted fit picks the same split as the sample.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{fit_tree_sorted, midpoint, SortedColumns, SplitRule, Tree, TIE_RTOL};
use crate::data::{Dataset, Response};
use crate::ebf::TrunkConfig;
use crate::error::{Error, Result};
use crate::weights::{derive_seed, draw_weights_with, open_unit, rng_from_seed, WeightMode};

/// Threshold tolerance of the loose structural equality classes.
pub const STRUCTURE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSplitStats {
    pub split: SplitRule,
    /// d̄_j, mean of d_ji over the node.
    pub dbar: f64,
    /// d_jᵀd_j / n.
    pub dss_over_n: f64,
    /// |d̄_j| / sqrt(d_jᵀd_j / n); zero for exact ties.
    pub z: f64,
    pub n: usize,
    /// Same row partition as the reference.
    pub exact_tie: bool,
    /// Same row partition as an earlier candidate.
    pub duplicate: bool,
}

impl CandidateSplitStats {
    fn counts(&self) -> bool {
        !self.exact_tie && !self.duplicate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchBounds {
    pub gaussian: f64,
    pub exponential: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    /// Binomial standard error sqrt(p(1−p)/B).
    pub std_error: f64,
    pub draws: usize,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn unit_response(dataset: &Dataset) -> Result<&[f64]> {
    match dataset.response() {
        Response::Real(y) => Ok(y),
        Response::Class { .. } => Err(Error::invalid("split stability analysis needs a real response")),
    }
}

fn check_rows(node_rows: &[usize], n: usize) -> Result<()> {
    if node_rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = node_rows.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    Ok(())
}

/// Right-child indicators of `split` over the node rows.
fn indicator(node_rows: &[usize], dataset: &Dataset, split: &SplitRule) -> Result<Vec<bool>> {
    if split.feature >= dataset.n_features() {
        return Err(Error::IndexOutOfRange {
            index: split.feature,
            len: dataset.n_features(),
        });
    }
    let col = dataset.feature(split.feature);
    let right: Vec<bool> = node_rows.iter().map(|&i| col[i] > split.threshold).collect();
    let n_right = right.iter().filter(|&&r| r).count();
    if n_right == 0 || n_right == right.len() {
        return Err(Error::invalid(format!(
            "split x{} <= {} leaves a child empty",
            split.feature, split.threshold
        )));
    }
    Ok(right)
}

/// Unit-weight child means (ȳ(0), ȳ(1)).
fn child_means(y: &[f64], node_rows: &[usize], right: &[bool]) -> [f64; 2] {
    let mut sum = [0.0; 2];
    let mut cnt = [0.0; 2];
    for (&i, &r) in node_rows.iter().zip(right) {
        sum[r as usize] += y[i];
        cnt[r as usize] += 1.0;
    }
    [sum[0] / cnt[0], sum[1] / cnt[1]]
}

/// Unit-weight sum of squared errors of a binary split.
fn split_sse(y: &[f64], node_rows: &[usize], right: &[bool]) -> f64 {
    let m = child_means(y, node_rows, right);
    node_rows
        .iter()
        .zip(right)
        .map(|(&i, &r)| (y[i] - m[r as usize]).powi(2))
        .sum()
}

/// Every feature/midpoint split of the node leaving at least `min_leaf`
/// rows on each side, in (feature, threshold) order.
pub fn candidate_splits(node_rows: &[usize], dataset: &Dataset, min_leaf: usize) -> Result<Vec<SplitRule>> {
    check_rows(node_rows, dataset.n_rows())?;
    let min_leaf = min_leaf.max(1);
    let m = node_rows.len();
    let mut out = Vec::new();
    for j in 0..dataset.n_features() {
        let col = dataset.feature(j);
        let mut xs: Vec<f64> = node_rows.iter().map(|&i| col[i]).collect();
        xs.sort_unstable_by(f64::total_cmp);
        for k in 0..m.saturating_sub(1) {
            let n_left = k + 1;
            if xs[k] != xs[k + 1] && n_left >= min_leaf && m - n_left >= min_leaf {
                out.push(SplitRule {
                    feature: j,
                    threshold: midpoint(xs[k], xs[k + 1]),
                });
            }
        }
    }
    Ok(out)
}

/// Unit-weight impurity minimizer among `candidates`, earliest on ties.
pub fn reference_split(node_rows: &[usize], dataset: &Dataset, candidates: &[SplitRule]) -> Result<SplitRule> {
    let y = unit_response(dataset)?;
    check_rows(node_rows, dataset.n_rows())?;
    let mut best: Option<(f64, SplitRule)> = None;
    for c in candidates {
        let sse = split_sse(y, node_rows, &indicator(node_rows, dataset, c)?);
        if best.is_none_or(|(b, _)| sse < b - TIE_RTOL * b.abs()) {
            best = Some((sse, *c));
        }
    }
    best.map(|(_, s)| s).ok_or_else(|| Error::invalid("no candidate splits"))
}

/// d_j for one competitor against the reference.
pub fn delta_vector(
    node_rows: &[usize],
    dataset: &Dataset,
    reference: &SplitRule,
    candidate: &SplitRule,
) -> Result<Vec<f64>> {
    let y = unit_response(dataset)?;
    check_rows(node_rows, dataset.n_rows())?;
    let r1 = indicator(node_rows, dataset, reference)?;
    let rj = indicator(node_rows, dataset, candidate)?;
    let m1 = child_means(y, node_rows, &r1);
    let mj = child_means(y, node_rows, &rj);
    Ok(node_rows
        .iter()
        .enumerate()
        .map(|(k, &i)| (y[i] - m1[r1[k] as usize]).powi(2) - (y[i] - mj[rj[k] as usize]).powi(2))
        .collect())
}

/// Gap statistics of every candidate against the reference split.
pub fn delta_stats(
    node_rows: &[usize],
    dataset: &Dataset,
    reference: &SplitRule,
    candidates: &[SplitRule],
) -> Result<Vec<CandidateSplitStats>> {
    let y = unit_response(dataset)?;
    check_rows(node_rows, dataset.n_rows())?;
    let n = node_rows.len();
    let r1 = indicator(node_rows, dataset, reference)?;
    let sse1 = split_sse(y, node_rows, &r1);
    let scale = node_rows.iter().map(|&i| y[i] * y[i]).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    seen.insert(canonical(&r1));
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        let rj = indicator(node_rows, dataset, c)?;
        let key = canonical(&rj);
        let exact_tie = key == canonical(&r1);
        let duplicate = !exact_tie && !seen.insert(key);
        let ssej = split_sse(y, node_rows, &rj);
        if ssej < sse1 - TIE_RTOL * scale {
            return Err(Error::invalid(format!(
                "reference x{} <= {} is not optimal: x{} <= {} has lower impurity",
                reference.feature, reference.threshold, c.feature, c.threshold
            )));
        }
        let d = delta_vector(node_rows, dataset, reference, c)?;
        let dbar = d.iter().sum::<f64>() / n as f64;
        let dss_over_n = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let z = if exact_tie || dss_over_n == 0.0 {
            0.0
        } else {
            dbar.abs() / dss_over_n.sqrt()
        };
        out.push(CandidateSplitStats {
            split: *c,
            dbar,
            dss_over_n,
            z,
            n,
            exact_tie,
            duplicate,
        });
    }
    Ok(out)
}

/// Partitions are equal up to swapping the children.
fn canonical(right: &[bool]) -> Vec<bool> {
    if right[0] {
        right.iter().map(|r| !r).collect()
    } else {
        right.to_vec()
    }
}

/// Lower bounds on the probability that the weighted optimum matches the
/// reference: 1 − Σ Φ(−√n z_j) and 1 − (2π)^{−1/2} Σ exp(−n z_j²/2)/(z_j √n),
/// both clamped to [0, 1]. Exact ties and duplicates are skipped.
pub fn match_probability_gaussian(stats: &[CandidateSplitStats]) -> Result<MatchBounds> {
    if !stats.is_empty() && stats.iter().all(|s| !s.counts()) {
        return Err(Error::invalid("every candidate ties the reference; the bound is undefined"));
    }
    let mut gsum = 0.0;
    let mut esum = 0.0;
    for s in stats.iter().filter(|s| s.counts()) {
        let rz = (s.n as f64).sqrt() * s.z;
        gsum += normal_cdf(-rz);
        esum += if rz > 0.0 {
            (-rz * rz / 2.0).exp() / (rz * (2.0 * PI).sqrt())
        } else {
            f64::INFINITY
        };
    }
    Ok(MatchBounds {
        gaussian: (1.0 - gsum).clamp(0.0, 1.0),
        exponential: (1.0 - esum).clamp(0.0, 1.0),
    })
}

/// Prefix sums over one feature's sorted node rows, for fast weighted
/// impurity of every threshold on that feature.
struct FeatureScan {
    order: Vec<usize>,
    /// Number of sorted rows routed left, per candidate.
    cuts: Vec<(usize, usize)>,
}

/// Monte Carlo match probability: fraction of Exp(1) weight draws whose exact
/// weighted-impurity minimizer among the candidates is the reference.
pub fn match_probability_mc(
    node_rows: &[usize],
    dataset: &Dataset,
    reference: &SplitRule,
    candidates: &[SplitRule],
    draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    if draws < 1 {
        return Err(Error::invalid("need at least one Monte Carlo draw"));
    }
    let stats = delta_stats(node_rows, dataset, reference, candidates)?;
    let y = unit_response(dataset)?;
    let n = node_rows.len();
    let ys: Vec<f64> = node_rows.iter().map(|&i| y[i]).collect();

    // Competitors grouped by feature; reference is cut index 0 of its feature group.
    let mut groups: BTreeMap<usize, FeatureScan> = BTreeMap::new();
    let live: Vec<&SplitRule> = std::iter::once(reference)
        .chain(stats.iter().filter(|s| s.counts()).map(|s| &s.split))
        .collect();
    for (slot, s) in live.iter().enumerate() {
        let col = dataset.feature(s.feature);
        let g = groups.entry(s.feature).or_insert_with(|| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| col[node_rows[a]].total_cmp(&col[node_rows[b]]));
            FeatureScan { order, cuts: Vec::new() }
        });
        let n_left = g.order.partition_point(|&k| col[node_rows[k]] <= s.threshold);
        g.cuts.push((slot, n_left));
    }
    let n_live = live.len();

    let hits: usize = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from_seed(derive_seed(seed, b as u64));
            let theta: Vec<f64> = (0..n).map(|_| -open_unit(&mut rng).ln()).collect();
            let mut sse = vec![0.0; n_live];
            let total_w: f64 = theta.iter().sum();
            let total_wy: f64 = theta.iter().zip(&ys).map(|(t, y)| t * y).sum();
            let total_wyy: f64 = theta.iter().zip(&ys).map(|(t, y)| t * y * y).sum();
            for g in groups.values() {
                let mut pw = Vec::with_capacity(n + 1);
                let mut py = Vec::with_capacity(n + 1);
                let (mut a, mut c) = (0.0, 0.0);
                pw.push(0.0);
                py.push(0.0);
                for &k in &g.order {
                    a += theta[k];
                    c += theta[k] * ys[k];
                    pw.push(a);
                    py.push(c);
                }
                for &(slot, cut) in &g.cuts {
                    let (wl, sl) = (pw[cut], py[cut]);
                    let (wr, sr) = (total_w - wl, total_wy - sl);
                    sse[slot] = total_wyy - sl * sl / wl - sr * sr / wr;
                }
            }
            usize::from(sse[1..].iter().all(|&s| sse[0] < s))
        })
        .sum();
    let p = hits as f64 / draws as f64;
    Ok(McEstimate {
        estimate: p,
        std_error: (p * (1.0 - p) / draws as f64).sqrt(),
        draws,
    })
}

/// Bounds and optional Monte Carlo check for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub reference: SplitRule,
    pub stats: Vec<CandidateSplitStats>,
    pub gaussian_bound: f64,
    pub exp_bound: f64,
    pub mc: Option<McEstimate>,
    pub split_histograms: Option<SplitHistograms>,
}

/// Full single-node analysis: candidates, sample-optimal reference, gap
/// statistics, bounds and (when `mc_draws > 0`) a Monte Carlo estimate.
pub fn analyze_node(
    node_rows: &[usize],
    dataset: &Dataset,
    min_leaf: usize,
    mc_draws: usize,
    seed: u64,
) -> Result<StabilityReport> {
    let candidates = candidate_splits(node_rows, dataset, min_leaf)?;
    let reference = reference_split(node_rows, dataset, &candidates)?;
    let stats = delta_stats(node_rows, dataset, &reference, &candidates)?;
    let bounds = match_probability_gaussian(&stats)?;
    let mc = if mc_draws > 0 {
        Some(match_probability_mc(node_rows, dataset, &reference, &candidates, mc_draws, seed)?)
    } else {
        None
    };
    Ok(StabilityReport {
        reference,
        stats,
        gaussian_bound: bounds.gaussian,
        exp_bound: bounds.exponential,
        mc,
        split_histograms: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramEntry {
    pub depth: usize,
    pub feature: usize,
    pub threshold: f64,
    pub count: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureClass {
    /// Draw index of the first member.
    pub representative: usize,
    pub key: String,
    pub count: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitHistograms {
    pub draws: usize,
    /// Root splits (depth 1) and splits of the root's children (depth 2).
    pub entries: Vec<HistogramEntry>,
    /// Feature of the root split, per draw.
    pub first_features: Vec<Option<usize>>,
    /// Feature of the highest-gain split among the root's children, per draw.
    pub second_features: Vec<Option<usize>>,
    /// Trunk classes with thresholds compared exactly, most frequent first.
    pub strict_classes: Vec<StructureClass>,
    /// Trunk classes with thresholds within `STRUCTURE_TOL`.
    pub tolerant_classes: Vec<StructureClass>,
    /// Trunk classes by topology and split features, thresholds ignored.
    pub feature_classes: Vec<StructureClass>,
}

impl SplitHistograms {
    /// Share of draws whose first and second splits both use `feature`.
    pub fn first_two_on(&self, feature: usize) -> f64 {
        let hits = self
            .first_features
            .iter()
            .zip(&self.second_features)
            .filter(|(a, b)| **a == Some(feature) && **b == Some(feature))
            .count();
        hits as f64 / self.draws as f64
    }

    /// Frequency of the most common trunk under strict equality.
    pub fn modal_frequency(&self) -> f64 {
        self.strict_classes.first().map_or(0.0, |c| c.frequency)
    }

    /// Frequency of the most common trunk by topology and split features.
    pub fn modal_feature_frequency(&self) -> f64 {
        self.feature_classes.first().map_or(0.0, |c| c.frequency)
    }

    /// CSV with columns depth, feature, threshold, frequency.
    pub fn to_csv(&self, feature_names: &[String]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Internal(e.to_string());
        w.write_record(["depth", "feature", "threshold", "frequency"]).map_err(io)?;
        for e in &self.entries {
            let name = feature_names.get(e.feature).cloned().unwrap_or_else(|| format!("x{}", e.feature));
            w.write_record([
                e.depth.to_string(),
                name,
                e.threshold.to_string(),
                e.frequency.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }
}

fn second_split(tree: &Tree) -> Option<usize> {
    let (l, r) = tree.root().children()?;
    [l, r]
        .into_iter()
        .filter(|&c| !tree.nodes[c].is_leaf())
        .max_by(|&a, &b| tree.gain(a).total_cmp(&tree.gain(b)).then(b.cmp(&a)))
}

fn classes_by<F: Fn(&Tree, &Tree) -> bool>(trees: &[Tree], key: fn(&Tree) -> String, same: F) -> Vec<StructureClass> {
    let mut classes: Vec<StructureClass> = Vec::new();
    for (b, t) in trees.iter().enumerate() {
        match classes.iter_mut().find(|c| same(&trees[c.representative], t)) {
            Some(c) => c.count += 1,
            None => classes.push(StructureClass {
                representative: b,
                key: key(t),
                count: 1,
                frequency: 0.0,
            }),
        }
    }
    let total = trees.len() as f64;
    for c in &mut classes {
        c.frequency = c.count as f64 / total;
    }
    classes.sort_by(|a, b| b.count.cmp(&a.count).then(a.representative.cmp(&b.representative)));
    classes
}

/// Summaries of the trunks fit to the first and second levels under `draws`
/// posterior weight draws: split location histograms and structural classes.
pub fn split_posterior_distribution(
    dataset: &Dataset,
    weight_mode: WeightMode,
    trunk: &TrunkConfig,
    draws: usize,
    seed: u64,
) -> Result<(Vec<Tree>, SplitHistograms)> {
    if draws < 1 {
        return Err(Error::invalid("need at least one posterior draw"));
    }
    let config = trunk.fit_config();
    config.validate(dataset.n_features())?;
    let sorted = SortedColumns::new(dataset);
    let trees = (0..draws as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from_seed(derive_seed(seed, b));
            let w = draw_weights_with(dataset.n_rows(), weight_mode, &mut rng)?;
            fit_tree_sorted(dataset, &sorted, &w, &config, None, Some(rng))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut counts: BTreeMap<(usize, usize, u64), usize> = BTreeMap::new();
    let mut per_depth = [0usize; 2];
    let mut first_features = Vec::with_capacity(draws);
    let mut second_features = Vec::with_capacity(draws);
    for t in &trees {
        first_features.push(t.root().split_rule().map(|s| s.feature));
        second_features.push(second_split(t).and_then(|id| t.nodes[id].split_rule()).map(|s| s.feature));
        let mut record = |depth: usize, s: SplitRule| {
            *counts.entry((depth, s.feature, s.threshold.to_bits())).or_default() += 1;
            per_depth[depth - 1] += 1;
        };
        if let Some(s) = t.root().split_rule() {
            record(1, s);
        }
        if let Some((l, r)) = t.root().children() {
            for c in [l, r] {
                if let Some(s) = t.nodes[c].split_rule() {
                    record(2, s);
                }
            }
        }
    }
    let mut entries: Vec<HistogramEntry> = counts
        .into_iter()
        .map(|((depth, feature, bits), count)| HistogramEntry {
            depth,
            feature,
            threshold: f64::from_bits(bits),
            count,
            frequency: count as f64 / per_depth[depth - 1] as f64,
        })
        .collect();
    entries.sort_by(|a, b| {
        (a.depth, a.feature)
            .cmp(&(b.depth, b.feature))
            .then(a.threshold.total_cmp(&b.threshold))
    });

    let strict_classes = classes_by(&trees, Tree::structure_key, |a, b| a.structure_key() == b.structure_key());
    let tolerant_classes = classes_by(&trees, Tree::structure_key, |a, b| a.same_structure(b, STRUCTURE_TOL));
    let feature_classes = classes_by(&trees, Tree::feature_structure_key, |a, b| {
        a.feature_structure_key() == b.feature_structure_key()
    });
    let hist = SplitHistograms {
        draws,
        entries,
        first_features,
        second_features,
        strict_classes,
        tolerant_classes,
        feature_classes,
    };
    Ok((trees, hist))
}
