//! Synthetic single-node regression problems for split stability checks.

#![allow(dead_code)]

use bayes_forest::cart::SplitRule;
use bayes_forest::{Dataset, Response};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// `features` integer features on `levels` levels; y steps by `signal` when
/// x0 crosses its middle level, plus N(0, 1) noise. Every split of a feature
/// on `levels` levels gives `levels - 1` candidates.
pub fn step_node(n: usize, features: usize, levels: usize, signal: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns = vec![Vec::with_capacity(n); features];
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        for (j, col) in columns.iter_mut().enumerate() {
            // Cycle x0 through its levels so every level is present.
            let v = if j == 0 { i % levels } else { rng.random_range(0..levels) };
            col.push(v as f64);
        }
        let noise: f64 = StandardNormal.sample(&mut rng);
        let step = if columns[0][i] >= (levels / 2) as f64 { signal } else { 0.0 };
        y.push(step + noise);
    }
    let names = (0..features).map(|j| format!("x{j}")).collect();
    Dataset::new(columns, Response::Real(y), names).unwrap()
}

/// Each row repeated `times` times in a row.
pub fn replicate(data: &Dataset, times: usize) -> Dataset {
    let rows: Vec<usize> = (0..data.n_rows()).flat_map(|i| std::iter::repeat_n(i, times)).collect();
    bayes_forest::data::subset(data, &rows).unwrap()
}

fn response(data: &Dataset) -> &[f64] {
    match data.response() {
        Response::Real(y) => y,
        Response::Class { .. } => panic!("regression node expected"),
    }
}

/// Right-child flags of `split` over all rows.
pub fn sides(data: &Dataset, split: &SplitRule) -> Vec<bool> {
    data.feature(split.feature).iter().map(|&v| v > split.threshold).collect()
}

/// Unit-weight child means.
pub fn child_means(y: &[f64], right: &[bool]) -> [f64; 2] {
    let (mut s, mut c) = ([0.0; 2], [0.0; 2]);
    for (v, &r) in y.iter().zip(right) {
        s[r as usize] += v;
        c[r as usize] += 1.0;
    }
    [s[0] / c[0], s[1] / c[1]]
}

/// Δ_j(θ) = σ̃²_ref − σ̃²_j with the child means frozen at their
/// unit-weight values.
pub fn linearized_gap(data: &Dataset, reference: &SplitRule, candidate: &SplitRule, theta: &[f64]) -> f64 {
    let y = response(data);
    let (r1, rj) = (sides(data, reference), sides(data, candidate));
    let (m1, mj) = (child_means(y, &r1), child_means(y, &rj));
    let n = y.len() as f64;
    let s1: f64 = (0..y.len()).map(|i| theta[i] * (y[i] - m1[r1[i] as usize]).powi(2)).sum();
    let sj: f64 = (0..y.len()).map(|i| theta[i] * (y[i] - mj[rj[i] as usize]).powi(2)).sum();
    (s1 - sj) / n
}

/// Exact θ-weighted SSE of a split.
pub fn weighted_sse(y: &[f64], right: &[bool], theta: &[f64]) -> f64 {
    let (mut w, mut s) = ([0.0; 2], [0.0; 2]);
    for i in 0..y.len() {
        w[right[i] as usize] += theta[i];
        s[right[i] as usize] += theta[i] * y[i];
    }
    let m = [s[0] / w[0], s[1] / w[1]];
    (0..y.len()).map(|i| theta[i] * (y[i] - m[right[i] as usize]).powi(2)).sum()
}

/// Independent Monte Carlo of the probability that the reference partition
/// is the strict weighted-SSE minimizer among all candidate partitions.
pub fn naive_match_probability(data: &Dataset, reference: &SplitRule, candidates: &[SplitRule], draws: usize, seed: u64) -> f64 {
    let y = response(data);
    let r1 = sides(data, reference);
    let canon = |r: &[bool]| -> Vec<bool> { if r[0] { r.iter().map(|b| !b).collect() } else { r.to_vec() } };
    let key1 = canon(&r1);
    let mut others: Vec<Vec<bool>> = Vec::new();
    for c in candidates {
        let r = sides(data, c);
        let k = canon(&r);
        if k != key1 && !others.iter().any(|o| canon(o) == k) {
            others.push(r);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..draws {
        let theta: Vec<f64> = (0..y.len()).map(|_| Exp1.sample(&mut rng)).collect();
        let s1 = weighted_sse(y, &r1, &theta);
        if others.iter().all(|r| s1 < weighted_sse(y, r, &theta)) {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}
