mod support;

use bayes_forest::cart::SplitRule;
use bayes_forest::stability::{
    analyze_node, candidate_splits, delta_stats, match_probability_gaussian, match_probability_mc, normal_cdf,
    reference_split, CandidateSplitStats,
};
use bayes_forest::{Dataset, Response};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use support::nodes::{linearized_gap, naive_match_probability, replicate, step_node};

fn all_rows(data: &Dataset) -> Vec<usize> {
    (0..data.n_rows()).collect()
}

/// Φ(x) by composite Simpson quadrature of the density from a far tail.
fn cdf_by_quadrature(x: f64) -> f64 {
    let density = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (a, b, m) = if x <= 0.0 { (-40.0, x, 200_000) } else { (x, 40.0, 200_000) };
    let h = (b - a) / m as f64;
    let mut s = density(a) + density(b);
    for k in 1..m {
        s += density(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    let tail = s * h / 3.0;
    if x <= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

#[test]
fn normal_cdf_matches_quadrature() {
    for k in -40..=40 {
        let x = k as f64 * 0.2;
        let q = cdf_by_quadrature(x);
        assert!((normal_cdf(x) - q).abs() < 1e-12, "x={x}: {} vs {q}", normal_cdf(x));
    }
}

#[test]
fn four_point_example_gives_minus_twenty_five() {
    let data = Dataset::from_rows(
        &[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
        Response::Real(vec![0.0, 0.0, 10.0, 10.0]),
    )
    .unwrap();
    let reference = SplitRule { feature: 0, threshold: 0.5 };
    let candidate = SplitRule { feature: 1, threshold: 0.5 };
    // Reference child means are 0 and 10, candidate child means are both 5.
    let by_hand: Vec<f64> = [0.0f64, 0.0, 10.0, 10.0]
        .iter()
        .zip([0.0f64, 0.0, 10.0, 10.0])
        .map(|(y, m1)| (y - m1).powi(2) - (y - 5.0).powi(2))
        .collect();
    let stats = delta_stats(&all_rows(&data), &data, &reference, &[candidate]).unwrap();
    assert_eq!(by_hand, vec![-25.0; 4]);
    assert_eq!(stats[0].dbar, -25.0);
    assert_eq!(stats[0].dss_over_n, 625.0);
    assert_eq!(stats[0].z, 1.0);
}

#[test]
fn gaps_are_non_positive_at_unit_weights() {
    let data = step_node(300, 3, 6, 0.8, 4);
    let rows = all_rows(&data);
    let candidates = candidate_splits(&rows, &data, 1).unwrap();
    let reference = reference_split(&rows, &data, &candidates).unwrap();
    let ones = vec![1.0; data.n_rows()];
    for (s, c) in delta_stats(&rows, &data, &reference, &candidates).unwrap().iter().zip(&candidates) {
        let direct = linearized_gap(&data, &reference, c, &ones);
        assert!((s.dbar - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        assert!(s.dbar <= 1e-12);
    }
}

#[test]
fn simulated_gaps_have_the_stated_mean_and_variance() {
    let data = step_node(250, 2, 5, 0.6, 21);
    let rows = all_rows(&data);
    let candidates = candidate_splits(&rows, &data, 1).unwrap();
    let reference = reference_split(&rows, &data, &candidates).unwrap();
    let stats = delta_stats(&rows, &data, &reference, &candidates).unwrap();
    let live: Vec<&CandidateSplitStats> = stats.iter().filter(|s| !s.exact_tie && !s.duplicate).collect();
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut sums = vec![(0.0, 0.0); live.len()];
    for _ in 0..draws {
        let theta: Vec<f64> = (0..data.n_rows()).map(|_| Exp1.sample(&mut rng)).collect();
        for (acc, s) in sums.iter_mut().zip(&live) {
            let g = linearized_gap(&data, &reference, &s.split, &theta);
            acc.0 += g;
            acc.1 += g * g;
        }
    }
    let n = data.n_rows() as f64;
    for ((sum, sq), s) in sums.iter().zip(&live) {
        let mean = sum / draws as f64;
        let var = sq / draws as f64 - mean * mean;
        let se = (var / draws as f64).sqrt();
        assert!((mean - s.dbar).abs() <= 3.0 * se, "mean {mean} vs {} (se {se})", s.dbar);
        let want = s.dss_over_n / n;
        assert!((var / want - 1.0).abs() <= 0.1, "var {var} vs {want}");
    }
}

#[test]
fn monte_carlo_agrees_with_independent_simulation() {
    for (seed, signal) in [(1u64, 0.5), (2, 0.9), (3, 1.5)] {
        let data = step_node(120, 2, 4, signal, seed);
        let rows = all_rows(&data);
        let candidates = candidate_splits(&rows, &data, 1).unwrap();
        let reference = reference_split(&rows, &data, &candidates).unwrap();
        let draws = 4000;
        let mc = match_probability_mc(&rows, &data, &reference, &candidates, draws, seed).unwrap();
        let naive = naive_match_probability(&data, &reference, &candidates, draws, seed + 100);
        let se = ((mc.estimate * (1.0 - mc.estimate) + naive * (1.0 - naive)) / draws as f64).sqrt();
        assert!((mc.estimate - naive).abs() <= 4.0 * se + 1e-12, "{} vs {naive}", mc.estimate);
    }
}

#[test]
fn bound_grows_with_replication() {
    let base = step_node(60, 2, 5, 1.0, 9);
    let mut last = -1.0;
    for times in [1, 2, 4, 8] {
        let data = replicate(&base, times);
        let report = analyze_node(&all_rows(&data), &data, 1, 0, 0).unwrap();
        assert!(report.gaussian_bound >= last);
        assert!(report.gaussian_bound > last || report.gaussian_bound == 1.0);
        last = report.gaussian_bound;
    }
    assert!(last > 0.9, "bound at 8x replication is only {last}");
}

#[test]
fn monte_carlo_covers_the_gaussian_bound() {
    for (k, n) in [80usize, 200, 500, 1500].into_iter().enumerate() {
        let data = step_node(n, 1 + k % 2, 4 + 3 * k, 6.0 / (n as f64).sqrt().sqrt(), 50 + k as u64);
        let report = analyze_node(&all_rows(&data), &data, 1, 1000, k as u64).unwrap();
        let mc = report.mc.unwrap();
        assert!(
            mc.estimate + 3.0 * mc.std_error >= report.gaussian_bound,
            "n={n}: MC {} vs bound {}",
            mc.estimate,
            report.gaussian_bound
        );
    }
}

fn stat(n: usize, z: f64) -> CandidateSplitStats {
    CandidateSplitStats {
        split: SplitRule { feature: 0, threshold: 0.0 },
        dbar: -z,
        dss_over_n: 1.0,
        z,
        n,
        exact_tie: false,
        duplicate: false,
    }
}

proptest! {
    #[test]
    fn exponential_bound_never_exceeds_gaussian(n in 1usize..100_000, zs in prop::collection::vec(1e-4f64..2.0, 1..30)) {
        let stats: Vec<_> = zs.iter().map(|&z| stat(n, z)).collect();
        let b = match_probability_gaussian(&stats).unwrap();
        prop_assert!(b.exponential <= b.gaussian + 1e-15);
        prop_assert!((0.0..=1.0).contains(&b.gaussian));
    }

    #[test]
    fn bound_is_monotone_in_sample_size(n in 1usize..10_000, zs in prop::collection::vec(1e-3f64..1.0, 1..20)) {
        let small: Vec<_> = zs.iter().map(|&z| stat(n, z)).collect();
        let large: Vec<_> = zs.iter().map(|&z| stat(2 * n, z)).collect();
        let a = match_probability_gaussian(&small).unwrap().gaussian;
        let b = match_probability_gaussian(&large).unwrap().gaussian;
        prop_assert!(b >= a);
    }
}
