//! Exhaustive-split reference CART for unit weights.
//!
//! Every node tries every midpoint of every feature by filtering the rows
//! directly and recomputing impurities from scratch. Growth is plain
//! depth-first recursion with no size cap.

#![allow(dead_code)]

use bayes_forest::cart::{midpoint, NodeKind, TIE_RTOL};
use bayes_forest::{Dataset, LeafValue, Response, Tree};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleTree {
    Leaf(LeafValue),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<OracleTree>,
        right: Box<OracleTree>,
    },
}

impl OracleTree {
    pub fn n_leaves(&self) -> usize {
        match self {
            OracleTree::Leaf(_) => 1,
            OracleTree::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

fn sse(y: &[f64], rows: &[usize]) -> f64 {
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
    rows.iter().map(|&i| (y[i] - mean).powi(2)).sum()
}

fn gini_mass(labels: &[usize], k: usize, rows: &[usize]) -> f64 {
    let mut counts = vec![0.0; k];
    for &i in rows {
        counts[labels[i]] += 1.0;
    }
    let n = rows.len() as f64;
    n - counts.iter().map(|c| c * c).sum::<f64>() / n
}

fn impurity(response: &Response, rows: &[usize]) -> f64 {
    match response {
        Response::Real(y) => sse(y, rows),
        Response::Class { labels, classes } => gini_mass(labels, classes.len(), rows),
    }
}

fn is_pure(response: &Response, rows: &[usize]) -> bool {
    match response {
        Response::Real(y) => rows.iter().all(|&i| y[i] == y[rows[0]]),
        Response::Class { labels, .. } => rows.iter().all(|&i| labels[i] == labels[rows[0]]),
    }
}

fn tie_scale(response: &Response, rows: &[usize]) -> f64 {
    match response {
        Response::Real(y) => sse(y, rows),
        Response::Class { .. } => rows.len() as f64,
    }
}

fn leaf(response: &Response, rows: &[usize]) -> LeafValue {
    let mut sorted = rows.to_vec();
    sorted.sort_unstable();
    let n: f64 = sorted.iter().map(|_| 1.0).sum();
    match response {
        Response::Real(y) => LeafValue::Mean(sorted.iter().map(|&i| 1.0 * y[i]).sum::<f64>() / n),
        Response::Class { labels, classes } => {
            let mut mass = vec![0.0; classes.len()];
            for &i in &sorted {
                mass[labels[i]] += 1.0;
            }
            LeafValue::Proportions(mass.iter().map(|m| m / n).collect())
        }
    }
}

/// Reference tree on all rows of `data` with unit weights.
pub fn oracle_tree(data: &Dataset, min_leaf: usize) -> OracleTree {
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    grow(data, &rows, min_leaf)
}

fn grow(data: &Dataset, rows: &[usize], min_leaf: usize) -> OracleTree {
    let response = data.response();
    if rows.len() < 2 * min_leaf || is_pure(response, rows) {
        return OracleTree::Leaf(leaf(response, rows));
    }
    let node = impurity(response, rows);
    let tol = TIE_RTOL * tie_scale(response, rows);
    let mut best: Option<(f64, usize, f64)> = None;
    for j in 0..data.n_features() {
        let col = data.feature(j);
        let mut values: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = midpoint(w[0], w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let score = impurity(response, &l) + impurity(response, &r);
            if best.is_none_or(|(b, _, _)| score < b - tol) {
                best = Some((score, j, t));
            }
        }
    }
    match best {
        Some((score, feature, threshold)) if score < node - tol => {
            let col = data.feature(feature);
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= threshold);
            OracleTree::Split {
                feature,
                threshold,
                left: Box::new(grow(data, &l, min_leaf)),
                right: Box::new(grow(data, &r, min_leaf)),
            }
        }
        _ => OracleTree::Leaf(leaf(response, rows)),
    }
}

/// Exact comparison: topology, features, threshold bits and leaf value bits.
pub fn compare(tree: &Tree, oracle: &OracleTree) -> Result<(), String> {
    compare_node(tree, 0, oracle, "root")
}

fn compare_node(tree: &Tree, id: usize, oracle: &OracleTree, path: &str) -> Result<(), String> {
    match (&tree.nodes[id].kind, oracle) {
        (NodeKind::Leaf(a), OracleTree::Leaf(b)) => {
            let same = match (a, b) {
                (LeafValue::Mean(x), LeafValue::Mean(y)) => x.to_bits() == y.to_bits(),
                (LeafValue::Proportions(x), LeafValue::Proportions(y)) => {
                    x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
                }
                _ => false,
            };
            if same {
                Ok(())
            } else {
                Err(format!("{path}: leaf {a:?} vs oracle {b:?}"))
            }
        }
        (
            NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            },
            OracleTree::Split {
                feature: of,
                threshold: ot,
                left: ol,
                right: or,
            },
        ) => {
            if feature != of || threshold.to_bits() != ot.to_bits() {
                return Err(format!("{path}: x{feature} <= {threshold} vs oracle x{of} <= {ot}"));
            }
            compare_node(tree, *left, ol, &format!("{path}.L"))?;
            compare_node(tree, *right, or, &format!("{path}.R"))
        }
        (a, b) => Err(format!("{path}: {a:?} vs oracle {b:?}")),
    }
}

/// Small random problem: n ≤ 50, p ≤ 5, a mix of coarse grids (many ties)
/// and continuous features. Returns the data and a minimum leaf count.
pub fn random_instance(rng: &mut impl Rng, classification: bool) -> (Dataset, usize) {
    let n = rng.random_range(2..=50);
    let p = rng.random_range(1..=5);
    let mut columns = Vec::with_capacity(p);
    for _ in 0..p {
        let levels = [2usize, 3, 5, 10, 0][rng.random_range(0..5)];
        let col: Vec<f64> = (0..n)
            .map(|_| {
                if levels == 0 {
                    rng.random_range(-10.0..10.0)
                } else {
                    rng.random_range(0..levels) as f64
                }
            })
            .collect();
        columns.push(col);
    }
    let response = if classification {
        let k = rng.random_range(2..=4);
        let labels: Vec<usize> = (0..n)
            .map(|i| {
                if rng.random_bool(0.7) {
                    (columns[0][i].abs() as usize) % k
                } else {
                    rng.random_range(0..k)
                }
            })
            .collect();
        Response::Class {
            labels,
            classes: (0..k).map(|c| format!("c{c}")).collect(),
        }
    } else {
        let integer = rng.random_bool(0.3);
        Response::Real(
            (0..n)
                .map(|i| {
                    let v = columns[0][i] + rng.random_range(-3.0..3.0);
                    if integer {
                        v.round()
                    } else {
                        v
                    }
                })
                .collect(),
        )
    };
    let names = (0..p).map(|j| format!("x{j}")).collect();
    let data = Dataset::new(columns, response, names).expect("valid instance");
    (data, rng.random_range(1..=5))
}
