//! Weighted CART.
//!
//! Trees minimize θ-weighted squared error (regression) or mass-scaled
//! weighted Gini impurity (classification). Split search is exact: every
//! midpoint between consecutive distinct values of every eligible feature is
//! scored. Each feature keeps its rows presorted and every node owns one
//! contiguous segment of those orders, so a split is a stable partition of
//! the segment instead of a re-sort.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Response, Task};
use crate::error::{Error, Result};
use crate::weights::{rng_from_seed, WeightVector};

/// Relative tolerance under which two candidate scores count as tied.
/// Tied candidates fall back to (feature index, threshold) order.
pub const TIE_RTOL: f64 = 1e-10;

/// Go left iff `x[feature] <= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature: usize,
    pub threshold: f64,
}

impl SplitRule {
    #[inline]
    pub fn goes_left(&self, x: &[f64]) -> bool {
        x[self.feature] <= self.threshold
    }
}

/// Threshold halfway between two consecutive distinct sorted values, kept
/// strictly below `hi` so that `hi` always routes right.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafValue {
    Mean(f64),
    Proportions(Vec<f64>),
}

impl LeafValue {
    /// Regression mean; for classification the proportion of class 1 is not
    /// meaningful, so this returns the argmax index instead.
    pub fn value(&self) -> f64 {
        match self {
            LeafValue::Mean(m) => *m,
            LeafValue::Proportions(p) => argmax(p) as f64,
        }
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(LeafValue),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub parent: Option<usize>,
    pub depth: usize,
    /// Node impurity under the fitting weights.
    pub impurity: f64,
    /// |θ^η|, the fitting weight reaching the node.
    pub weight_mass: f64,
    /// Positive-weight training rows reaching the node, each count-weighted
    /// row counted once per copy.
    pub count: usize,
    #[serde(flatten)]
    pub kind: NodeKind,
}

impl Node {
    pub fn split_rule(&self) -> Option<SplitRule> {
        match self.kind {
            NodeKind::Split { feature, threshold, .. } => Some(SplitRule { feature, threshold }),
            NodeKind::Leaf(_) => None,
        }
    }

    pub fn children(&self) -> Option<(usize, usize)> {
        match self.kind {
            NodeKind::Split { left, right, .. } => Some((left, right)),
            NodeKind::Leaf(_) => None,
        }
    }

    pub fn leaf_value(&self) -> Option<&LeafValue> {
        match &self.kind {
            NodeKind::Leaf(v) => Some(v),
            NodeKind::Split { .. } => None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Minimum positive-weight observations per leaf; a row with count
    /// weight k counts k times.
    pub min_leaf_count: Option<usize>,
    /// Minimum leaf weight as a fraction of the tree's total weight.
    pub min_leaf_weight: Option<f64>,
    /// Best-first growth stops at this many leaves.
    pub max_leaves: Option<usize>,
    /// Features sampled per node; `None` uses all of them.
    pub feature_subset_size: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            min_leaf_count: Some(3),
            min_leaf_weight: None,
            max_leaves: None,
            feature_subset_size: None,
        }
    }
}

impl FitConfig {
    pub fn with_min_leaf(min_leaf_count: usize) -> Self {
        FitConfig {
            min_leaf_count: Some(min_leaf_count),
            ..FitConfig::default()
        }
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.min_leaf_count.is_none() && self.min_leaf_weight.is_none() {
            return Err(Error::invalid("one of min_leaf_count or min_leaf_weight must be set"));
        }
        if self.min_leaf_count == Some(0) {
            return Err(Error::invalid("min_leaf_count must be at least 1"));
        }
        if let Some(w) = self.min_leaf_weight {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::invalid(format!("min_leaf_weight {w} outside (0, 1]")));
            }
        }
        if self.max_leaves == Some(0) {
            return Err(Error::invalid("max_leaves must be at least 1"));
        }
        if let Some(m) = self.feature_subset_size {
            if m == 0 || m > n_features {
                return Err(Error::invalid(format!(
                    "feature_subset_size {m} outside 1..={n_features}"
                )));
            }
        }
        Ok(())
    }

    fn min_count(&self) -> usize {
        self.min_leaf_count.unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub task: Task,
    pub n_features: usize,
    #[serde(default)]
    pub n_classes: usize,
    pub config: FitConfig,
    pub nodes: Vec<Node>,
}

const TREE_FORMAT: &str = "bayes-forest/tree";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TreeDocument {
    format: String,
    version: u32,
    #[serde(flatten)]
    tree: Tree,
}

impl Tree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn leaf_ids(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    /// Leaf reached by `x`.
    pub fn leaf_id(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.leaf_id_unchecked(x))
    }

    #[inline]
    pub(crate) fn leaf_id_unchecked(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id].kind {
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[feature] <= threshold { left } else { right },
                NodeKind::Leaf(_) => return id,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<&LeafValue> {
        let id = self.leaf_id(x)?;
        Ok(self.nodes[id].leaf_value().expect("leaf"))
    }

    /// Splits ordered by impurity reduction, largest first.
    pub fn splits_by_gain(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.nodes.len()).filter(|&i| !self.nodes[i].is_leaf()).collect();
        ids.sort_by(|&a, &b| self.gain(b).total_cmp(&self.gain(a)).then(a.cmp(&b)));
        ids
    }

    /// Impurity reduction achieved by splitting node `id` (0 for leaves).
    pub fn gain(&self, id: usize) -> f64 {
        match self.nodes[id].children() {
            Some((l, r)) => self.nodes[id].impurity - self.nodes[l].impurity - self.nodes[r].impurity,
            None => 0.0,
        }
    }

    /// Same topology, split features and leaf/threshold values, ignoring node
    /// numbering. Thresholds compare within `threshold_tol`.
    pub fn same_structure(&self, other: &Tree, threshold_tol: f64) -> bool {
        fn walk(a: &Tree, ia: usize, b: &Tree, ib: usize, tol: f64) -> bool {
            match (&a.nodes[ia].kind, &b.nodes[ib].kind) {
                (NodeKind::Leaf(_), NodeKind::Leaf(_)) => true,
                (
                    NodeKind::Split {
                        feature: fa,
                        threshold: ta,
                        left: la,
                        right: ra,
                    },
                    NodeKind::Split {
                        feature: fb,
                        threshold: tb,
                        left: lb,
                        right: rb,
                    },
                ) => {
                    fa == fb
                        && (ta == tb || (ta - tb).abs() <= tol)
                        && walk(a, *la, b, *lb, tol)
                        && walk(a, *ra, b, *rb, tol)
                }
                _ => false,
            }
        }
        walk(self, 0, other, 0, threshold_tol)
    }

    /// Canonical string of the split structure (depth-first, thresholds to
    /// full precision), usable as a hash key for structural equality.
    pub fn structure_key(&self) -> String {
        fn walk(t: &Tree, id: usize, out: &mut String) {
            match t.nodes[id].kind {
                NodeKind::Leaf(_) => out.push('L'),
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push_str(&format!("(x{feature}<={threshold:?} "));
                    walk(t, left, out);
                    out.push(' ');
                    walk(t, right, out);
                    out.push(')');
                }
            }
        }
        let mut s = String::new();
        walk(self, 0, &mut s);
        s
    }

    /// Like [`Tree::structure_key`] but without thresholds: topology and
    /// split features only.
    pub fn feature_structure_key(&self) -> String {
        fn walk(t: &Tree, id: usize, out: &mut String) {
            match t.nodes[id].kind {
                NodeKind::Leaf(_) => out.push('L'),
                NodeKind::Split { feature, left, right, .. } => {
                    out.push_str(&format!("(x{feature} "));
                    walk(t, left, out);
                    out.push(' ');
                    walk(t, right, out);
                    out.push(')');
                }
            }
        }
        let mut s = String::new();
        walk(self, 0, &mut s);
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TreeDocument {
            format: TREE_FORMAT.into(),
            version: FORMAT_VERSION,
            tree: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: TreeDocument = serde_json::from_str(s)?;
        if doc.format != TREE_FORMAT || doc.version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported tree document {} v{}",
                doc.format, doc.version
            )));
        }
        Ok(doc.tree)
    }
}

/// Borrowed response values for impurity computations.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Real(&'a [f64]),
    Class { labels: &'a [usize], n_classes: usize },
}

impl<'a> Target<'a> {
    pub fn of(response: &'a Response) -> Self {
        match response {
            Response::Real(y) => Target::Real(y),
            Response::Class { labels, classes } => Target::Class {
                labels,
                n_classes: classes.len(),
            },
        }
    }

    fn len(&self) -> usize {
        match self {
            Target::Real(y) => y.len(),
            Target::Class { labels, .. } => labels.len(),
        }
    }
}

/// Weighted impurity of a node: Σ θ_i (y_i − μ)² for regression, or
/// |θ| (1 − Σ_k p_k²) for classification.
pub fn node_impurity(target: Target<'_>, weights: &[f64]) -> Result<f64> {
    if target.len() != weights.len() {
        return Err(Error::invalid("responses and weights differ in length"));
    }
    if weights.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeight);
    }
    Ok(match target {
        Target::Real(y) => {
            let mu = y.iter().zip(weights).map(|(y, w)| w * y).sum::<f64>() / total;
            y.iter().zip(weights).map(|(y, w)| w * (y - mu) * (y - mu)).sum()
        }
        Target::Class { labels, n_classes } => {
            let mut mass = vec![0.0; n_classes];
            for (&l, &w) in labels.iter().zip(weights) {
                mass[l] += w;
            }
            let sum_sq: f64 = mass.iter().map(|m| (m / total) * (m / total)).sum();
            total * (1.0 - sum_sq)
        }
    })
}

/// Row order of every feature, ascending by (value, row index).
#[derive(Debug, Clone)]
pub struct SortedColumns {
    orders: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(dataset: &Dataset) -> Self {
        let n = dataset.n_rows();
        assert!(n <= u32::MAX as usize, "too many rows");
        let orders = dataset
            .columns()
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_unstable_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        SortedColumns { orders }
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    x: f64,
    y: f64,
    w: f64,
    row: u32,
    /// Copies the row stands for in leaf counts.
    c: u32,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
    n_left: usize,
}

/// Frontier node awaiting a split decision.
struct Pending {
    id: usize,
    start: usize,
    end: usize,
    best: Option<Candidate>,
}

struct HeapItem {
    gain: f64,
    id: usize,
    slot: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on gain, earlier node first on ties
        self.gain.total_cmp(&other.gain).then(other.id.cmp(&self.id))
    }
}

struct NodeStats {
    weight: f64,
    count: usize,
    impurity: f64,
    /// Scale for tie tolerances.
    scale: f64,
    pure: bool,
    center: f64,
    class_mass: Vec<f64>,
}

struct Grower<'a> {
    task: Task,
    n_classes: usize,
    config: &'a FitConfig,
    total_weight: f64,
    entries: Vec<Vec<Entry>>,
    scratch: Vec<Entry>,
    goes_left: Vec<bool>,
    rng: Option<ChaCha8Rng>,
    n_features: usize,
}

impl<'a> Grower<'a> {
    fn new(
        dataset: &Dataset,
        sorted: &SortedColumns,
        weights: &WeightVector,
        members: Option<&[bool]>,
        config: &'a FitConfig,
        rng: Option<ChaCha8Rng>,
    ) -> Result<Self> {
        let n = dataset.n_rows();
        let y = dataset.response_values();
        let counts = weights.is_counts();
        let weights = weights.theta();
        let keep = |r: usize| weights[r] > 0.0 && members.is_none_or(|m| m[r]);
        let entries: Vec<Vec<Entry>> = sorted
            .orders
            .iter()
            .enumerate()
            .map(|(j, order)| {
                let col = dataset.feature(j);
                order
                    .iter()
                    .filter(|&&r| keep(r as usize))
                    .map(|&r| Entry {
                        x: col[r as usize],
                        y: y[r as usize],
                        w: weights[r as usize],
                        row: r,
                        c: if counts { weights[r as usize] as u32 } else { 1 },
                    })
                    .collect()
            })
            .collect();
        let m = entries[0].len();
        if m == 0 {
            return Err(Error::ZeroWeight);
        }
        let total_weight = entries[0].iter().map(|e| e.w).sum();
        Ok(Grower {
            task: dataset.task(),
            n_classes: dataset.n_classes(),
            config,
            total_weight,
            scratch: Vec::with_capacity(m),
            goes_left: vec![false; n],
            n_features: entries.len(),
            entries,
            rng,
        })
    }

    fn stats(&self, start: usize, end: usize) -> NodeStats {
        let seg = &self.entries[0][start..end];
        let weight: f64 = seg.iter().map(|e| e.w).sum();
        let count = seg.iter().map(|e| e.c as usize).sum();
        match self.task {
            Task::Regression => {
                let center = seg.iter().map(|e| e.w * e.y).sum::<f64>() / weight;
                let (mut s1, mut s2) = (0.0, 0.0);
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for e in seg {
                    let d = e.y - center;
                    s1 += e.w * d;
                    s2 += e.w * d * d;
                    lo = lo.min(e.y);
                    hi = hi.max(e.y);
                }
                let pure = lo == hi;
                let impurity = if pure { 0.0 } else { (s2 - s1 * s1 / weight).max(0.0) };
                NodeStats {
                    weight,
                    count,
                    impurity,
                    scale: s2,
                    pure,
                    center,
                    class_mass: Vec::new(),
                }
            }
            Task::Classification => {
                let mut class_mass = vec![0.0; self.n_classes];
                for e in seg {
                    class_mass[e.y as usize] += e.w;
                }
                let pure = class_mass.iter().filter(|&&m| m > 0.0).count() <= 1;
                let impurity = if pure {
                    0.0
                } else {
                    (weight - class_mass.iter().map(|m| m * m).sum::<f64>() / weight).max(0.0)
                };
                NodeStats {
                    weight,
                    count,
                    impurity,
                    scale: weight,
                    pure,
                    center: 0.0,
                    class_mass,
                }
            }
        }
    }

    fn leaf_feasible(&self, count: usize, weight: f64) -> bool {
        count >= self.config.min_count()
            && self
                .config
                .min_leaf_weight
                .is_none_or(|mw| weight / self.total_weight >= mw)
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        match (self.config.feature_subset_size, self.rng.as_mut()) {
            (Some(m), Some(rng)) if m < self.n_features => {
                let mut f = sample(rng, self.n_features, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.n_features).collect(),
        }
    }

    /// Best split of the segment, or `None` when no feasible candidate
    /// strictly reduces impurity.
    fn search(&mut self, start: usize, end: usize, stats: &NodeStats) -> Option<Candidate> {
        let m = end - start;
        let min_count = self.config.min_count();
        if stats.pure || stats.count < 2 * min_count {
            return None;
        }
        let tol = TIE_RTOL * stats.scale;
        let mut best: Option<Candidate> = None;
        let features = self.candidate_features();
        let mut left_mass = vec![0.0; self.n_classes];
        for j in features {
            let seg = &self.entries[j][start..end];
            if seg[0].x == seg[m - 1].x {
                continue;
            }
            let (mut wl, mut s1l, mut s2l) = (0.0, 0.0, 0.0);
            left_mass.iter_mut().for_each(|v| *v = 0.0);
            let (s1, s2) = if self.task == Task::Regression {
                seg.iter().fold((0.0, 0.0), |(a, b), e| {
                    let d = e.y - stats.center;
                    (a + e.w * d, b + e.w * d * d)
                })
            } else {
                (0.0, 0.0)
            };
            let mut cl = 0;
            for k in 0..m - 1 {
                let e = seg[k];
                cl += e.c as usize;
                if stats.count - cl < min_count {
                    break;
                }
                wl += e.w;
                match self.task {
                    Task::Regression => {
                        let d = e.y - stats.center;
                        s1l += e.w * d;
                        s2l += e.w * d * d;
                    }
                    Task::Classification => left_mass[e.y as usize] += e.w,
                }
                if cl < min_count || e.x == seg[k + 1].x {
                    continue;
                }
                let wr = stats.weight - wl;
                if !self.leaf_feasible(cl, wl) || !self.leaf_feasible(stats.count - cl, wr) {
                    continue;
                }
                let score = match self.task {
                    Task::Regression => {
                        let s1r = s1 - s1l;
                        let s2r = s2 - s2l;
                        (s2l - s1l * s1l / wl) + (s2r - s1r * s1r / wr)
                    }
                    Task::Classification => {
                        let mut ql = 0.0;
                        let mut qr = 0.0;
                        for (c, &ml) in left_mass.iter().enumerate() {
                            let mr = stats.class_mass[c] - ml;
                            ql += ml * ml;
                            qr += mr * mr;
                        }
                        (wl - ql / wl) + (wr - qr / wr)
                    }
                };
                if best.is_none_or(|b| score < b.score - tol) {
                    best = Some(Candidate {
                        score,
                        feature: j,
                        threshold: midpoint(e.x, seg[k + 1].x),
                        n_left: k + 1,
                    });
                }
            }
        }
        best.filter(|b| b.score < stats.impurity - tol)
    }

    fn partition(&mut self, start: usize, end: usize, cand: &Candidate) {
        for e in &self.entries[cand.feature][start..end] {
            self.goes_left[e.row as usize] = e.x <= cand.threshold;
        }
        for j in 0..self.n_features {
            if j == cand.feature {
                continue;
            }
            let seg = &mut self.entries[j][start..end];
            self.scratch.clear();
            let mut write = 0;
            for k in 0..seg.len() {
                let e = seg[k];
                if self.goes_left[e.row as usize] {
                    seg[write] = e;
                    write += 1;
                } else {
                    self.scratch.push(e);
                }
            }
            debug_assert_eq!(write, cand.n_left);
            seg[write..].copy_from_slice(&self.scratch);
        }
    }

    /// Leaf payload with sums taken in ascending row order.
    fn leaf_value(&self, start: usize, end: usize) -> (LeafValue, f64) {
        let mut seg: Vec<Entry> = self.entries[0][start..end].to_vec();
        seg.sort_unstable_by_key(|e| e.row);
        let weight: f64 = seg.iter().map(|e| e.w).sum();
        let value = match self.task {
            Task::Regression => LeafValue::Mean(seg.iter().map(|e| e.w * e.y).sum::<f64>() / weight),
            Task::Classification => {
                let mut mass = vec![0.0; self.n_classes];
                for e in &seg {
                    mass[e.y as usize] += e.w;
                }
                LeafValue::Proportions(mass.iter().map(|m| m / weight).collect())
            }
        };
        (value, weight)
    }

    #[allow(clippy::too_many_arguments)]
    fn open(
        &mut self,
        nodes: &mut Vec<Node>,
        pending: &mut Vec<Pending>,
        heap: &mut BinaryHeap<HeapItem>,
        parent: Option<usize>,
        depth: usize,
        start: usize,
        end: usize,
    ) {
        let stats = self.stats(start, end);
        let id = nodes.len();
        nodes.push(Node {
            parent,
            depth,
            impurity: stats.impurity,
            weight_mass: stats.weight,
            count: stats.count,
            kind: NodeKind::Leaf(LeafValue::Mean(0.0)),
        });
        let best = self.search(start, end, &stats);
        let gain = best.map_or(0.0, |b| stats.impurity - b.score);
        let slot = pending.len();
        if best.is_some() {
            heap.push(HeapItem { gain, id, slot });
        }
        pending.push(Pending { id, start, end, best });
    }

    fn grow(mut self, dataset: &Dataset) -> Tree {
        let m = self.entries[0].len();
        let mut nodes: Vec<Node> = Vec::new();
        let mut pending: Vec<Pending> = Vec::new();
        let mut heap = BinaryHeap::new();

        self.open(&mut nodes, &mut pending, &mut heap, None, 0, 0, m);
        let mut n_leaves = 1;
        let cap = self.config.max_leaves.unwrap_or(usize::MAX);
        while n_leaves < cap {
            let Some(item) = heap.pop() else { break };
            let p = &pending[item.slot];
            let (id, start, end) = (p.id, p.start, p.end);
            let cand = p.best.expect("queued nodes have a split");
            self.partition(start, end, &cand);
            let mid = start + cand.n_left;
            let depth = nodes[id].depth + 1;
            let left = nodes.len();
            self.open(&mut nodes, &mut pending, &mut heap, Some(id), depth, start, mid);
            let right = nodes.len();
            self.open(&mut nodes, &mut pending, &mut heap, Some(id), depth, mid, end);
            nodes[id].kind = NodeKind::Split {
                feature: cand.feature,
                threshold: cand.threshold,
                left,
                right,
            };
            pending[item.slot].best = None;
            n_leaves += 1;
        }
        for p in &pending {
            if nodes[p.id].children().is_none() {
                let (value, weight) = self.leaf_value(p.start, p.end);
                nodes[p.id].kind = NodeKind::Leaf(value);
                nodes[p.id].weight_mass = weight;
            }
        }
        Tree {
            task: dataset.task(),
            n_features: dataset.n_features(),
            n_classes: dataset.n_classes(),
            config: self.config.clone(),
            nodes,
        }
    }
}

fn membership(n: usize, rows: &[usize]) -> Result<Vec<bool>> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut mask = vec![false; n];
    for &r in rows {
        if r >= n {
            return Err(Error::IndexOutOfRange { index: r, len: n });
        }
        mask[r] = true;
    }
    Ok(mask)
}

fn check_weights(dataset: &Dataset, weights: &WeightVector) -> Result<()> {
    if weights.len() != dataset.n_rows() {
        return Err(Error::invalid(format!(
            "{} weights for {} rows",
            weights.len(),
            dataset.n_rows()
        )));
    }
    Ok(())
}

/// Fits with a precomputed sort order; `rng` drives per-node feature
/// sampling when `feature_subset_size` is set.
pub(crate) fn fit_tree_sorted(
    dataset: &Dataset,
    sorted: &SortedColumns,
    weights: &WeightVector,
    config: &FitConfig,
    row_subset: Option<&[usize]>,
    rng: Option<ChaCha8Rng>,
) -> Result<Tree> {
    config.validate(dataset.n_features())?;
    check_weights(dataset, weights)?;
    let mask = row_subset.map(|rows| membership(dataset.n_rows(), rows)).transpose()?;
    let grower = Grower::new(dataset, sorted, weights, mask.as_deref(), config, rng)?;
    Ok(grower.grow(dataset))
}

/// Fits T(θ): greedy weighted CART, best-first, until no node can split or
/// `max_leaves` is reached.
pub fn fit_tree(
    dataset: &Dataset,
    weights: &WeightVector,
    config: &FitConfig,
    row_subset: Option<&[usize]>,
) -> Result<Tree> {
    let sorted = SortedColumns::new(dataset);
    fit_tree_sorted(dataset, &sorted, weights, config, row_subset, Some(rng_from_seed(0)))
}

/// Best split for the rows of one node, searched over all features.
pub fn best_split(
    node_rows: &[usize],
    dataset: &Dataset,
    weights: &WeightVector,
    config: &FitConfig,
) -> Result<Option<SplitRule>> {
    config.validate(dataset.n_features())?;
    check_weights(dataset, weights)?;
    let mask = membership(dataset.n_rows(), node_rows)?;
    let sorted = SortedColumns::new(dataset);
    let mut all = config.clone();
    all.feature_subset_size = None;
    let mut grower = Grower::new(dataset, &sorted, weights, Some(&mask), &all, None)?;
    let m = grower.entries[0].len();
    let stats = grower.stats(0, m);
    Ok(grower.search(0, m, &stats).map(|c| SplitRule {
        feature: c.feature,
        threshold: c.threshold,
    }))
}

/// Prediction of one tree at `x`.
pub fn predict_tree<'t>(tree: &'t Tree, x: &[f64]) -> Result<&'t LeafValue> {
    tree.predict(x)
}
