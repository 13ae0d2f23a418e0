//! Random-forest classifier used as the surrogate model on pseudo-labels.
//!
//! Trees are grown on bootstrap samples (represented as integer sample
//! weights) with Gini impurity, `⌈√m⌉` candidate features per split and
//! midpoint thresholds. Every node stores its weighted class distribution
//! and its cover (the weighted number of training samples reaching it),
//! which is what path-dependent TreeSHAP needs.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{LabelVector, NOISE};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// `None` means `⌈√n_features⌉`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    fn features_per_split(&self, m: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (m as f64).sqrt().ceil() as usize)
            .clamp(1, m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Split feature; `None` marks a leaf.
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub cover: f64,
    /// Class-probability vector (weighted class distribution of the node).
    pub value: Vec<f64>,
}

impl TreeNode {
    pub fn leaf(cover: f64, value: Vec<f64>) -> Self {
        Self {
            feature: None,
            threshold: 0.0,
            left: 0,
            right: 0,
            cover,
            value,
        }
    }

    pub fn split(feature: usize, threshold: f64, left: usize, right: usize, cover: f64, value: Vec<f64>) -> Self {
        Self {
            feature: Some(feature),
            threshold,
            left,
            right,
            cover,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature.is_none()
    }
}

/// Flat decision tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub n_classes: usize,
}

impl Tree {
    pub fn new(nodes: Vec<TreeNode>, n_classes: usize) -> Self {
        Self { nodes, n_classes }
    }

    /// Structural checks: child indices in range and acyclic (children
    /// after parents), positive covers that add up, leaf distributions on
    /// the simplex.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::MalformedTree("tree has no nodes".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !(node.cover > 0.0) || !node.cover.is_finite() {
                return Err(Error::MalformedTree(format!("node {i} has cover {}", node.cover)));
            }
            if node.value.len() != self.n_classes {
                return Err(Error::MalformedTree(format!(
                    "node {i} value has {} entries, expected {}",
                    node.value.len(),
                    self.n_classes
                )));
            }
            match node.feature {
                None => {
                    let total: f64 = node.value.iter().sum();
                    if node.value.iter().any(|&v| v < 0.0) || (total - 1.0).abs() > 1e-9 {
                        return Err(Error::MalformedTree(format!(
                            "leaf {i} value {:?} is not a distribution",
                            node.value
                        )));
                    }
                }
                Some(f) => {
                    if f >= n_features {
                        return Err(Error::MalformedTree(format!(
                            "node {i} splits on feature {f} of {n_features}"
                        )));
                    }
                    let (l, r) = (node.left, node.right);
                    if l <= i || r <= i || l >= self.nodes.len() || r >= self.nodes.len() || l == r {
                        return Err(Error::MalformedTree(format!("node {i} has bad children ({l}, {r})")));
                    }
                    let sum = self.nodes[l].cover + self.nodes[r].cover;
                    if (sum - node.cover).abs() > 1e-9 * node.cover.max(1.0) {
                        return Err(Error::MalformedTree(format!(
                            "cover mismatch at node {i}: {} != {} + {}",
                            node.cover, self.nodes[l].cover, self.nodes[r].cover
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while let Some(f) = self.nodes[i].feature {
            let node = &self.nodes[i];
            i = if x[f] <= node.threshold {
                node.left
            } else {
                node.right
            };
        }
        i
    }

    pub fn predict(&self, x: &[f64]) -> &[f64] {
        &self.nodes[self.leaf_index(x)].value
    }

    /// Cover-weighted mean of the leaf values.
    pub fn expected_value(&self) -> Vec<f64> {
        let root_cover = self.nodes[0].cover;
        let mut out = vec![0.0; self.n_classes];
        for node in self.nodes.iter().filter(|n| n.is_leaf()) {
            let w = node.cover / root_cover;
            for (o, v) in out.iter_mut().zip(&node.value) {
                *o += w * v;
            }
        }
        out
    }

    pub fn max_depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.is_leaf() {
                depth[node.left] = depth[i] + 1;
                depth[node.right] = depth[i] + 1;
                max = max.max(depth[i] + 1);
            }
        }
        max
    }

    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.nodes.iter().filter_map(|n| n.feature).collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_classes: usize,
    pub n_features: usize,
    /// Original label value of each class index.
    pub classes: Vec<i64>,
    pub params: ForestParams,
}

impl Forest {
    /// Assemble a forest from hand-built trees (validated).
    pub fn from_trees(trees: Vec<Tree>, n_features: usize) -> Result<Self> {
        let n_classes = trees
            .first()
            .map(|t| t.n_classes)
            .ok_or_else(|| Error::InvalidInput("forest needs at least one tree".into()))?;
        for t in &trees {
            if t.n_classes != n_classes {
                return Err(Error::MalformedTree("trees disagree on class count".into()));
            }
            t.validate(n_features)?;
        }
        Ok(Self {
            params: ForestParams {
                n_trees: trees.len(),
                ..ForestParams::default()
            },
            trees,
            n_classes,
            n_features,
            classes: (0..n_classes as i64).collect(),
        })
    }
}

/// Mean of per-tree leaf distributions.
pub fn predict_proba(forest: &Forest, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != forest.n_features {
        return Err(Error::DimensionMismatch {
            expected: forest.n_features,
            found: x.len(),
        });
    }
    let mut out = vec![0.0; forest.n_classes];
    for tree in &forest.trees {
        for (o, v) in out.iter_mut().zip(tree.predict(x)) {
            *o += v;
        }
    }
    let t = forest.trees.len() as f64;
    out.iter_mut().for_each(|o| *o /= t);
    Ok(out)
}

/// Class index with the highest averaged probability, mapped back to the
/// original label value.
pub fn predict(forest: &Forest, x: &[f64]) -> Result<i64> {
    let p = predict_proba(forest, x)?;
    let mut best = 0;
    for c in 1..p.len() {
        if p[c] > p[best] {
            best = c;
        }
    }
    Ok(forest.classes[best])
}

pub fn fit_forest(x: &Array2<f64>, y: &LabelVector, params: &ForestParams) -> Result<Forest> {
    let (n, m) = x.dim();
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("empty training matrix".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if y.as_slice().contains(&NOISE) {
        return Err(Error::InvalidInput("noise rows must be removed before fitting".into()));
    }
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(Error::Config("n_trees and min_leaf must be positive".into()));
    }
    let mut classes: Vec<i64> = y.as_slice().to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::TooFewClasses(classes.len()));
    }
    let target: Vec<usize> = y
        .as_slice()
        .iter()
        .map(|l| classes.binary_search(l).expect("label in class list"))
        .collect();

    let columns: Vec<Vec<f64>> = (0..m).map(|j| x.column(j).to_vec()).collect();
    let builder = TreeBuilder {
        columns: &columns,
        target: &target,
        n_classes: classes.len(),
        max_features: params.features_per_split(m),
        max_depth: params.max_depth.unwrap_or(usize::MAX),
        min_leaf: params.min_leaf,
    };
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
            let mut weights = vec![0u32; n];
            if params.bootstrap {
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1;
                }
            } else {
                weights.fill(1);
            }
            builder.build(&weights, &mut rng)
        })
        .collect();

    Ok(Forest {
        trees,
        n_classes: classes.len(),
        n_features: m,
        classes,
        params: params.clone(),
    })
}

struct TreeBuilder<'a> {
    columns: &'a [Vec<f64>],
    target: &'a [usize],
    n_classes: usize,
    max_features: usize,
    max_depth: usize,
    min_leaf: usize,
}

struct Split {
    feature: usize,
    threshold: f64,
    // position in the sorted sample list where the right child starts
    pos: usize,
    proxy: f64,
}

impl TreeBuilder<'_> {
    fn class_weights(&self, rows: &[usize], w: &[u32]) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_classes];
        for &i in rows {
            counts[self.target[i]] += w[i] as f64;
        }
        counts
    }

    fn build(&self, weights: &[u32], rng: &mut impl Rng) -> Tree {
        let rows: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0).collect();
        let mut nodes: Vec<TreeNode> = Vec::new();
        // (rows, depth, slot of the parent's child pointer to patch)
        let mut stack: Vec<(Vec<usize>, usize, Option<(usize, bool)>)> = vec![(rows, 0, None)];
        let mut scratch = Vec::new();
        while let Some((rows, depth, parent)) = stack.pop() {
            let counts = self.class_weights(&rows, weights);
            let cover: f64 = counts.iter().sum();
            let value: Vec<f64> = counts.iter().map(|c| c / cover).collect();
            let id = nodes.len();
            if let Some((p, is_left)) = parent {
                if is_left {
                    nodes[p].left = id;
                } else {
                    nodes[p].right = id;
                }
            }
            let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
            let split = if pure || depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
                None
            } else {
                self.best_split(&rows, weights, &counts, rng, &mut scratch)
            };
            match split {
                None => nodes.push(TreeNode::leaf(cover, value)),
                Some(s) => {
                    nodes.push(TreeNode::split(s.feature, s.threshold, 0, 0, cover, value));
                    let col = &self.columns[s.feature];
                    let (left, right): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&i| col[i] <= s.threshold);
                    debug_assert_eq!(left.len(), s.pos);
                    // right pushed first so the left subtree is numbered first
                    stack.push((right, depth + 1, Some((id, false))));
                    stack.push((left, depth + 1, Some((id, true))));
                }
            }
        }
        Tree::new(nodes, self.n_classes)
    }

    fn best_split(
        &self,
        rows: &[usize],
        w: &[u32],
        totals: &[f64],
        rng: &mut impl Rng,
        sorted: &mut Vec<usize>,
    ) -> Option<Split> {
        let m = self.columns.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(rng);
        let total_w: f64 = totals.iter().sum();
        let mut best: Option<Split> = None;
        let mut visited = 0;
        let mut left_counts = vec![0.0; self.n_classes];

        for &f in &order {
            if visited >= self.max_features {
                break;
            }
            let col = &self.columns[f];
            sorted.clear();
            sorted.extend_from_slice(rows);
            sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            let lo = col[sorted[0]];
            let hi = col[sorted[sorted.len() - 1]];
            if lo == hi {
                // constant within the node: does not count towards the budget
                continue;
            }
            visited += 1;

            left_counts.iter_mut().for_each(|c| *c = 0.0);
            let mut left_w = 0.0;
            let nr = sorted.len();
            for p in 1..nr {
                let i = sorted[p - 1];
                let wi = w[i] as f64;
                left_counts[self.target[i]] += wi;
                left_w += wi;
                if p < self.min_leaf || nr - p < self.min_leaf {
                    continue;
                }
                let (a, b) = (col[i], col[sorted[p]]);
                if a == b {
                    continue;
                }
                let right_w = total_w - left_w;
                let mut l2 = 0.0;
                let mut r2 = 0.0;
                for c in 0..self.n_classes {
                    let lc = left_counts[c];
                    let rc = totals[c] - lc;
                    l2 += lc * lc;
                    r2 += rc * rc;
                }
                let proxy = l2 / left_w + r2 / right_w;
                if best.as_ref().map_or(true, |s| proxy > s.proxy) {
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b || !threshold.is_finite() {
                        threshold = a;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        pos: p,
                        proxy,
                    });
                }
            }
        }
        best
    }
}

/// Fraction of rows whose forest prediction equals `y`.
pub fn accuracy(forest: &Forest, x: &Array2<f64>, y: &[i64]) -> Result<f64> {
    let mut hits = 0;
    for (row, &label) in x.rows().into_iter().zip(y) {
        if predict(forest, &row_vec(row))? == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / y.len() as f64)
}

pub(crate) fn row_vec(row: ArrayView1<f64>) -> Vec<f64> {
    row.to_vec()
}
