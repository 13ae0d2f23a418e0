//! Path-dependent TreeSHAP for the surrogate forest, and the reduction of
//! attributions to a feature-weight vector.
//!
//! The recursion tracks, along the current root-to-node path, which
//! features have been seen and the cover fraction that flowed down each
//! branch. `pweight` entries hold the subset-size weights of the Shapley
//! formula; extending the path by one feature updates them in O(depth),
//! and "unwinding" removes a feature again, so the whole tree is explained
//! in O(leaves · depth²) per sample instead of O(2^features).

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;

use crate::data::WeightVector;
use crate::error::{Error, Result};
use crate::forest::{predict_proba, Forest, Tree};

const ROOT_FEATURE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, Default)]
struct PathElement {
    feature: usize,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend_path(path: &mut [PathElement], depth: usize, zero_fraction: f64, one_fraction: f64, feature: usize) {
    path[depth] = PathElement {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let denom = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / denom;
        path[i].pweight = zero_fraction * path[i].pweight * (depth - i) as f64 / denom;
    }
}

fn unwind_path(path: &mut [PathElement], depth: usize, index: usize) {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one_portion = path[depth].pweight;
    let denom = (depth + 1) as f64;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one_portion * denom / ((i + 1) as f64 * one);
            next_one_portion = tmp - path[i].pweight * zero * (depth - i) as f64 / denom;
        } else {
            path[i].pweight = path[i].pweight * denom / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

/// Total pweight the path would have with element `index` removed.
fn unwound_path_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one_portion = path[depth].pweight;
    let denom = (depth + 1) as f64;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one_portion * denom / ((i + 1) as f64 * one);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero * ((depth - i) as f64 / denom);
        } else {
            total += (path[i].pweight / zero) / ((depth - i) as f64 / denom);
        }
    }
    total
}

struct Explainer<'a> {
    tree: &'a Tree,
    x: &'a [f64],
    n_classes: usize,
    phi: &'a mut [f64],
}

impl Explainer<'_> {
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        node: usize,
        buf: &mut [PathElement],
        parent_offset: usize,
        mut depth: usize,
        zero_fraction: f64,
        one_fraction: f64,
        feature: usize,
    ) {
        let offset = parent_offset + depth + 1;
        buf.copy_within(parent_offset..parent_offset + depth + 1, offset);
        extend_path(&mut buf[offset..], depth, zero_fraction, one_fraction, feature);

        let n = &self.tree.nodes[node];
        let Some(split) = n.feature else {
            let path = &buf[offset..];
            for i in 1..=depth {
                let w = unwound_path_sum(path, depth, i);
                let el = path[i];
                let scale = w * (el.one_fraction - el.zero_fraction);
                let row = &mut self.phi[el.feature * self.n_classes..(el.feature + 1) * self.n_classes];
                for (p, v) in row.iter_mut().zip(&n.value) {
                    *p += scale * v;
                }
            }
            return;
        };

        let (hot, cold) = if self.x[split] <= n.threshold {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        let cover = n.cover;
        let hot_zero = self.tree.nodes[hot].cover / cover;
        let cold_zero = self.tree.nodes[cold].cover / cover;
        let mut incoming_zero = 1.0;
        let mut incoming_one = 1.0;

        // a feature already on the path is removed and re-added with the
        // combined fractions
        if let Some(k) = (1..=depth).find(|&k| buf[offset + k].feature == split) {
            incoming_zero = buf[offset + k].zero_fraction;
            incoming_one = buf[offset + k].one_fraction;
            unwind_path(&mut buf[offset..], depth, k);
            depth -= 1;
        }

        self.recurse(hot, buf, offset, depth + 1, hot_zero * incoming_zero, incoming_one, split);
        self.recurse(cold, buf, offset, depth + 1, cold_zero * incoming_zero, 0.0, split);
    }
}

fn path_buffer(tree: &Tree) -> Vec<PathElement> {
    let d = tree.max_depth() + 2;
    vec![PathElement::default(); (d + 1) * (d + 2) / 2 + d + 2]
}

fn explain_unchecked(tree: &Tree, x: &[f64], buf: &mut [PathElement], phi: &mut [f64]) {
    let mut ex = Explainer {
        tree,
        x,
        n_classes: tree.n_classes,
        phi,
    };
    ex.recurse(0, buf, 0, 0, 1.0, 1.0, ROOT_FEATURE);
}

/// SHAP values of one tree at `x`: an `n_features × n_classes` matrix
/// with `expected_value + Σ_features = tree output` per class.
pub fn tree_shap_single(tree: &Tree, x: &[f64]) -> Result<Array2<f64>> {
    tree.validate(x.len())?;
    let mut buf = path_buffer(tree);
    let mut phi = vec![0.0; x.len() * tree.n_classes];
    explain_unchecked(tree, x, &mut buf, &mut phi);
    Ok(Array2::from_shape_vec((x.len(), tree.n_classes), phi).expect("m*c"))
}

/// Attributions for every sample, feature and class.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapTensor {
    /// `n_samples × n_features × n_classes`
    pub values: Array3<f64>,
    /// Expected model output per class.
    pub base_values: Vec<f64>,
}

impl ShapTensor {
    /// Largest |base + Σ_j φ_ij − f_c(x_i)| over samples and classes.
    pub fn max_local_accuracy_error(&self, forest: &Forest, x: &Array2<f64>) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, row) in x.rows().into_iter().enumerate() {
            let p = predict_proba(forest, &row.to_vec())?;
            let sums = self.values.index_axis(Axis(0), i).sum_axis(Axis(0));
            for c in 0..p.len() {
                worst = worst.max((self.base_values[c] + sums[c] - p[c]).abs());
            }
        }
        Ok(worst)
    }
}

/// Forest attributions: per-tree TreeSHAP summed in tree order, divided by
/// the number of trees. Samples are explained in parallel.
pub fn forest_shap(forest: &Forest, x: &Array2<f64>) -> Result<ShapTensor> {
    let (n, m) = x.dim();
    if m != forest.n_features {
        return Err(Error::DimensionMismatch {
            expected: forest.n_features,
            found: m,
        });
    }
    for tree in &forest.trees {
        tree.validate(m)?;
    }
    let c = forest.n_classes;
    let t = forest.trees.len() as f64;
    let max_len = forest.trees.iter().map(|tr| path_buffer(tr).len()).max().unwrap_or(0);

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![PathElement::default(); max_len],
            |buf, i| {
                let xi = x.row(i).to_vec();
                let mut phi = vec![0.0; m * c];
                for tree in &forest.trees {
                    explain_unchecked(tree, &xi, buf, &mut phi);
                }
                phi.iter_mut().for_each(|v| *v /= t);
                phi
            },
        )
        .collect();
    let values = Array3::from_shape_vec((n, m, c), rows.concat()).expect("n*m*c");

    let mut base_values = vec![0.0; c];
    for tree in &forest.trees {
        for (b, e) in base_values.iter_mut().zip(tree.expected_value()) {
            *b += e;
        }
    }
    base_values.iter_mut().for_each(|b| *b /= t);
    Ok(ShapTensor {
        values,
        base_values,
    })
}

/// Mean |φ| over samples and classes per feature, normalized to sum to one
/// (uniform if every attribution is zero).
pub fn aggregate_to_weights(t: &ShapTensor) -> Result<WeightVector> {
    let (n, m, c) = t.values.dim();
    if n == 0 {
        return Err(Error::InvalidInput("attribution tensor has no samples".into()));
    }
    let denom = (n * c) as f64;
    let scores: Vec<f64> = (0..m)
        .map(|j| t.values.index_axis(Axis(1), j).iter().map(|v| v.abs()).sum::<f64>() / denom)
        .collect();
    WeightVector::from_scores(&scores)
}
