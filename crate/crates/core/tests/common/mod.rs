//! Independent reference implementations used by the integration tests.
//! Each one is written for clarity over speed and shares no code with the
//! library beyond its public types.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use fwshap::{Tree, TreeNode};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(format!("{name}.csv"))
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| StandardNormal.sample(rng))
}

/// `k` tight Gaussian blobs with centers far apart, `per` points each.
pub fn blobs(rng: &mut ChaCha8Rng, k: usize, per: usize, m: usize, spread: f64) -> (Array2<f64>, Vec<i64>) {
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|c| (0..m).map(|j| if j == c % m { 40.0 * (c / m + 1) as f64 } else { 0.0 }).collect())
        .collect();
    let mut x = Array2::zeros((k * per, m));
    let mut y = Vec::with_capacity(k * per);
    for c in 0..k {
        for i in 0..per {
            for j in 0..m {
                let z: f64 = StandardNormal.sample(rng);
                x[[c * per + i, j]] = centers[c][j] + spread * z;
            }
            y.push(c as i64);
        }
    }
    (x, y)
}

fn random_distribution(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Random tree with consistent covers: each split sends a random share of
/// its cover to the left child. Internal values are the cover-weighted mean
/// of their leaves.
pub fn random_tree(rng: &mut ChaCha8Rng, n_features: usize, max_depth: usize, n_classes: usize) -> Tree {
    fn grow(
        rng: &mut ChaCha8Rng,
        nodes: &mut Vec<TreeNode>,
        depth: usize,
        cover: f64,
        m: usize,
        max_depth: usize,
        c: usize,
    ) -> usize {
        let id = nodes.len();
        if depth == max_depth || (depth > 0 && rng.random::<f64>() < 0.25) {
            nodes.push(TreeNode::leaf(cover, random_distribution(rng, c)));
            return id;
        }
        let feature = rng.random_range(0..m);
        let threshold = rng.random::<f64>() * 2.0 - 1.0;
        nodes.push(TreeNode::leaf(cover, vec![0.0; c]));
        let share = 0.05 + 0.9 * rng.random::<f64>();
        let left_cover = (cover * share).max(1e-3);
        let right_cover = cover - left_cover;
        let left = grow(rng, nodes, depth + 1, left_cover, m, max_depth, c);
        let right = grow(rng, nodes, depth + 1, right_cover, m, max_depth, c);
        let value: Vec<f64> = (0..c)
            .map(|k| (nodes[left].value[k] * left_cover + nodes[right].value[k] * right_cover) / cover)
            .collect();
        nodes[id] = TreeNode::split(feature, threshold, left, right, cover, value);
        id
    }
    let mut nodes = Vec::new();
    let root_cover = 10.0 + 90.0 * rng.random::<f64>();
    grow(rng, &mut nodes, 0, root_cover, n_features, max_depth, n_classes);
    Tree::new(nodes, n_classes)
}

/// E[f(x) | x_S] under the tree's cover distribution: features in `known`
/// follow `x`, others average both children by cover.
pub fn conditional_expectation(tree: &Tree, x: &[f64], known: &[bool], node: usize) -> Vec<f64> {
    let n = &tree.nodes[node];
    match n.feature {
        None => n.value.clone(),
        Some(f) if known[f] => {
            let next = if x[f] <= n.threshold { n.left } else { n.right };
            conditional_expectation(tree, x, known, next)
        }
        Some(_) => {
            let l = conditional_expectation(tree, x, known, n.left);
            let r = conditional_expectation(tree, x, known, n.right);
            let (wl, wr) = (tree.nodes[n.left].cover / n.cover, tree.nodes[n.right].cover / n.cover);
            l.iter().zip(&r).map(|(a, b)| wl * a + wr * b).collect()
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Shapley values by enumerating all 2^m coalitions; result is `m × C`.
pub fn brute_force_shapley(tree: &Tree, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let c = tree.n_classes;
    let mut value = BTreeMap::new();
    for mask in 0u32..(1 << m) {
        let known: Vec<bool> = (0..m).map(|j| mask >> j & 1 == 1).collect();
        value.insert(mask, conditional_expectation(tree, x, &known, 0));
    }
    let mut phi = vec![vec![0.0; c]; m];
    for j in 0..m {
        for mask in 0u32..(1 << m) {
            if mask >> j & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let weight = factorial(s) * factorial(m - s - 1) / factorial(m);
            let with = &value[&(mask | 1 << j)];
            let without = &value[&mask];
            for k in 0..c {
                phi[j][k] += weight * (with[k] - without[k]);
            }
        }
    }
    phi
}

/// Greedy agglomeration scanning every cluster pair per step. Returns the
/// merge costs (increase in within-cluster SSQ) and the partition left
/// after each merge, indexed by the number of clusters remaining.
pub struct NaiveWard {
    pub costs: Vec<f64>,
    pub partitions: BTreeMap<usize, Vec<usize>>,
}

pub fn naive_ward(x: &Array2<f64>) -> NaiveWard {
    let (n, m) = x.dim();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let centroid = |idx: &[usize]| -> Vec<f64> {
        (0..m)
            .map(|j| idx.iter().map(|&i| x[[i, j]]).sum::<f64>() / idx.len() as f64)
            .collect()
    };
    let mut costs = Vec::new();
    let mut partitions = BTreeMap::new();
    let snapshot = |members: &Vec<Vec<usize>>| {
        let mut assign = vec![0; n];
        for (c, idx) in members.iter().enumerate() {
            for &i in idx {
                assign[i] = c;
            }
        }
        assign
    };
    partitions.insert(n, snapshot(&members));
    while members.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..members.len() {
            for b in a + 1..members.len() {
                let (ca, cb) = (centroid(&members[a]), centroid(&members[b]));
                let (na, nb) = (members[a].len() as f64, members[b].len() as f64);
                let d2: f64 = ca.iter().zip(&cb).map(|(p, q)| (p - q) * (p - q)).sum();
                let cost = na * nb / (na + nb) * d2;
                if cost < best.0 {
                    best = (cost, a, b);
                }
            }
        }
        let (cost, a, b) = best;
        let moved = members.remove(b);
        members[a].extend(moved);
        costs.push(cost);
        partitions.insert(members.len(), snapshot(&members));
    }
    NaiveWard { costs, partitions }
}

/// True when two assignments define the same partition.
pub fn same_partition(a: &[i64], b: &[i64]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = BTreeMap::new();
    let mut back = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        if *fwd.entry(x).or_insert(y) != y || *back.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

pub fn euclidean(x: &Array2<f64>, i: usize, j: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(x.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Mutual-reachability MST by Kruskal over the complete graph. Core
/// distance counts the point itself among its `min_samples` neighbours.
pub fn kruskal_mutual_reachability(x: &Array2<f64>, min_samples: usize) -> Vec<f64> {
    let n = x.nrows();
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| euclidean(x, i, j)).collect();
            d.sort_by(f64::total_cmp);
            d[(min_samples - 1).min(n - 1)]
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let w = euclidean(x, i, j).max(core[i]).max(core[j]);
            edges.push((w, i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut Vec<usize>, mut i: usize) -> usize {
        while p[i] != i {
            i = p[i];
        }
        i
    }
    let mut out = Vec::new();
    for (w, i, j) in edges {
        let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            out.push(w);
        }
    }
    out
}

/// ARI from the four pair-agreement counts.
pub fn pair_counting_ari(a: &[i64], b: &[i64]) -> f64 {
    let n = a.len();
    let (mut ss, mut sd, mut ds, mut dd) = (0i128, 0i128, 0i128, 0i128);
    for i in 0..n {
        for j in i + 1..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => ss += 1,
                (true, false) => sd += 1,
                (false, true) => ds += 1,
                (false, false) => dd += 1,
            }
        }
    }
    let num = 2 * (ss * dd - sd * ds);
    let den = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// NMI with arithmetic-mean normalization from joint frequencies.
pub fn naive_nmi(a: &[i64], b: &[i64]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(i64, i64), f64> = BTreeMap::new();
    let mut pa: BTreeMap<i64, f64> = BTreeMap::new();
    let mut pb: BTreeMap<i64, f64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((*x, *y)).or_default() += 1.0 / n;
        *pa.entry(*x).or_default() += 1.0 / n;
        *pb.entry(*y).or_default() += 1.0 / n;
    }
    let h = |p: &BTreeMap<i64, f64>| -> f64 { p.values().map(|v| -v * v.ln()).sum() };
    let (ha, hb) = (h(&pa), h(&pb));
    if pa.len() < 2 || pb.len() < 2 {
        return 0.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|((x, y), pxy)| pxy * (pxy / (pa[x] * pb[y])).ln())
        .sum();
    mi / ((ha + hb) / 2.0)
}

pub fn naive_silhouette(x: &Array2<f64>, labels: &[i64]) -> f64 {
    let n = x.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let own: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().map(|&j| euclidean(x, i, j)).sum::<f64>() / own.len() as f64;
        let mut b = f64::INFINITY;
        let mut others: Vec<i64> = labels.iter().copied().filter(|&l| l != labels[i]).collect();
        others.sort_unstable();
        others.dedup();
        for c in others {
            let idx: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            let d = idx.iter().map(|&j| euclidean(x, i, j)).sum::<f64>() / idx.len() as f64;
            b = b.min(d);
        }
        if a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

/// CH with within-cluster scatter from pairwise distances:
/// `W_c = Σ_{i<j∈c} ‖x_i − x_j‖² / n_c` and `B = T − W`.
pub fn naive_calinski_harabasz(x: &Array2<f64>, labels: &[i64]) -> f64 {
    let n = x.nrows();
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let k = classes.len();
    let scatter = |idx: &[usize]| -> f64 {
        let mut s = 0.0;
        for a in 0..idx.len() {
            for b in a + 1..idx.len() {
                s += euclidean(x, idx[a], idx[b]).powi(2);
            }
        }
        s / idx.len() as f64
    };
    let all: Vec<usize> = (0..n).collect();
    let total = scatter(&all);
    let within: f64 = classes
        .iter()
        .map(|c| scatter(&(0..n).filter(|&i| labels[i] == *c).collect::<Vec<_>>()))
        .sum();
    if within == 0.0 {
        return f64::INFINITY;
    }
    ((total - within) / (k - 1) as f64) / (within / (n - k) as f64)
}

/// Random labels with exactly `k` distinct values (n ≥ k).
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<i64> {
    let mut l: Vec<i64> = (0..n).map(|i| if i < k { i as i64 } else { rng.random_range(0..k as i64) }).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        l.swap(i, j);
    }
    l
}

pub fn relative_close(a: f64, b: f64, tol: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
