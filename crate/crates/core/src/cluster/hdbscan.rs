//! HDBSCAN: core distances → mutual-reachability MST → single-linkage
//! hierarchy → condensed tree → excess-of-mass cluster selection.

use std::collections::{BTreeMap, VecDeque};

use ndarray::Array2;

use super::ward::UnionFind;
use super::{sq_dist, ClusterConfig, LabelVector, NOISE};
use crate::error::{Error, Result};

/// Edge of the mutual-reachability spanning tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Row of the condensed tree. Clusters are numbered from `n_samples`
/// (the root) upward; `child < n_samples` is a point falling out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedRow {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub size: usize,
}

pub fn pairwise_distances(x: &Array2<f64>) -> Vec<f64> {
    let n = x.nrows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(x.row(i), x.row(j)).sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Distance from each point to its `min_samples`-th nearest neighbour,
/// counting the point itself as the first.
pub fn core_distances(dist: &[f64], n: usize, min_samples: usize) -> Vec<f64> {
    let k = min_samples.clamp(1, n) - 1;
    (0..n)
        .map(|i| {
            let mut row = dist[i * n..(i + 1) * n].to_vec();
            let (_, kth, _) = row.select_nth_unstable_by(k, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Prim's algorithm on the dense mutual-reachability graph. Ties go to the
/// lowest vertex index.
pub fn mutual_reachability_mst(x: &Array2<f64>, min_samples: usize) -> Vec<Edge> {
    let n = x.nrows();
    let dist = pairwise_distances(x);
    let core = core_distances(&dist, n, min_samples);
    prim(&dist, &core, n)
}

fn prim(dist: &[f64], core: &[f64], n: usize) -> Vec<Edge> {
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let mr = dist[current * n + v].max(core[current]).max(core[v]);
            if mr < best[v] {
                best[v] = mr;
                from[v] = current;
            }
            if best[v] < next_d || next == usize::MAX {
                next_d = best[v];
                next = v;
            }
        }
        in_tree[next] = true;
        edges.push(Edge {
            a: from[next],
            b: next,
            weight: next_d,
        });
        current = next;
    }
    edges
}

/// Merge tree of the single-linkage hierarchy. All components joined at
/// the same distance merge in one node, so the tree does not depend on how
/// ties among equal edge weights were ordered.
struct Hierarchy {
    // node n + i: (children, distance)
    children: Vec<(Vec<usize>, f64)>,
    sizes: Vec<usize>,
}

fn single_linkage(mut edges: Vec<Edge>, n: usize) -> Hierarchy {
    edges.sort_by(|x, y| x.weight.total_cmp(&y.weight));
    let mut uf = UnionFind::new(n);
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut sizes = vec![1usize; n];
    let mut children: Vec<(Vec<usize>, f64)> = Vec::with_capacity(n - 1);
    let mut start = 0;
    while start < edges.len() {
        let d = edges[start].weight;
        let end = start + edges[start..].iter().take_while(|e| e.weight == d).count();
        let before: Vec<(usize, usize)> = edges[start..end]
            .iter()
            .map(|e| (node_of[uf.find(e.a)], node_of[uf.find(e.b)]))
            .collect();
        for e in &edges[start..end] {
            let (ra, rb) = (uf.find(e.a), uf.find(e.b));
            if ra != rb {
                uf.union(ra, rb);
            }
        }
        let mut merged: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (e, &(na, nb)) in edges[start..end].iter().zip(&before) {
            let group = merged.entry(uf.find(e.a)).or_default();
            group.push(na);
            group.push(nb);
        }
        for (root, mut parts) in merged {
            parts.sort_unstable();
            parts.dedup();
            let id = n + children.len();
            sizes.push(parts.iter().map(|&p| sizes[p]).sum());
            children.push((parts, d));
            node_of[root] = id;
        }
        start = end;
    }
    Hierarchy { children, sizes }
}

fn to_lambda(d: f64) -> f64 {
    if d > 0.0 {
        1.0 / d
    } else {
        f64::INFINITY
    }
}

fn leaves_of(h: &Hierarchy, n: usize, node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(v) = stack.pop() {
        if v < n {
            out.push(v);
        } else {
            stack.extend(h.children[v - n].0.iter().rev());
        }
    }
}

fn condense(h: &Hierarchy, n: usize, min_cluster_size: usize) -> Vec<CondensedRow> {
    let root = n + h.children.len() - 1;
    let mut label = vec![0usize; root + 1];
    label[root] = n;
    let mut next_label = n + 1;
    let mut rows = Vec::new();
    let mut queue = VecDeque::from([root]);
    let mut points = Vec::new();

    while let Some(node) = queue.pop_front() {
        if node < n {
            // a continuing branch bottomed out at a single point
            rows.push(CondensedRow {
                parent: label[node],
                child: node,
                lambda: f64::INFINITY,
                size: 1,
            });
            continue;
        }
        let (parts, d) = &h.children[node - n];
        let lambda = to_lambda(*d);
        let parent = label[node];
        let n_big = parts.iter().filter(|&&c| h.sizes[c] >= min_cluster_size).count();
        for &child in parts {
            let size = h.sizes[child];
            if size >= min_cluster_size && n_big >= 2 {
                label[child] = next_label;
                next_label += 1;
                rows.push(CondensedRow {
                    parent,
                    child: label[child],
                    lambda,
                    size,
                });
                queue.push_back(child);
            } else if size >= min_cluster_size {
                label[child] = parent;
                queue.push_back(child);
            } else {
                points.clear();
                leaves_of(h, n, child, &mut points);
                for &p in &points {
                    rows.push(CondensedRow {
                        parent,
                        child: p,
                        lambda,
                        size: 1,
                    });
                }
            }
        }
    }
    rows
}

fn excess(lambda: f64, birth: f64) -> f64 {
    if lambda == birth {
        0.0
    } else {
        lambda - birth
    }
}

/// Excess-of-mass selection; the root is never selected.
fn select_clusters(rows: &[CondensedRow], n: usize) -> Vec<bool> {
    let n_clusters = rows
        .iter()
        .filter(|r| r.child >= n)
        .map(|r| r.child)
        .max()
        .map_or(1, |m| m - n + 1);
    let mut birth = vec![0.0; n_clusters];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for r in rows.iter().filter(|r| r.child >= n) {
        birth[r.child - n] = r.lambda;
        children[r.parent - n].push(r.child - n);
    }
    let mut stability = vec![0.0; n_clusters];
    for r in rows {
        stability[r.parent - n] += excess(r.lambda, birth[r.parent - n]) * r.size as f64;
    }

    let mut selected = vec![true; n_clusters];
    selected[0] = false;
    // children always carry larger ids than their parent
    for c in (1..n_clusters).rev() {
        let subtree: f64 = children[c].iter().map(|&k| stability[k]).sum();
        if subtree > stability[c] {
            selected[c] = false;
            stability[c] = subtree;
        } else {
            let mut stack = children[c].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend_from_slice(&children[k]);
            }
        }
    }
    selected
}

fn label_points(rows: &[CondensedRow], selected: &[bool], n: usize) -> Vec<i64> {
    let mut uf = UnionFind::new(n + selected.len());
    for r in rows {
        let child_selected = r.child >= n && selected[r.child - n];
        if !child_selected {
            uf.link(r.child, r.parent);
        }
    }
    (0..n)
        .map(|p| {
            let c = uf.find(p);
            if c <= n {
                NOISE
            } else {
                (c - n) as i64
            }
        })
        .collect()
}

/// Condensed tree for `x`, exposed for inspection and testing.
pub fn condensed_tree(x: &Array2<f64>, min_cluster_size: usize, min_samples: usize) -> Vec<CondensedRow> {
    let n = x.nrows();
    let mst = mutual_reachability_mst(x, min_samples);
    condense(&single_linkage(mst, n), n, min_cluster_size)
}

pub fn hdbscan(x: &Array2<f64>, cfg: &ClusterConfig) -> Result<LabelVector> {
    let n = x.nrows();
    let mcs = cfg.min_cluster_size;
    if mcs < 2 {
        return Err(Error::Config("min_cluster_size must be at least 2".into()));
    }
    if n < mcs {
        return Err(Error::TooFewSamples {
            needed: mcs,
            found: n,
        });
    }
    let min_samples = cfg.min_samples.unwrap_or(mcs);
    let rows = condensed_tree(x, mcs, min_samples);
    let selected = select_clusters(&rows, n);
    let labels = LabelVector::from_raw(&label_points(&rows, &selected, n));
    if labels.n_clusters() == 0 {
        return Err(Error::NoClusters);
    }
    Ok(labels)
}
