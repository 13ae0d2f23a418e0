//! Ward agglomeration via the nearest-neighbour chain algorithm on the
//! Lance–Williams recurrence for squared Euclidean distances.

use ndarray::Array2;

use super::{check_k, sq_dist, LabelVector};
use crate::error::Result;

/// One agglomeration step, scipy-style ids: `0..n` are samples, `n + i`
/// is the cluster created by merge `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    /// Increase in total within-cluster sum of squares caused by the merge.
    pub cost: f64,
    pub size: usize,
}

struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.n * i - i * (i + 1) / 2 + j - i - 1
    }
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }
    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

/// Full Ward merge sequence sorted by non-decreasing cost.
pub fn ward_linkage(x: &Array2<f64>) -> Vec<Merge> {
    let n = x.nrows();
    if n < 2 {
        return Vec::new();
    }
    let mut dist = Condensed {
        n,
        d: Vec::with_capacity(n * (n - 1) / 2),
    };
    for i in 0..n {
        for j in i + 1..n {
            dist.d.push(sq_dist(x.row(i), x.row(j)));
        }
    }

    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    // (slot a, slot b, lance-williams distance, merged size) in chain order
    let mut raw: Vec<(usize, usize, f64, usize)> = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::with_capacity(n);

    while raw.len() < n - 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("active cluster"));
        }
        let (a, b) = loop {
            let a = *chain.last().unwrap();
            let prev = if chain.len() >= 2 {
                Some(chain[chain.len() - 2])
            } else {
                None
            };
            // nearest active neighbour; on ties keep the chain predecessor,
            // otherwise the smallest index
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            if let Some(p) = prev {
                best = p;
                best_d = dist.get(a, p);
            }
            for c in 0..n {
                if c == a || !active[c] {
                    continue;
                }
                let d = dist.get(a, c);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if Some(best) == prev {
                chain.pop();
                chain.pop();
                break (a, best);
            }
            chain.push(best);
        };

        let (keep, gone) = if a < b { (a, b) } else { (b, a) };
        let dab = dist.get(a, b);
        let (na, nb) = (size[keep] as f64, size[gone] as f64);
        for k in 0..n {
            if !active[k] || k == keep || k == gone {
                continue;
            }
            let nk = size[k] as f64;
            let updated = ((na + nk) * dist.get(keep, k) + (nb + nk) * dist.get(gone, k)
                - nk * dab)
                / (na + nb + nk);
            dist.set(keep, k, updated);
        }
        active[gone] = false;
        size[keep] += size[gone];
        raw.push((keep, gone, dab, size[keep]));
    }

    // Ward is reducible, so sorting by height (stable: children were
    // produced before their parents) recovers the greedy order.
    raw.sort_by(|x, y| x.2.total_cmp(&y.2));

    // relabel slot ids into scipy ids
    let mut uf = UnionFind::new(n);
    let mut cluster_id: Vec<usize> = (0..n).collect();
    raw.iter()
        .enumerate()
        .map(|(step, &(a, b, d, sz))| {
            let ra = uf.find(a);
            let rb = uf.find(b);
            let (ia, ib) = (cluster_id[ra], cluster_id[rb]);
            let root = uf.union(ra, rb);
            cluster_id[root] = n + step;
            Merge {
                left: ia.min(ib),
                right: ia.max(ib),
                cost: d / 2.0,
                size: sz,
            }
        })
        .collect()
}

/// Cut the Ward tree at `k` clusters. Labels are numbered by first
/// occurrence in sample order.
pub fn ward(x: &Array2<f64>, k: usize) -> Result<LabelVector> {
    let n = x.nrows();
    check_k(k, n)?;
    let merges = ward_linkage(x);
    Ok(cut_tree(n, &merges, k))
}

pub fn cut_tree(n: usize, merges: &[Merge], k: usize) -> LabelVector {
    let mut uf = UnionFind::new(2 * n);
    for (step, m) in merges.iter().take(n - k).enumerate() {
        let id = n + step;
        uf.link(m.left, id);
        uf.link(m.right, id);
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    LabelVector::from_indices(&roots)
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub(crate) fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    /// Union by rank; returns the new root.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => {
                self.parent[ra] = rb;
                rb
            }
            std::cmp::Ordering::Greater => {
                self.parent[rb] = ra;
                ra
            }
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
                ra
            }
        }
    }

    /// Attach the tree containing `child` under `parent` (parent stays root).
    pub(crate) fn link(&mut self, child: usize, parent: usize) {
        let rc = self.find(child);
        let rp = self.find(parent);
        if rc != rp {
            self.parent[rc] = rp;
        }
    }
}
