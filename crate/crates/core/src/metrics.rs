//! External (ARI, NMI) and internal (Silhouette, Calinski–Harabasz)
//! clustering-quality measures.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::cluster::sq_dist;
use crate::error::{Error, Result};

/// Counts of samples per (true label, predicted label).
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn new(a: &[i64], b: &[i64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        let index = |v: &[i64]| -> BTreeMap<i64, usize> {
            let mut m = BTreeMap::new();
            for &x in v {
                m.entry(x).or_insert(0);
            }
            for (i, val) in m.values_mut().enumerate() {
                *val = i;
            }
            m
        };
        let (ia, ib) = (index(a), index(b));
        let mut counts = vec![vec![0u64; ib.len()]; ia.len()];
        for (x, y) in a.iter().zip(b) {
            counts[ia[x]][ib[y]] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..ib.len()).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total: a.len() as u64,
        })
    }
}

fn pairs(n: u64) -> i128 {
    let n = n as i128;
    n * (n - 1) / 2
}

/// Pair-counting Rand index adjusted for chance. Noise labels count as an
/// ordinary cluster. Returns 1.0 for the degenerate case where the chance
/// model leaves no room for disagreement (e.g. both partitions trivial).
pub fn adjusted_rand_index(y_true: &[i64], y_pred: &[i64]) -> Result<f64> {
    if y_true.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: y_true.len(),
        });
    }
    let t = ContingencyTable::new(y_true, y_pred)?;
    let index: i128 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: i128 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let b: i128 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    let total = pairs(t.total);
    // (index − a·b/N) / ((a+b)/2 − a·b/N), scaled by 2N to stay integral
    let numerator = 2 * (total * index - a * b);
    let denominator = total * (a + b) - 2 * a * b;
    if denominator == 0 {
        return Ok(1.0);
    }
    Ok(numerator as f64 / denominator as f64)
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNormalization {
    #[default]
    Arithmetic,
    Geometric,
}

/// Mutual information between two partitions over the mean of their
/// entropies. A partition with a single class yields 0.
pub fn normalized_mutual_information(y_true: &[i64], y_pred: &[i64]) -> Result<f64> {
    normalized_mutual_information_with(y_true, y_pred, NmiNormalization::Arithmetic)
}

pub fn normalized_mutual_information_with(
    y_true: &[i64],
    y_pred: &[i64],
    norm: NmiNormalization,
) -> Result<f64> {
    let t = ContingencyTable::new(y_true, y_pred)?;
    let n = t.total as f64;
    if t.total == 0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let ratio = (t.total as u128 * c as u128) as f64
                / (t.row_sums[i] as u128 * t.col_sums[j] as u128) as f64;
            mi += c as f64 / n * ratio.ln();
        }
    }
    let mi = mi.max(0.0);
    let (ha, hb) = (entropy(&t.row_sums, n), entropy(&t.col_sums, n));
    let denom = match norm {
        NmiNormalization::Arithmetic => 0.5 * (ha + hb),
        NmiNormalization::Geometric => (ha * hb).sqrt(),
    };
    if ha == 0.0 || hb == 0.0 || denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).min(1.0))
}

fn distinct(labels: &[i64]) -> Vec<i64> {
    let mut d = labels.to_vec();
    d.sort_unstable();
    d.dedup();
    d
}

/// Mean silhouette coefficient with Euclidean distance. Samples in
/// singleton clusters contribute 0.
pub fn silhouette(x: &Array2<f64>, labels: &[i64]) -> Result<f64> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    let classes = distinct(labels);
    let k = classes.len();
    if k < 2 {
        return Err(Error::TooFewClasses(k));
    }
    let cls: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    let mut sizes = vec![0usize; k];
    for &c in &cls {
        sizes[c] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let xi = x.row(i);
        for j in 0..n {
            if j != i {
                sums[cls[j]] += sq_dist(xi, x.row(j)).sqrt();
            }
        }
        let own = cls[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Variance-ratio criterion `(tr B / (k−1)) / (tr W / (n−k))`. A zero
/// within-cluster dispersion yields `f64::INFINITY`.
pub fn calinski_harabasz(x: &Array2<f64>, labels: &[i64]) -> Result<f64> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    let classes = distinct(labels);
    let k = classes.len();
    if k < 2 {
        return Err(Error::TooFewClasses(k));
    }
    if n <= k {
        return Err(Error::InvalidInput(format!("need more samples ({n}) than clusters ({k})")));
    }
    let mean = x.mean_axis(Axis(0)).expect("n > 0");
    let mut between = 0.0;
    let mut within = 0.0;
    for c in &classes {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == *c).collect();
        let sub = x.select(Axis(0), &rows);
        let centroid = sub.mean_axis(Axis(0)).expect("nonempty");
        between += rows.len() as f64 * sq_dist(centroid.view(), mean.view());
        within += sub.rows().into_iter().map(|r| sq_dist(r, centroid.view())).sum::<f64>();
    }
    if within == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}
