//! The four clustering algorithms. Each maps a sample matrix to a
//! [`LabelVector`].

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod gmm;
pub mod hdbscan;
pub mod kmeans;
pub mod ward;

pub use gmm::{gmm, GmmFit};
pub use hdbscan::hdbscan;
pub use kmeans::{kmeans, KMeansFit};
pub use ward::ward;

/// Label reserved for points HDBSCAN leaves unassigned.
pub const NOISE: i64 = -1;

/// Per-sample cluster assignment. Non-noise labels always form the
/// contiguous range `0..k`, numbered by first occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVector(Vec<i64>);

impl LabelVector {
    /// Relabel arbitrary assignments to `0..k` by first occurrence; any
    /// negative input becomes [`NOISE`].
    pub fn from_raw(raw: &[i64]) -> Self {
        let mut seen: Vec<i64> = Vec::new();
        let labels = raw
            .iter()
            .map(|&r| {
                if r < 0 {
                    return NOISE;
                }
                match seen.iter().position(|&s| s == r) {
                    Some(p) => p as i64,
                    None => {
                        seen.push(r);
                        (seen.len() - 1) as i64
                    }
                }
            })
            .collect();
        Self(labels)
    }

    pub(crate) fn from_indices(raw: &[usize]) -> Self {
        let as_i64: Vec<i64> = raw.iter().map(|&r| r as i64).collect();
        Self::from_raw(&as_i64)
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of non-noise clusters.
    pub fn n_clusters(&self) -> usize {
        self.0
            .iter()
            .filter(|&&l| l != NOISE)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn noise_count(&self) -> usize {
        self.0.iter().filter(|&&l| l == NOISE).count()
    }

    /// Row indices of non-noise samples, in order.
    pub fn assigned_rows(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] != NOISE).collect()
    }
}

impl From<LabelVector> for Vec<i64> {
    fn from(v: LabelVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    KMeans,
    Ward,
    Hdbscan,
    Gmm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::KMeans,
        Algorithm::Ward,
        Algorithm::Hdbscan,
        Algorithm::Gmm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::KMeans => "kmeans",
            Algorithm::Ward => "ward",
            Algorithm::Hdbscan => "hdbscan",
            Algorithm::Gmm => "gmm",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" | "k-means" => Ok(Algorithm::KMeans),
            "ward" | "hierarchical" => Ok(Algorithm::Ward),
            "hdbscan" => Ok(Algorithm::Hdbscan),
            "gmm" => Ok(Algorithm::Gmm),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Hyperparameters shared by the clustering algorithms. Fields that an
/// algorithm does not use are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Number of clusters (k-means, Ward, GMM).
    pub k: usize,
    /// Smallest cluster HDBSCAN will report.
    pub min_cluster_size: usize,
    /// Neighbourhood size for HDBSCAN core distances; `None` means
    /// `min_cluster_size`.
    pub min_samples: Option<usize>,
    pub seed: u64,
    /// Iteration cap; `None` means 300 for k-means and 100 for GMM.
    pub max_iter: Option<usize>,
    /// EM convergence threshold on the change in mean log-likelihood;
    /// `None` means 1e-3. k-means stops when no label changes instead.
    pub tol: Option<f64>,
    /// Restarts for k-means; the lowest-inertia run is kept.
    pub n_init: usize,
    /// Restarts for GMM.
    pub gmm_n_init: usize,
    /// Diagonal covariance regularization for GMM.
    pub reg_covar: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 2,
            min_cluster_size: 5,
            min_samples: None,
            seed: 0,
            max_iter: None,
            tol: None,
            n_init: 10,
            gmm_n_init: 1,
            reg_covar: 1e-6,
        }
    }
}

impl ClusterConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn kmeans_max_iter(&self) -> usize {
        self.max_iter.unwrap_or(300)
    }

    pub fn gmm_max_iter(&self) -> usize {
        self.max_iter.unwrap_or(100)
    }

    pub fn gmm_tol(&self) -> f64 {
        self.tol.unwrap_or(1e-3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.min_cluster_size < 2 {
            return Err(Error::Config("min_cluster_size must be at least 2".into()));
        }
        if self.min_samples == Some(0) {
            return Err(Error::Config("min_samples must be positive".into()));
        }
        if self.max_iter == Some(0) || self.n_init == 0 || self.gmm_n_init == 0 {
            return Err(Error::Config("iteration counts must be positive".into()));
        }
        if self.tol.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if !(self.reg_covar >= 0.0) {
            return Err(Error::Config("reg_covar must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Run `algorithm` on the rows of `x`.
pub fn run(algorithm: Algorithm, x: &Array2<f64>, cfg: &ClusterConfig) -> Result<LabelVector> {
    cfg.validate()?;
    match algorithm {
        Algorithm::KMeans => kmeans(x, cfg).map(|f| f.labels),
        Algorithm::Ward => ward(x, cfg.k),
        Algorithm::Hdbscan => hdbscan(x, cfg),
        Algorithm::Gmm => gmm(x, cfg).map(|f| f.labels),
    }
}

#[inline]
pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn sq_dist_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_k(k: usize, n: usize) -> Result<()> {
    if k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    Ok(())
}
