use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_k, sq_dist_slice, ClusterConfig, LabelVector};
use crate::error::Result;
use crate::rng::derive_seed;

/// Outcome of the best k-means restart.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: LabelVector,
    /// Raw cluster index per sample, aligned with `centroids` rows.
    pub assignment: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Within-cluster sum of squares after every assignment step.
    pub objective_history: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
}

/// Lloyd's algorithm with greedy k-means++ seeding, `cfg.n_init` restarts,
/// keeping the lowest within-cluster sum of squares. Iteration stops once
/// an assignment step changes no label (or after `cfg.kmeans_max_iter()` steps).
pub fn kmeans(x: &Array2<f64>, cfg: &ClusterConfig) -> Result<KMeansFit> {
    let n = x.nrows();
    check_k(cfg.k, n)?;
    let data = x.as_standard_layout();
    let data = data.as_slice().expect("standard layout");
    let m = x.ncols();

    let fits: Vec<KMeansFit> = (0..cfg.n_init)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, restart as u64));
            let init = kmeans_plus_plus(data, n, m, cfg.k, &mut rng);
            lloyd(data, n, m, init, cfg.kmeans_max_iter())
        })
        .collect();

    let mut best: Option<KMeansFit> = None;
    for fit in fits {
        if best.as_ref().map_or(true, |b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Greedy k-means++: each new centre is the best (lowest potential) of
/// `2 + ln k` candidates drawn with probability proportional to D².
pub(crate) fn kmeans_plus_plus(
    data: &[f64],
    n: usize,
    m: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let row = |i: usize| &data[i * m..(i + 1) * m];
    let n_trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = Vec::with_capacity(k * m);

    let first = rng.random_range(0..n);
    centers.extend_from_slice(row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist_slice(row(i), row(first))).collect();
    let mut potential: f64 = closest.iter().sum();

    for _ in 1..k {
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for &d in &closest {
            acc += d;
            cumulative.push(acc);
        }
        let mut best_candidate = 0;
        let mut best_potential = f64::INFINITY;
        let mut best_dists = Vec::new();
        for _ in 0..n_trials {
            let target = rng.random::<f64>() * potential;
            let candidate = cumulative
                .partition_point(|&c| c <= target)
                .min(n - 1);
            let dists: Vec<f64> = (0..n)
                .map(|i| closest[i].min(sq_dist_slice(row(i), row(candidate))))
                .collect();
            let pot: f64 = dists.iter().sum();
            if pot < best_potential {
                best_potential = pot;
                best_candidate = candidate;
                best_dists = dists;
            }
        }
        centers.extend_from_slice(row(best_candidate));
        closest = best_dists;
        potential = best_potential;
    }
    centers
}

fn assign(data: &[f64], n: usize, m: usize, centers: &[f64], labels: &mut [usize]) -> (f64, bool) {
    let k = centers.len() / m;
    let mut inertia = 0.0;
    let mut changed = false;
    for i in 0..n {
        let x = &data[i * m..(i + 1) * m];
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let d = sq_dist_slice(x, &centers[c * m..(c + 1) * m]);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if labels[i] != best {
            labels[i] = best;
            changed = true;
        }
        inertia += best_d;
    }
    (inertia, changed)
}

fn update(data: &[f64], n: usize, m: usize, labels: &[usize], centers: &mut [f64]) {
    let k = centers.len() / m;
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k * m];
    for i in 0..n {
        let c = labels[i];
        counts[c] += 1;
        for j in 0..m {
            sums[c * m + j] += data[i * m + j];
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for j in 0..m {
                centers[c * m + j] = sums[c * m + j] / counts[c] as f64;
            }
        }
    }

    // Empty clusters: move the centre onto the point farthest from its own
    // centre; each such point is used once.
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if empty.is_empty() {
        return;
    }
    let mut far: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let c = labels[i];
            (sq_dist_slice(&data[i * m..(i + 1) * m], &centers[c * m..(c + 1) * m]), i)
        })
        .collect();
    far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (c, &(_, i)) in empty.iter().zip(far.iter()) {
        centers[c * m..(c + 1) * m].copy_from_slice(&data[i * m..(i + 1) * m]);
    }
}

pub(crate) fn lloyd(data: &[f64], n: usize, m: usize, mut centers: Vec<f64>, max_iter: usize) -> KMeansFit {
    let k = centers.len() / m;
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut n_iter = 0;
    let mut inertia;
    loop {
        let (obj, changed) = assign(data, n, m, &centers, &mut labels);
        inertia = obj;
        history.push(obj);
        if !changed {
            converged = true;
            break;
        }
        if n_iter == max_iter {
            break;
        }
        update(data, n, m, &labels, &mut centers);
        n_iter += 1;
    }
    KMeansFit {
        labels: LabelVector::from_indices(&labels),
        assignment: labels,
        centroids: Array2::from_shape_vec((k, m), centers).expect("k*m centres"),
        inertia,
        objective_history: history,
        n_iter,
        converged,
    }
}
