//! Full-covariance Gaussian mixture fitted by expectation–maximization.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kmeans::{kmeans_plus_plus, lloyd};
use super::{check_k, ClusterConfig, LabelVector};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub labels: LabelVector,
    pub weights: Vec<f64>,
    /// `k × d` component means.
    pub means: Array2<f64>,
    /// Row-major `d × d` covariance per component.
    pub covariances: Vec<Vec<f64>>,
    /// Mean per-sample log-likelihood at every E-step.
    pub log_likelihood_history: Vec<f64>,
    pub converged: bool,
    pub n_iter: usize,
}

impl GmmFit {
    pub fn log_likelihood(&self) -> f64 {
        *self.log_likelihood_history.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

struct Params {
    weights: Vec<f64>,
    means: Vec<f64>,
    // lower Cholesky factors, row-major d×d
    chol: Vec<Vec<f64>>,
    covs: Vec<Vec<f64>>,
}

/// In-place lower Cholesky factor of a row-major SPD matrix.
fn cholesky(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= a[j * d + k] * a[j * d + k];
        }
        if !(s > 0.0) || !s.is_finite() {
            return false;
        }
        let ljj = s.sqrt();
        a[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / ljj;
        }
        for k in j + 1..d {
            a[j * d + k] = 0.0;
        }
    }
    true
}

fn m_step(data: &[f64], n: usize, d: usize, resp: &[f64], k: usize, reg: f64) -> Result<Params> {
    let eps = 10.0 * f64::EPSILON;
    let mut nk = vec![eps; k];
    for i in 0..n {
        for c in 0..k {
            nk[c] += resp[i * k + c];
        }
    }
    let mut means = vec![0.0; k * d];
    for i in 0..n {
        let x = &data[i * d..(i + 1) * d];
        for c in 0..k {
            let r = resp[i * k + c];
            if r == 0.0 {
                continue;
            }
            for j in 0..d {
                means[c * d + j] += r * x[j];
            }
        }
    }
    for c in 0..k {
        for j in 0..d {
            means[c * d + j] /= nk[c];
        }
    }

    let mut covs = Vec::with_capacity(k);
    let mut chol = Vec::with_capacity(k);
    let mut diff = vec![0.0; d];
    for c in 0..k {
        let mu = &means[c * d..(c + 1) * d];
        let mut cov = vec![0.0; d * d];
        for i in 0..n {
            let r = resp[i * k + c];
            if r == 0.0 {
                continue;
            }
            for j in 0..d {
                diff[j] = data[i * d + j] - mu[j];
            }
            for a in 0..d {
                let ra = r * diff[a];
                for b in 0..=a {
                    cov[a * d + b] += ra * diff[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[a * d + b] / nk[c];
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
            cov[a * d + a] += reg;
        }
        let mut l = cov.clone();
        if !cholesky(&mut l, d) {
            return Err(Error::SingularCovariance(c));
        }
        covs.push(cov);
        chol.push(l);
    }
    let total: f64 = nk.iter().sum();
    let weights = nk.iter().map(|v| v / total).collect();
    Ok(Params {
        weights,
        means,
        chol,
        covs,
    })
}

/// Fills `log_resp` and returns the mean log-likelihood.
fn e_step(data: &[f64], n: usize, d: usize, p: &Params, log_resp: &mut [f64]) -> f64 {
    let k = p.weights.len();
    let mut y = vec![0.0; d];
    let log_dets: Vec<f64> = p
        .chol
        .iter()
        .map(|l| 2.0 * (0..d).map(|j| l[j * d + j].ln()).sum::<f64>())
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        let x = &data[i * d..(i + 1) * d];
        for c in 0..k {
            let l = &p.chol[c];
            let mu = &p.means[c * d..(c + 1) * d];
            let mut maha = 0.0;
            for a in 0..d {
                let mut s = x[a] - mu[a];
                let row = &l[a * d..a * d + a];
                for (b, lab) in row.iter().enumerate() {
                    s -= lab * y[b];
                }
                y[a] = s / l[a * d + a];
                maha += y[a] * y[a];
            }
            log_resp[i * k + c] =
                p.weights[c].ln() - 0.5 * (d as f64 * LN_2PI + log_dets[c] + maha);
        }
        let row = &mut log_resp[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
        total += lse;
    }
    total / n as f64
}

fn fit_once(data: &[f64], n: usize, d: usize, cfg: &ClusterConfig, seed: u64) -> Result<GmmFit> {
    let k = cfg.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_plus_plus(data, n, d, k, &mut rng);
    let km = lloyd(data, n, d, init, cfg.kmeans_max_iter());
    let mut resp = vec![0.0; n * k];
    for (i, &c) in km.assignment.iter().enumerate() {
        resp[i * k + c] = 1.0;
    }
    let mut params = m_step(data, n, d, &resp, k, cfg.reg_covar)?;
    let mut log_resp = vec![0.0; n * k];
    let mut history = Vec::new();
    let mut converged = false;
    let mut n_iter = 0;
    let mut prev = f64::NEG_INFINITY;
    for iter in 1..=cfg.gmm_max_iter() {
        let ll = e_step(data, n, d, &params, &mut log_resp);
        history.push(ll);
        for (r, lr) in resp.iter_mut().zip(&log_resp) {
            *r = lr.exp();
        }
        params = m_step(data, n, d, &resp, k, cfg.reg_covar)?;
        n_iter = iter;
        if (ll - prev).abs() < cfg.gmm_tol() {
            converged = true;
            break;
        }
        prev = ll;
    }
    // final E-step so labels agree with the returned parameters
    let ll = e_step(data, n, d, &params, &mut log_resp);
    history.push(ll);
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            let row = &log_resp[i * k..(i + 1) * k];
            let mut best = 0;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(GmmFit {
        labels: LabelVector::from_indices(&labels),
        weights: params.weights,
        means: Array2::from_shape_vec((k, d), params.means).expect("k*d means"),
        covariances: params.covs,
        log_likelihood_history: history,
        converged,
        n_iter,
    })
}

/// EM with k-means initialization, `cfg.gmm_n_init` restarts; the restart
/// with the highest final log-likelihood wins. Convergence: change in mean
/// log-likelihood below `cfg.gmm_tol()`.
pub fn gmm(x: &Array2<f64>, cfg: &ClusterConfig) -> Result<GmmFit> {
    let (n, d) = x.dim();
    check_k(cfg.k, n)?;
    let data = x.as_standard_layout();
    let data = data.as_slice().expect("standard layout");
    let mut best: Option<GmmFit> = None;
    for restart in 0..cfg.gmm_n_init {
        let fit = fit_once(data, n, d, cfg, derive_seed(cfg.seed, restart as u64))?;
        if best
            .as_ref()
            .map_or(true, |b| fit.log_likelihood() > b.log_likelihood())
        {
            best = Some(fit);
        }
    }
    Ok(best.expect("gmm_n_init >= 1"))
}
