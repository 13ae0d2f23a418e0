//! Filter weighting methods computed from the data and the initial
//! pseudo-labels: Minkowski inverse dispersion, mRMR, PCA loadings,
//! ANOVA F statistic, and the multiplicative ensemble.
//!
//! Columns without any variation always receive zero weight.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::cluster::{LabelVector, NOISE};
use crate::data::{constant_columns, WeightVector};
use crate::error::{Error, Result};

pub const DEFAULT_P: f64 = 2.0;
pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.95;

/// Which weighting to compute. The string form is used in config files and
/// report keys: `shap`, `lp`, `mrmr`, `pca`, `ftest`, or an ensemble such
/// as `shap+lp`. Parameters can be attached as `lp(p=3)`, `mrmr(bins=8)`,
/// `pca(threshold=0.9)`.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightMethodSpec {
    Shap,
    Lp { p: f64 },
    Mrmr { bins: usize },
    Pca { variance_threshold: f64 },
    FTest,
    Ensemble(Vec<WeightMethodSpec>),
}

impl WeightMethodSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightMethodSpec::Lp { p } if !(*p > 1.0) || !p.is_finite() => {
                Err(Error::Config(format!("lp needs p > 1, got {p}")))
            }
            WeightMethodSpec::Mrmr { bins: 0 } => Err(Error::Config("mrmr needs bins >= 1".into())),
            WeightMethodSpec::Pca { variance_threshold: t } if !(*t > 0.0 && *t <= 1.0) => {
                Err(Error::Config(format!("pca threshold must be in (0, 1], got {t}")))
            }
            WeightMethodSpec::Ensemble(parts) => {
                if parts.len() < 2 {
                    return Err(Error::Config("ensemble needs at least two parts".into()));
                }
                parts.iter().try_for_each(|p| {
                    if matches!(p, WeightMethodSpec::Ensemble(_)) {
                        Err(Error::Config("nested ensembles are not supported".into()))
                    } else {
                        p.validate()
                    }
                })
            }
            _ => Ok(()),
        }
    }

    pub fn needs_surrogate(&self) -> bool {
        match self {
            WeightMethodSpec::Shap => true,
            WeightMethodSpec::Ensemble(parts) => parts.iter().any(|p| p.needs_surrogate()),
            _ => false,
        }
    }
}

impl fmt::Display for WeightMethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightMethodSpec::Shap => f.write_str("shap"),
            WeightMethodSpec::Lp { p } if *p == DEFAULT_P => f.write_str("lp"),
            WeightMethodSpec::Lp { p } => write!(f, "lp(p={p})"),
            WeightMethodSpec::Mrmr { bins } if *bins == DEFAULT_BINS => f.write_str("mrmr"),
            WeightMethodSpec::Mrmr { bins } => write!(f, "mrmr(bins={bins})"),
            WeightMethodSpec::Pca { variance_threshold: t } if *t == DEFAULT_VARIANCE_THRESHOLD => {
                f.write_str("pca")
            }
            WeightMethodSpec::Pca { variance_threshold: t } => write!(f, "pca(threshold={t})"),
            WeightMethodSpec::FTest => f.write_str("ftest"),
            WeightMethodSpec::Ensemble(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for WeightMethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.contains('+') {
            let parts = s.split('+').map(str::parse).collect::<Result<Vec<_>>>()?;
            let spec = WeightMethodSpec::Ensemble(parts);
            spec.validate()?;
            return Ok(spec);
        }
        let (name, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], Some(&s[open + 1..s.len() - 1])),
            Some(_) => return Err(Error::Config(format!("unbalanced parentheses in {s:?}"))),
            None => (s, None),
        };
        let mut kv = BTreeMap::new();
        if let Some(args) = args {
            for pair in args.split(',').filter(|p| !p.trim().is_empty()) {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("expected key=value in {pair:?}")))?;
                kv.insert(k.trim().to_owned(), v.trim().to_owned());
            }
        }
        let mut take = |key: &str| kv.remove(key);
        let parse_f = |v: Option<String>, default: f64| -> Result<f64> {
            v.map_or(Ok(default), |v| {
                v.parse().map_err(|_| Error::Config(format!("bad number {v:?}")))
            })
        };
        let spec = match name.trim().to_ascii_lowercase().as_str() {
            "shap" => WeightMethodSpec::Shap,
            "lp" => WeightMethodSpec::Lp {
                p: parse_f(take("p"), DEFAULT_P)?,
            },
            "mrmr" => WeightMethodSpec::Mrmr {
                bins: parse_f(take("bins"), DEFAULT_BINS as f64)? as usize,
            },
            "pca" => WeightMethodSpec::Pca {
                variance_threshold: parse_f(take("threshold"), DEFAULT_VARIANCE_THRESHOLD)?,
            },
            "ftest" | "f-test" | "anova" => WeightMethodSpec::FTest,
            other => return Err(Error::Config(format!("unknown weighting method {other:?}"))),
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Config(format!("unexpected parameter {k:?} for {name}")));
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for WeightMethodSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WeightMethodSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Groups of row indices for each non-noise label, in label order.
fn groups(labels: &LabelVector) -> Vec<Vec<usize>> {
    let mut map: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.as_slice().iter().enumerate() {
        if l != NOISE {
            map.entry(l).or_default().push(i);
        }
    }
    map.into_values().collect()
}

fn check_rows(x: &Array2<f64>, labels: &LabelVector) -> Result<()> {
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: labels.len(),
        });
    }
    Ok(())
}

/// Inverse Minkowski dispersion: `D_j = Σ_k Σ_{i∈k} |x_ij − c_kj|^p` and
/// `w_j ∝ D_j^{−1/(p−1)}`. Features with zero dispersion take the largest
/// finite weight present.
pub fn lp_weights(x: &Array2<f64>, labels: &LabelVector, p: f64) -> Result<WeightVector> {
    check_rows(x, labels)?;
    if !(p > 1.0) {
        return Err(Error::InvalidInput(format!("p must exceed 1, got {p}")));
    }
    let groups = groups(labels);
    if groups.is_empty() {
        return Err(Error::InvalidInput("no non-noise labels".into()));
    }
    let constant = constant_columns(x);
    let m = x.ncols();
    let mut dispersion = vec![0.0; m];
    for rows in &groups {
        for (j, d) in dispersion.iter_mut().enumerate() {
            let centroid = rows.iter().map(|&i| x[[i, j]]).sum::<f64>() / rows.len() as f64;
            *d += rows.iter().map(|&i| (x[[i, j]] - centroid).abs().powf(p)).sum::<f64>();
        }
    }
    let exponent = -1.0 / (p - 1.0);
    let raw: Vec<Option<f64>> = dispersion
        .iter()
        .map(|&d| {
            let w = d.powf(exponent);
            (d > 0.0 && w.is_finite()).then_some(w)
        })
        .collect();
    let max_finite = raw
        .iter()
        .zip(&constant)
        .filter(|(_, &c)| !c)
        .filter_map(|(w, _)| *w)
        .fold(0.0, f64::max);
    let scores: Vec<f64> = raw
        .iter()
        .map(|w| w.unwrap_or(if max_finite > 0.0 { max_finite } else { 1.0 }))
        .collect();
    WeightVector::from_masked_scores(&scores, &constant)
}

/// Input to [`mutual_information`]: continuous values are equal-width
/// binned, labels are used as symbols directly.
#[derive(Debug, Clone, Copy)]
pub enum Series<'a> {
    Continuous(&'a [f64]),
    Labels(&'a [i64]),
}

impl Series<'_> {
    fn len(&self) -> usize {
        match self {
            Series::Continuous(v) => v.len(),
            Series::Labels(v) => v.len(),
        }
    }

    fn symbols(&self, bins: usize) -> Vec<usize> {
        match self {
            Series::Continuous(v) => discretize(v, bins),
            Series::Labels(v) => {
                let mut distinct: Vec<i64> = v.to_vec();
                distinct.sort_unstable();
                distinct.dedup();
                v.iter().map(|l| distinct.binary_search(l).unwrap()).collect()
            }
        }
    }
}

/// Equal-width histogram bin of every value; a constant input maps to bin 0.
pub fn discretize(values: &[f64], bins: usize) -> Vec<usize> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    if !(width > 0.0) {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| (((v - lo) / width * bins as f64) as usize).min(bins - 1))
        .collect()
}

/// Mutual information (nats) between two symbol sequences.
pub fn mutual_information_symbols(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let na = a.iter().max().map_or(0, |m| m + 1);
    let nb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0u64; na * nb];
    let mut ca = vec![0u64; na];
    let mut cb = vec![0u64; nb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * nb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for x in 0..na {
        for y in 0..nb {
            let nxy = joint[x * nb + y];
            if nxy == 0 {
                continue;
            }
            let ratio = (n as u128 * nxy as u128) as f64 / (ca[x] as u128 * cb[y] as u128) as f64;
            mi += nxy as f64 / nf * ratio.ln();
        }
    }
    mi.max(0.0)
}

pub fn mutual_information(a: Series, b: Series, bins: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: a.len(),
        });
    }
    if bins == 0 {
        return Err(Error::InvalidInput("bins must be positive".into()));
    }
    Ok(mutual_information_symbols(&a.symbols(bins), &b.symbols(bins)))
}

/// Relevance minus mean redundancy per feature:
/// `I(f_j; y) − (1/m) Σ_{l≠j} I(f_j; f_l)`, shifted so the minimum is zero.
/// Noise rows are ignored.
pub fn mrmr_weights(x: &Array2<f64>, labels: &LabelVector, bins: usize) -> Result<WeightVector> {
    check_rows(x, labels)?;
    if bins == 0 {
        return Err(Error::InvalidInput("bins must be positive".into()));
    }
    let rows = labels.assigned_rows();
    let y: Vec<i64> = rows.iter().map(|&i| labels.as_slice()[i]).collect();
    let k = labels.n_clusters();
    if k < 2 {
        return Err(Error::TooFewClasses(k));
    }
    let sub = x.select(Axis(0), &rows);
    let constant = constant_columns(x);
    let m = x.ncols();
    let symbols: Vec<Vec<usize>> = (0..m).map(|j| discretize(&sub.column(j).to_vec(), bins)).collect();
    let target = Series::Labels(&y).symbols(bins);

    let mut redundancy = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in a + 1..m {
            let v = mutual_information_symbols(&symbols[a], &symbols[b]);
            redundancy[a][b] = v;
            redundancy[b][a] = v;
        }
    }
    let scores: Vec<f64> = (0..m)
        .map(|j| {
            let relevance = mutual_information_symbols(&symbols[j], &target);
            let red: f64 = (0..m).filter(|&l| l != j).map(|l| redundancy[j][l]).sum();
            relevance - red / m as f64
        })
        .collect();
    let min = scores
        .iter()
        .zip(&constant)
        .filter(|(_, &c)| !c)
        .map(|(s, _)| *s)
        .fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = scores.iter().map(|s| (s - min).max(0.0)).collect();
    WeightVector::from_masked_scores(&shifted, &constant)
}

/// Explained-variance-weighted absolute loadings of the leading principal
/// components whose cumulative explained variance reaches the threshold.
pub fn pca_weights(x: &Array2<f64>, variance_threshold: f64) -> Result<WeightVector> {
    let (n, m) = x.dim();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: n });
    }
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "variance threshold must be in (0, 1], got {variance_threshold}"
        )));
    }
    let constant = constant_columns(x);
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let cov = DMatrix::from_fn(m, m, |i, j| cov[[i, j]]);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return WeightVector::from_masked_scores(&vec![0.0; m], &constant);
    }
    let floor = values[0] * 1e-12;
    let mut scores = vec![0.0; m];
    let mut cumulative = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if values[rank] <= floor {
            break;
        }
        let ratio = values[rank] / total;
        for (j, s) in scores.iter_mut().enumerate() {
            *s += ratio * eig.eigenvectors[(j, k)].abs();
        }
        cumulative += ratio;
        if cumulative >= variance_threshold - 1e-12 {
            break;
        }
    }
    WeightVector::from_masked_scores(&scores, &constant)
}

/// One-way ANOVA F statistic per feature with the pseudo-labels as groups.
pub fn f_statistics(x: &Array2<f64>, labels: &LabelVector) -> Result<Vec<f64>> {
    check_rows(x, labels)?;
    let groups = groups(labels);
    let k = groups.len();
    let n: usize = groups.iter().map(Vec::len).sum();
    if k < 2 {
        return Err(Error::TooFewClasses(k));
    }
    if n <= k {
        return Err(Error::InvalidInput(format!(
            "degenerate grouping: {k} groups for {n} samples"
        )));
    }
    Ok((0..x.ncols())
        .map(|j| {
            let grand = groups.iter().flatten().map(|&i| x[[i, j]]).sum::<f64>() / n as f64;
            let mut between = 0.0;
            let mut within = 0.0;
            for rows in &groups {
                let mean = rows.iter().map(|&i| x[[i, j]]).sum::<f64>() / rows.len() as f64;
                between += rows.len() as f64 * (mean - grand).powi(2);
                within += rows.iter().map(|&i| (x[[i, j]] - mean).powi(2)).sum::<f64>();
            }
            let numerator = between / (k - 1) as f64;
            let denominator = within / (n - k) as f64;
            if denominator > 0.0 {
                numerator / denominator
            } else if numerator > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect())
}

/// F statistics normalized to weights; an infinite F (no within-group
/// spread) becomes ten times the largest finite F.
pub fn ftest_weights(x: &Array2<f64>, labels: &LabelVector) -> Result<WeightVector> {
    let f = f_statistics(x, labels)?;
    let constant = constant_columns(x);
    let max_finite = f.iter().filter(|v| v.is_finite()).cloned().fold(0.0, f64::max);
    let replacement = if max_finite > 0.0 { max_finite * 10.0 } else { 1.0 };
    let scores: Vec<f64> = f
        .iter()
        .map(|&v| if v.is_finite() { v } else { replacement })
        .collect();
    WeightVector::from_masked_scores(&scores, &constant)
}

/// Elementwise product of the parts, renormalized.
pub fn ensemble_weights(parts: &[WeightVector]) -> Result<WeightVector> {
    if parts.len() < 2 {
        return Err(Error::InvalidInput("ensemble needs at least two weight vectors".into()));
    }
    let m = parts[0].len();
    if let Some(bad) = parts.iter().find(|p| p.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: bad.len(),
        });
    }
    let product: Vec<f64> = (0..m)
        .map(|j| parts.iter().map(|p| p.as_slice()[j]).product())
        .collect();
    WeightVector::from_scores(&product)
}
