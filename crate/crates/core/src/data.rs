//! Dataset ingestion, z-score standardization and feature-weight application.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A numeric sample matrix (`n_samples × n_features`) with optional
/// ground-truth labels that are only ever consumed by external metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Array2<f64>,
    pub feature_names: Vec<String>,
    pub true_labels: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        feature_names: Vec<String>,
        true_labels: Option<Vec<i64>>,
    ) -> Result<Self> {
        let (n, m) = features.dim();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, found: n });
        }
        if m == 0 {
            return Err(Error::InvalidInput("dataset has no feature columns".into()));
        }
        if feature_names.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: feature_names.len(),
            });
        }
        if let Some(labels) = &true_labels {
            if labels.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: labels.len(),
                });
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in feature matrix".into()));
        }
        Ok(Self {
            name: name.into(),
            features,
            feature_names,
            true_labels,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Number of distinct ground-truth classes, if labels are present.
    pub fn n_classes(&self) -> Option<usize> {
        self.true_labels
            .as_ref()
            .map(|l| l.iter().collect::<BTreeSet<_>>().len())
    }

    /// Copy of this dataset with the ground-truth labels dropped.
    pub fn without_labels(&self) -> Self {
        Self {
            true_labels: None,
            ..self.clone()
        }
    }
}

/// Load a comma-delimited file with a header row. When `label_column` is
/// given, that column is moved into `true_labels` and excluded from the
/// features. Integer labels are kept as-is; any other label text is coded
/// by sorted order of the distinct values.
pub fn load_dataset(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingLabelColumn(name.to_owned()))?,
        ),
        None => None,
    };
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    let mut n_rows = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        // row numbers reported 1-based, counting the header as row 0
        let row = row + 1;
        if record.len() != header.len() {
            return Err(Error::RowLength {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            if Some(col) == label_idx {
                raw_labels.push(cell.to_owned());
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::NonNumeric {
                        row,
                        column: header[col].clone(),
                        value: cell.to_owned(),
                    })
                }
            }
        }
        n_rows += 1;
    }

    let features = Array2::from_shape_vec((n_rows, feature_names.len()), values)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let true_labels = label_idx.map(|_| encode_labels(&raw_labels));
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, features, feature_names, true_labels)
}

fn encode_labels(raw: &[String]) -> Vec<i64> {
    let parsed: Option<Vec<i64>> = raw.iter().map(|s| s.parse::<i64>().ok()).collect();
    if let Some(ints) = parsed {
        return ints;
    }
    let distinct: Vec<&String> = raw.iter().collect::<BTreeSet<_>>().into_iter().collect();
    raw.iter()
        .map(|s| distinct.binary_search(&s).expect("value drawn from raw") as i64)
        .collect()
}

/// Per-column parameters of a z-score transform. Population convention:
/// the standard deviation divides by `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns whose values were all identical; they map to zero.
    pub constant: Vec<bool>,
}

impl StandardizationParams {
    pub fn fit(x: &Array2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut stds = Vec::with_capacity(x.ncols());
        let mut constant = Vec::with_capacity(x.ncols());
        for col in x.axis_iter(Axis(1)) {
            let mean = col.sum() / n;
            let first = col[0];
            let is_constant = col.iter().all(|&v| v == first);
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means.push(mean);
            if is_constant || var <= 0.0 {
                stds.push(1.0);
                constant.push(true);
            } else {
                stds.push(var.sqrt());
                constant.push(false);
            }
        }
        Self {
            means,
            stds,
            constant,
        }
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            if self.constant[j] {
                col.fill(0.0);
            } else {
                let (m, s) = (self.means[j], self.stds[j]);
                col.mapv_inplace(|v| (v - m) / s);
            }
        }
        out
    }

    pub fn inverse_transform(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut out = z.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            if self.constant[j] {
                col.fill(m);
            } else {
                col.mapv_inplace(|v| v * s + m);
            }
        }
        out
    }
}

/// Z-score every column. Constant columns become all-zero and are flagged
/// in the returned parameters.
pub fn standardize(d: &Dataset) -> (Dataset, StandardizationParams) {
    let params = StandardizationParams::fit(&d.features);
    let features = params.transform(&d.features);
    (
        Dataset {
            features,
            ..d.clone()
        },
        params,
    )
}

pub fn unstandardize(d: &Dataset, params: &StandardizationParams) -> Dataset {
    Dataset {
        features: params.inverse_transform(&d.features),
        ..d.clone()
    }
}

/// Per-feature nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "weight vector needs at least one feature");
        Self(vec![1.0 / m as f64; m])
    }

    /// Normalize nonnegative scores to the simplex. Falls back to uniform
    /// weights when every score is zero.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidInput("empty score vector".into()));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidInput(format!(
                "scores must be finite and nonnegative: {scores:?}"
            )));
        }
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return Ok(Self::uniform(scores.len()));
        }
        Ok(Self(scores.iter().map(|s| s / total).collect()))
    }

    /// Like [`from_scores`](Self::from_scores), but entries flagged in
    /// `excluded` are forced to zero and the uniform fallback only covers
    /// the remaining entries.
    pub(crate) fn from_masked_scores(scores: &[f64], excluded: &[bool]) -> Result<Self> {
        let masked: Vec<f64> = scores
            .iter()
            .zip(excluded)
            .map(|(&s, &ex)| if ex { 0.0 } else { s })
            .collect();
        if masked.iter().any(|&s| s > 0.0) || excluded.iter().all(|&e| e) {
            return Self::from_scores(&masked);
        }
        let fallback: Vec<f64> = excluded.iter().map(|&e| if e { 0.0 } else { 1.0 }).collect();
        Self::from_scores(&fallback)
    }

    /// Wrap an already-normalized vector, checking the simplex invariants.
    pub fn try_new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(format!("invalid weights {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Multiply column `j` of the feature matrix by `w[j]`.
pub fn apply_weights(d: &Dataset, w: &WeightVector) -> Result<Dataset> {
    Ok(Dataset {
        features: weight_matrix(&d.features, w)?,
        ..d.clone()
    })
}

pub fn weight_matrix(x: &Array2<f64>, w: &WeightVector) -> Result<Array2<f64>> {
    if w.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            found: w.len(),
        });
    }
    let scale = Array1::from(w.as_slice().to_vec());
    Ok(x * &scale)
}

/// Columns that carry no variation at all.
pub fn constant_columns(x: &Array2<f64>) -> Vec<bool> {
    x.axis_iter(Axis(1))
        .map(|col| {
            let first = col[0];
            col.iter().all(|&v| v == first)
        })
        .collect()
}
