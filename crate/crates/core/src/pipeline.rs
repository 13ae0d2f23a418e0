//! End-to-end experiment: standardize, cluster, derive feature weights from
//! the initial clustering, reweight, cluster again and evaluate.
//!
//! A benchmark suite is a list of experiments. Experiments that share a
//! dataset, algorithm and seed share their initial clustering and their
//! surrogate attributions, so the grid only pays for those once.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cluster::{self, Algorithm, ClusterConfig, LabelVector};
use crate::data::{load_dataset, standardize, weight_matrix, Dataset, WeightVector};
use crate::error::{Error, Result};
use crate::forest::{accuracy, fit_forest, ForestParams};
use crate::metrics::{
    adjusted_rand_index, calinski_harabasz, normalized_mutual_information_with, silhouette,
    NmiNormalization,
};
use crate::shap::{aggregate_to_weights, forest_shap};
use crate::weights::{
    ensemble_weights, ftest_weights, lp_weights, mrmr_weights, pca_weights, WeightMethodSpec,
};

/// Either no reweighting (the baseline) or a weighting method.
#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    Unweighted,
    Method(WeightMethodSpec),
}

impl Default for Weighting {
    fn default() -> Self {
        Weighting::Unweighted
    }
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Weighting::Unweighted => f.write_str("unweighted"),
            Weighting::Method(spec) => spec.fmt(f),
        }
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unweighted" | "none" => Ok(Weighting::Unweighted),
            _ => s.parse().map(Weighting::Method),
        }
    }
}

impl Serialize for Weighting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Weighting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_label_column() -> Option<String> {
    Some("class".into())
}

fn default_iterations() -> usize {
    1
}

/// One experiment. In config files `k` and `seed` are set at the top
/// level; `cluster.k`, `cluster.seed` and `forest.seed` are filled from
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Path to a CSV file; relative paths are resolved against the
    /// directory of the config file.
    pub dataset: PathBuf,
    /// Report name; defaults to the file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Ground-truth column, used only for evaluation. An empty string
    /// means the file has no label column.
    #[serde(default = "default_label_column")]
    pub label_column: Option<String>,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub seed: u64,
    /// Number of clusters; defaults to the number of ground-truth classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Weight-then-recluster rounds. Each round derives weights from the
    /// standardized data and the previous round's labels.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub nmi: NmiNormalization,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub forest: ForestParams,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>, algorithm: Algorithm, weighting: Weighting) -> Self {
        Self {
            dataset: dataset.into(),
            name: None,
            label_column: default_label_column(),
            algorithm,
            weighting,
            seed: 0,
            k: None,
            iterations: 1,
            nmi: NmiNormalization::default(),
            cluster: ClusterConfig::default(),
            forest: ForestParams::default(),
        }
    }

    pub fn dataset_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.dataset
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.dataset.display().to_string())
        })
    }

    pub fn validate(&self) -> Result<()> {
        let defaults = ClusterConfig::default();
        if self.cluster.k != defaults.k || self.cluster.seed != defaults.seed {
            return Err(Error::Config(
                "set k and seed at the experiment level, not under [cluster]".into(),
            ));
        }
        if self.forest.seed != ForestParams::default().seed {
            return Err(Error::Config(
                "set seed at the experiment level, not under [forest]".into(),
            ));
        }
        if self.k == Some(0) {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.forest.n_trees == 0 || self.forest.min_leaf == 0 {
            return Err(Error::Config("forest needs n_trees >= 1 and min_leaf >= 1".into()));
        }
        self.cluster.validate()?;
        if let Weighting::Method(spec) = &self.weighting {
            spec.validate()?;
        }
        Ok(())
    }

    fn label_column(&self) -> Option<&str> {
        self.label_column.as_deref().filter(|c| !c.is_empty())
    }

    fn resolve_paths(&mut self, base: &Path) {
        if self.dataset.is_relative() {
            self.dataset = base.join(&self.dataset);
        }
    }

    fn row_key(&self) -> RowKey {
        RowKey {
            dataset: self.dataset_name(),
            algorithm: self.algorithm,
            weighting: self.weighting.to_string(),
            seed: self.seed,
        }
    }

    /// Everything that determines the initial clustering and surrogate.
    fn group_key(&self) -> String {
        let mut shared = self.clone();
        shared.weighting = Weighting::Unweighted;
        serde_json::to_string(&shared).expect("config serializes")
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Read a single-experiment TOML file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let mut cfg: ExperimentConfig =
        toml::from_str(&read_text(path)?).map_err(|e| Error::Config(e.to_string()))?;
    cfg.resolve_paths(&parent_dir(path));
    cfg.validate()?;
    Ok(cfg)
}

/// Shared settings for every experiment in a suite.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SuiteDefaults {
    label_column: Option<String>,
    seed: u64,
    k: Option<usize>,
    iterations: usize,
    nmi: NmiNormalization,
    cluster: ClusterConfig,
    forest: ForestParams,
}

impl Default for SuiteDefaults {
    fn default() -> Self {
        Self {
            label_column: default_label_column(),
            seed: 0,
            k: None,
            iterations: 1,
            nmi: NmiNormalization::default(),
            cluster: ClusterConfig::default(),
            forest: ForestParams::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteGrid {
    datasets: Vec<PathBuf>,
    algorithms: Vec<Algorithm>,
    weightings: Vec<Weighting>,
    #[serde(default)]
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    #[serde(default)]
    defaults: SuiteDefaults,
    grid: Option<SuiteGrid>,
    #[serde(default)]
    experiment: Vec<ExperimentConfig>,
}

/// Parse a suite: the cartesian product of `[grid]` (datasets × algorithms
/// × weightings × seeds, using `[defaults]`) followed by any explicit
/// `[[experiment]]` tables.
pub fn parse_suite(text: &str, base: &Path) -> Result<Vec<ExperimentConfig>> {
    let file: SuiteFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let d = &file.defaults;
    let mut suite = Vec::new();
    if let Some(grid) = &file.grid {
        let seeds = grid.seeds.clone().unwrap_or_else(|| vec![d.seed]);
        for dataset in &grid.datasets {
            for &algorithm in &grid.algorithms {
                for weighting in &grid.weightings {
                    for &seed in &seeds {
                        suite.push(ExperimentConfig {
                            dataset: dataset.clone(),
                            name: None,
                            label_column: d.label_column.clone(),
                            algorithm,
                            weighting: weighting.clone(),
                            seed,
                            k: d.k,
                            iterations: d.iterations,
                            nmi: d.nmi,
                            cluster: d.cluster.clone(),
                            forest: d.forest.clone(),
                        });
                    }
                }
            }
        }
    }
    suite.extend(file.experiment);
    let mut seen = HashSet::new();
    for cfg in &mut suite {
        cfg.resolve_paths(base);
        cfg.validate()?;
        let key = cfg.row_key();
        if !seen.insert(key.clone()) {
            return Err(Error::Config(format!("duplicate suite row {key}")));
        }
    }
    Ok(suite)
}

pub fn load_suite(path: impl AsRef<Path>) -> Result<Vec<ExperimentConfig>> {
    let path = path.as_ref();
    parse_suite(&read_text(path)?, &parent_dir(path))
}

/// Serde helper for optional reals that may be infinite: finite values are
/// numbers, infinities are the strings `"inf"` / `"-inf"`.
mod real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_f64(*x),
            Some(x) => s.serialize_str(&super::format_real(Some(*x))),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => super::parse_real(&t).map_err(serde::de::Error::custom),
        }
    }
}

fn format_real(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x == f64::INFINITY => "inf".into(),
        Some(x) if x == f64::NEG_INFINITY => "-inf".into(),
        Some(x) => x.to_string(),
    }
}

fn parse_real(s: &str) -> std::result::Result<Option<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|e| format!("bad number {s:?}: {e}"))
}

/// The four quality measures. A measure whose preconditions did not hold
/// is `None`, with the reason under `missing`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(with = "real", default)]
    pub ari: Option<f64>,
    #[serde(with = "real", default)]
    pub nmi: Option<f64>,
    #[serde(with = "real", default)]
    pub silhouette: Option<f64>,
    #[serde(with = "real", default)]
    pub ch: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub missing: BTreeMap<String, String>,
}

/// Score `labels` against the ground truth (ARI, NMI; noise counts as a
/// label) and against the matrix that was clustered (Silhouette, CH; noise
/// rows excluded).
pub fn evaluate(
    x: &Array2<f64>,
    labels: &LabelVector,
    truth: Option<&[i64]>,
    nmi: NmiNormalization,
) -> Metrics {
    let mut m = Metrics::default();
    let mut record = |name: &str, r: Result<f64>, slot: &mut Option<f64>| match r {
        Ok(v) => *slot = Some(v),
        Err(e) => {
            m.missing.insert(name.into(), e.to_string());
        }
    };
    let (mut ari, mut nmi_v, mut sil, mut ch) = (None, None, None, None);
    match truth {
        Some(t) => {
            record("ari", adjusted_rand_index(t, labels.as_slice()), &mut ari);
            record(
                "nmi",
                normalized_mutual_information_with(t, labels.as_slice(), nmi),
                &mut nmi_v,
            );
        }
        None => {
            record("ari", Err(Error::InvalidInput("no ground-truth labels".into())), &mut ari);
            record("nmi", Err(Error::InvalidInput("no ground-truth labels".into())), &mut nmi_v);
        }
    }
    let rows = labels.assigned_rows();
    let (xs, ls);
    let (x_eval, l_eval): (&Array2<f64>, &[i64]) = if rows.len() == labels.len() {
        (x, labels.as_slice())
    } else {
        xs = x.select(Axis(0), &rows);
        ls = rows.iter().map(|&i| labels.as_slice()[i]).collect::<Vec<_>>();
        (&xs, &ls)
    };
    record("silhouette", silhouette(x_eval, l_eval), &mut sil);
    record("ch", calinski_harabasz(x_eval, l_eval), &mut ch);
    m.ari = ari;
    m.nmi = nmi_v;
    m.silhouette = sil;
    m.ch = ch;
    m
}

/// What the surrogate forest looked like on the rows it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSummary {
    pub n_train: usize,
    pub n_trees: usize,
    pub n_classes: usize,
    pub train_accuracy: f64,
    /// Max over samples and classes of |base + Σφ − predicted probability|.
    pub max_local_accuracy_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub dataset: String,
    pub weighting: String,
    pub n_samples: usize,
    pub n_features: usize,
    pub k: usize,
    pub feature_names: Vec<String>,
    pub weight_vector: Option<WeightVector>,
    /// Scores of the final labels `labels`.
    pub metrics: Metrics,
    /// Scores of the initial labels `initial_labels`.
    pub initial_metrics: Metrics,
    pub surrogate: Option<SurrogateSummary>,
    pub warnings: Vec<String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub initial_labels: LabelVector,
    pub labels: LabelVector,
}

struct Prepared {
    name: String,
    data: Dataset,
    cluster_cfg: ClusterConfig,
    forest: ForestParams,
    y0: LabelVector,
    initial_metrics: Metrics,
    warnings: Vec<String>,
    timings: BTreeMap<String, f64>,
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *timings.entry(stage.into()).or_insert(0.0) += start.elapsed().as_secs_f64();
    out
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();
    let mut warnings = Vec::new();
    let data = timed(&mut timings, "load", || {
        load_dataset(&cfg.dataset, cfg.label_column())
    })
    .map_err(|e| e.in_stage("load"))?;
    let (data, params) = timed(&mut timings, "standardize", || standardize(&data));
    for (j, _) in params.constant.iter().enumerate().filter(|(_, &c)| c) {
        warnings.push(format!(
            "feature {:?} is constant; it was set to 0 and gets zero weight",
            data.feature_names[j]
        ));
    }
    let k = match (cfg.k, data.n_classes()) {
        (Some(k), _) => k,
        (None, Some(c)) => c,
        (None, None) => {
            return Err(Error::Config(
                "k is required when the dataset has no label column".into(),
            ))
        }
    };
    let cluster_cfg = ClusterConfig {
        k,
        seed: cfg.seed,
        ..cfg.cluster.clone()
    };
    let forest = ForestParams {
        seed: cfg.seed,
        ..cfg.forest.clone()
    };
    let y0 = timed(&mut timings, "initial_clustering", || {
        cluster::run(cfg.algorithm, &data.features, &cluster_cfg)
    })
    .map_err(|e| e.in_stage("initial_clustering"))?;
    let initial_metrics = timed(&mut timings, "initial_evaluation", || {
        evaluate(&data.features, &y0, data.true_labels.as_deref(), cfg.nmi)
    });
    Ok(Prepared {
        name: cfg.dataset_name(),
        data,
        cluster_cfg,
        forest,
        y0,
        initial_metrics,
        warnings,
        timings,
    })
}

#[derive(Debug, Clone)]
struct Computed {
    weights: WeightVector,
    surrogate: Option<SurrogateSummary>,
    warnings: Vec<String>,
}

/// Single-method weights keyed by method string; valid for one label
/// vector only.
#[derive(Default)]
struct WeightCache(HashMap<String, Computed>);

fn surrogate_weights(x: &Array2<f64>, labels: &LabelVector, params: &ForestParams) -> Computed {
    let rows = labels.assigned_rows();
    let xs = x.select(Axis(0), &rows);
    let ys: Vec<i64> = rows.iter().map(|&i| labels.as_slice()[i]).collect();
    let ys = LabelVector::from_raw(&ys);
    let attempt = || -> Result<Computed> {
        let forest = fit_forest(&xs, &ys, params)?;
        let tensor = forest_shap(&forest, &xs)?;
        let summary = SurrogateSummary {
            n_train: rows.len(),
            n_trees: forest.trees.len(),
            n_classes: forest.n_classes,
            train_accuracy: accuracy(&forest, &xs, ys.as_slice())?,
            max_local_accuracy_error: tensor.max_local_accuracy_error(&forest, &xs)?,
        };
        Ok(Computed {
            weights: aggregate_to_weights(&tensor)?,
            surrogate: Some(summary),
            warnings: Vec::new(),
        })
    };
    attempt().unwrap_or_else(|e| Computed {
        weights: WeightVector::uniform(x.ncols()),
        surrogate: None,
        warnings: vec![format!("surrogate failed ({e}); using uniform weights")],
    })
}

fn single_method(
    spec: &WeightMethodSpec,
    x: &Array2<f64>,
    labels: &LabelVector,
    forest: &ForestParams,
    cache: &mut WeightCache,
) -> Result<Computed> {
    let key = spec.to_string();
    if let Some(hit) = cache.0.get(&key) {
        return Ok(hit.clone());
    }
    let plain = |weights: WeightVector| Computed {
        weights,
        surrogate: None,
        warnings: Vec::new(),
    };
    let computed = if labels.n_clusters() < 2 && !matches!(spec, WeightMethodSpec::Pca { .. }) {
        Computed {
            weights: WeightVector::uniform(x.ncols()),
            surrogate: None,
            warnings: vec![format!(
                "{key}: initial clustering has {} cluster(s); using uniform weights",
                labels.n_clusters()
            )],
        }
    } else {
        match spec {
            WeightMethodSpec::Shap => surrogate_weights(x, labels, forest),
            WeightMethodSpec::Lp { p } => plain(lp_weights(x, labels, *p)?),
            WeightMethodSpec::Mrmr { bins } => plain(mrmr_weights(x, labels, *bins)?),
            WeightMethodSpec::Pca { variance_threshold } => {
                plain(pca_weights(x, *variance_threshold)?)
            }
            WeightMethodSpec::FTest => plain(ftest_weights(x, labels)?),
            WeightMethodSpec::Ensemble(_) => unreachable!("ensembles are expanded by the caller"),
        }
    };
    cache.0.insert(key, computed.clone());
    Ok(computed)
}

fn compute_weights(
    spec: &WeightMethodSpec,
    x: &Array2<f64>,
    labels: &LabelVector,
    forest: &ForestParams,
    cache: &mut WeightCache,
) -> Result<Computed> {
    let WeightMethodSpec::Ensemble(parts) = spec else {
        return single_method(spec, x, labels, forest, cache);
    };
    let mut computed = Vec::with_capacity(parts.len());
    for part in parts {
        computed.push(single_method(part, x, labels, forest, cache)?);
    }
    let vectors: Vec<WeightVector> = computed.iter().map(|c| c.weights.clone()).collect();
    Ok(Computed {
        weights: ensemble_weights(&vectors)?,
        surrogate: computed.iter().find_map(|c| c.surrogate.clone()),
        warnings: computed.into_iter().flat_map(|c| c.warnings).collect(),
    })
}

fn finish(cfg: &ExperimentConfig, prep: &Prepared, cache: &mut WeightCache) -> Result<RunReport> {
    let mut timings = prep.timings.clone();
    let mut warnings = prep.warnings.clone();
    let x = &prep.data.features;
    let truth = prep.data.true_labels.as_deref();
    let (weight_vector, surrogate, labels, metrics) = match &cfg.weighting {
        Weighting::Unweighted => (None, None, prep.y0.clone(), prep.initial_metrics.clone()),
        Weighting::Method(spec) => {
            let mut labels = prep.y0.clone();
            let mut fresh = WeightCache::default();
            let mut last = None;
            for round in 0..cfg.iterations {
                let cache = if round == 0 { &mut *cache } else { &mut fresh };
                if round > 0 {
                    cache.0.clear();
                }
                let computed = timed(&mut timings, "weighting", || {
                    compute_weights(spec, x, &labels, &prep.forest, cache)
                })
                .map_err(|e| e.in_stage("weighting"))?;
                let xw = weight_matrix(x, &computed.weights)?;
                labels = timed(&mut timings, "reclustering", || {
                    cluster::run(cfg.algorithm, &xw, &prep.cluster_cfg)
                })
                .map_err(|e| e.in_stage("reclustering"))?;
                last = Some((computed, xw));
            }
            let (computed, xw) = last.expect("iterations >= 1");
            warnings.extend(computed.warnings);
            let metrics = timed(&mut timings, "evaluation", || {
                evaluate(&xw, &labels, truth, cfg.nmi)
            });
            (Some(computed.weights), computed.surrogate, labels, metrics)
        }
    };
    Ok(RunReport {
        config: cfg.clone(),
        dataset: prep.name.clone(),
        weighting: cfg.weighting.to_string(),
        n_samples: prep.data.n_samples(),
        n_features: prep.data.n_features(),
        k: prep.cluster_cfg.k,
        feature_names: prep.data.feature_names.clone(),
        weight_vector,
        metrics,
        initial_metrics: prep.initial_metrics.clone(),
        surrogate,
        warnings,
        timings,
        initial_labels: prep.y0.clone(),
        labels,
    })
}

/// Weights `spec` assigns to `x` given a partition, with the same
/// fallbacks as a pipeline run. Returns the warnings raised on the way.
pub fn method_weights(
    spec: &WeightMethodSpec,
    x: &Array2<f64>,
    labels: &LabelVector,
    forest: &ForestParams,
) -> Result<(WeightVector, Vec<String>)> {
    spec.validate()?;
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: labels.len(),
        });
    }
    let c = compute_weights(spec, x, labels, forest, &mut WeightCache::default())?;
    Ok((c.weights, c.warnings))
}

/// Run one experiment. Ground-truth labels are read only for ARI/NMI.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let prep = prepare(cfg)?;
    finish(cfg, &prep, &mut WeightCache::default())
}

/// Weights the configured method assigns after the initial clustering,
/// without reclustering. `None` for the unweighted baseline.
pub fn compute_weight_vector(cfg: &ExperimentConfig) -> Result<(Vec<String>, Option<WeightVector>)> {
    let prep = prepare(cfg)?;
    let names = prep.data.feature_names.clone();
    match &cfg.weighting {
        Weighting::Unweighted => Ok((names, None)),
        Weighting::Method(spec) => {
            let c = compute_weights(
                spec,
                &prep.data.features,
                &prep.y0,
                &prep.forest,
                &mut WeightCache::default(),
            )
            .map_err(|e| e.in_stage("weighting"))?;
            Ok((names, Some(c.weights)))
        }
    }
}

/// Identity of a benchmark row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowKey {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub weighting: String,
    pub seed: u64,
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, seed {})", self.dataset, self.algorithm, self.weighting, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Failed,
}

/// One row of the benchmark table. `report` is kept only in the JSON
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub weighting: String,
    pub seed: u64,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub metrics: Metrics,
    pub initial_metrics: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
}

impl BenchRecord {
    pub fn key(&self) -> RowKey {
        RowKey {
            dataset: self.dataset.clone(),
            algorithm: self.algorithm,
            weighting: self.weighting.clone(),
            seed: self.seed,
        }
    }

    fn from_result(cfg: &ExperimentConfig, result: Result<RunReport>) -> Self {
        let key = cfg.row_key();
        let base = BenchRecord {
            dataset: key.dataset,
            algorithm: key.algorithm,
            weighting: key.weighting,
            seed: key.seed,
            status: RowStatus::Ok,
            error: None,
            metrics: Metrics::default(),
            initial_metrics: Metrics::default(),
            report: None,
        };
        match result {
            Ok(report) => BenchRecord {
                metrics: report.metrics.clone(),
                initial_metrics: report.initial_metrics.clone(),
                report: Some(report),
                ..base
            },
            Err(e) => BenchRecord {
                status: RowStatus::Failed,
                error: Some(e.to_string()),
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    /// `.json` selects JSON; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => OutputFormat::Json,
            _ => OutputFormat::Csv,
        }
    }
}

const CSV_HEADER: [&str; 15] = [
    "dataset",
    "algorithm",
    "weighting",
    "seed",
    "status",
    "ari",
    "silhouette",
    "nmi",
    "ch",
    "y0_ari",
    "y0_silhouette",
    "y0_nmi",
    "y0_ch",
    "error",
    "warnings",
];

pub fn write_table(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let bytes = match OutputFormat::from_path(path) {
        OutputFormat::Json => serde_json::to_vec_pretty(records)
            .map_err(|e| Error::InvalidInput(format!("cannot serialize reports: {e}")))?,
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for r in records {
                let (m, y0) = (&r.metrics, &r.initial_metrics);
                let warnings = r.report.as_ref().map(|rep| rep.warnings.join("; ")).unwrap_or_default();
                w.write_record([
                    r.dataset.clone(),
                    r.algorithm.to_string(),
                    r.weighting.clone(),
                    r.seed.to_string(),
                    match r.status {
                        RowStatus::Ok => "ok".into(),
                        RowStatus::Failed => "failed".into(),
                    },
                    format_real(m.ari),
                    format_real(m.silhouette),
                    format_real(m.nmi),
                    format_real(m.ch),
                    format_real(y0.ari),
                    format_real(y0.silhouette),
                    format_real(y0.nmi),
                    format_real(y0.ch),
                    r.error.clone().unwrap_or_default(),
                    warnings,
                ])?;
            }
            w.into_inner()
                .map_err(|e| Error::InvalidInput(format!("cannot flush CSV: {e}")))?
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn read_table(path: &Path) -> Result<Vec<BenchRecord>> {
    let text = read_text(path)?;
    match OutputFormat::from_path(path) {
        OutputFormat::Json => serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display()))),
        OutputFormat::Csv => {
            let mut r = csv::Reader::from_reader(text.as_bytes());
            let header = r.headers()?.clone();
            let col = |name: &str| -> Result<usize> {
                header
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::InvalidInput(format!("column {name:?} missing in {}", path.display())))
            };
            let idx: Vec<usize> = CSV_HEADER[..14].iter().map(|c| col(c)).collect::<Result<_>>()?;
            let bad = |e: String| Error::InvalidInput(format!("{}: {e}", path.display()));
            let mut out = Vec::new();
            for rec in r.records() {
                let rec = rec?;
                let f = |i: usize| rec.get(idx[i]).unwrap_or("");
                let real = |i: usize| parse_real(f(i)).map_err(bad);
                out.push(BenchRecord {
                    dataset: f(0).into(),
                    algorithm: f(1).parse()?,
                    weighting: f(2).into(),
                    seed: f(3).parse().map_err(|e| bad(format!("seed: {e}")))?,
                    status: match f(4) {
                        "ok" => RowStatus::Ok,
                        _ => RowStatus::Failed,
                    },
                    metrics: Metrics {
                        ari: real(5)?,
                        silhouette: real(6)?,
                        nmi: real(7)?,
                        ch: real(8)?,
                        missing: BTreeMap::new(),
                    },
                    initial_metrics: Metrics {
                        ari: real(9)?,
                        silhouette: real(10)?,
                        nmi: real(11)?,
                        ch: real(12)?,
                        missing: BTreeMap::new(),
                    },
                    error: Some(f(13).to_string()).filter(|e| !e.is_empty()),
                    report: None,
                });
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    /// One record per suite entry, in suite order.
    pub records: Vec<BenchRecord>,
    /// Rows computed in this invocation.
    pub executed: usize,
    /// Rows taken from an existing output file.
    pub reused: usize,
}

impl BenchmarkOutcome {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| r.status == RowStatus::Failed).count()
    }
}

/// Run every experiment in `suite`. With `out`, rows already present there
/// with status `ok` are reused rather than recomputed, and the table is
/// rewritten after each group of rows sharing an initial clustering. A
/// failing row is recorded and the rest of the suite continues.
pub fn run_benchmark(suite: &[ExperimentConfig], out: Option<&Path>) -> Result<BenchmarkOutcome> {
    let mut done: HashMap<RowKey, BenchRecord> = HashMap::new();
    if let Some(path) = out.filter(|p| p.exists()) {
        for r in read_table(path)? {
            if r.status == RowStatus::Ok {
                done.insert(r.key(), r);
            }
        }
    }
    let wanted: HashSet<RowKey> = suite.iter().map(|c| c.row_key()).collect();
    done.retain(|k, _| wanted.contains(k));
    let reused = done.len();

    let mut groups: Vec<(String, Vec<&ExperimentConfig>)> = Vec::new();
    let mut group_index: HashMap<String, usize> = HashMap::new();
    for cfg in suite.iter().filter(|c| !done.contains_key(&c.row_key())) {
        let key = cfg.group_key();
        let slot = *group_index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(cfg);
    }
    let executed: usize = groups.iter().map(|(_, g)| g.len()).sum();

    let results = Mutex::new(done);
    let ordered = |map: &HashMap<RowKey, BenchRecord>| -> Vec<BenchRecord> {
        suite.iter().filter_map(|c| map.get(&c.row_key()).cloned()).collect()
    };
    let write_error: Mutex<Option<Error>> = Mutex::new(None);
    groups.par_iter().for_each(|(_, rows)| {
        let records: Vec<BenchRecord> = match prepare(rows[0]) {
            Ok(prep) => {
                let mut cache = WeightCache::default();
                rows.iter()
                    .map(|cfg| {
                        let rec = BenchRecord::from_result(cfg, finish(cfg, &prep, &mut cache));
                        log::info!("{} {:?}", cfg.row_key(), rec.status);
                        rec
                    })
                    .collect()
            }
            Err(e) => rows
                .iter()
                .map(|cfg| BenchRecord::from_result(cfg, Err(Error::InvalidInput(e.to_string()))))
                .collect(),
        };
        let mut map = results.lock().expect("results lock");
        for r in records {
            map.insert(r.key(), r);
        }
        if let Some(path) = out {
            if let Err(e) = write_table(path, &ordered(&map)) {
                write_error.lock().expect("error lock").get_or_insert(e);
            }
        }
    });
    if let Some(e) = write_error.into_inner().expect("error lock") {
        return Err(e);
    }
    let map = results.into_inner().expect("results lock");
    let records = ordered(&map);
    if let Some(path) = out {
        write_table(path, &records)?;
    }
    Ok(BenchmarkOutcome {
        records,
        executed,
        reused,
    })
}
