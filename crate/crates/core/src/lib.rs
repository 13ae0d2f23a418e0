//! Feature-weighted clustering: cluster once, explain the clustering with a
//! random-forest surrogate and TreeSHAP, reweight the features and cluster
//! again.

pub mod cluster;
pub mod data;
pub mod error;
pub mod forest;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod shap;
pub mod weights;

pub use cluster::{Algorithm, ClusterConfig, LabelVector, NOISE};
pub use data::{apply_weights, load_dataset, standardize, Dataset, WeightVector};
pub use error::{Error, Result};
pub use forest::{fit_forest, Forest, ForestParams, Tree, TreeNode};
pub use shap::{forest_shap, tree_shap_single, ShapTensor};
pub use weights::WeightMethodSpec;
pub use pipeline::{
    load_config, load_suite, run_benchmark, run_experiment, ExperimentConfig, Metrics, RunReport,
    Weighting,
};
