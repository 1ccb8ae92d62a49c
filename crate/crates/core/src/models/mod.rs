//! Classifiers. Every model maps a feature row to a score where higher
//! means more malicious.

mod knn;
mod linear;
mod nn;
mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, ProjectionSparsity, Row};

pub use knn::{knn_all, knn_neighbors};
pub use linear::LinearModel;
pub use nn::{Mlp, NnModel, ProjectionSpec};
pub use tree::{BoostedTrees, Forest, Node, Tree};

/// Rows, labels and app ids, kept in lockstep.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: FeatureMatrix,
    pub y: Vec<u8>,
    pub ids: Vec<String>,
}

impl Dataset {
    pub fn new(x: FeatureMatrix, y: Vec<u8>, ids: Vec<String>) -> Result<Self> {
        if x.n_rows() != y.len() {
            return Err(Error::Shape { expected: x.n_rows(), got: y.len() });
        }
        if ids.len() != y.len() {
            return Err(Error::Shape { expected: y.len(), got: ids.len() });
        }
        if let Some(&bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::Config(format!("label {bad} is not 0 or 1")));
        }
        x.validate()?;
        Ok(Self { x, y, ids })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        self.x.row(i)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    /// `(benign, malicious)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let mal = self.y.iter().filter(|&&v| v == 1).count();
        (self.y.len() - mal, mal)
    }

    pub(crate) fn require_both_classes(&self) -> Result<()> {
        let (b, m) = self.class_counts();
        if b == 0 || m == 0 {
            return Err(Error::Train(format!("dataset needs both classes, got {b} benign and {m} malicious rows")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Lsvm,
    Gbt,
    Rf,
    Nn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Lsvm, ModelKind::Gbt, ModelKind::Rf, ModelKind::Nn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lsvm => "lsvm",
            ModelKind::Gbt => "gbt",
            ModelKind::Rf => "rf",
            ModelKind::Nn => "nn",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsvmConfig {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for LsvmConfig {
    fn default() -> Self {
        Self { lambda: 1.0, epochs: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    pub trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf values.
    pub l2: f64,
    /// Histogram bins for dense inputs.
    pub max_bins: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self { trees: 300, depth: 3, learning_rate: 0.1, l2: 1.0, max_bins: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfConfig {
    pub trees: usize,
    /// Unlimited when absent.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `floor(sqrt(d))` when absent.
    pub max_features: Option<usize>,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self { trees: 300, max_depth: None, min_samples_leaf: 1, max_features: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnConfig {
    /// Hidden layer widths; the input width comes from the data and the
    /// output width is 1.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Sparse inputs wider than this are randomly projected down to it.
    pub projection_dim: Option<usize>,
    pub projection_sparsity: ProjectionSparsity,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32, 16],
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            projection_dim: Some(1024),
            projection_sparsity: ProjectionSparsity::Achlioptas,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub seed: u64,
    pub lsvm: LsvmConfig,
    pub gbt: GbtConfig,
    pub rf: RfConfig,
    pub nn: NnConfig,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        Self { kind, seed, ..Default::default() }
    }

    /// Sizes used for the large-corpus setting.
    pub fn large(kind: ModelKind, seed: u64) -> Self {
        let mut cfg = Self::new(kind, seed);
        cfg.gbt.trees = 3000;
        cfg.nn.hidden = vec![240, 120, 60];
        cfg.nn.projection_dim = Some(24_000);
        cfg.nn.epochs = 5000;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        match self.kind {
            ModelKind::Lsvm => {
                if !(self.lsvm.lambda > 0.0) {
                    return bad("lsvm.lambda must be positive");
                }
                if self.lsvm.epochs == 0 {
                    return bad("lsvm.epochs must be at least 1");
                }
            }
            ModelKind::Gbt => {
                if self.gbt.trees == 0 || self.gbt.depth == 0 {
                    return bad("gbt.trees and gbt.depth must be at least 1");
                }
                if !(self.gbt.learning_rate > 0.0) || self.gbt.l2 < 0.0 {
                    return bad("gbt.learning_rate must be positive and gbt.l2 non-negative");
                }
                if self.gbt.max_bins < 2 || self.gbt.max_bins > 256 {
                    return bad("gbt.max_bins must be in 2..=256");
                }
            }
            ModelKind::Rf => {
                if self.rf.trees == 0 || self.rf.min_samples_leaf == 0 || self.rf.max_features == Some(0) {
                    return bad("rf.trees, rf.min_samples_leaf and rf.max_features must be at least 1");
                }
            }
            ModelKind::Nn => {
                let h = &self.nn.hidden;
                if h.is_empty() || h.contains(&0) || h.windows(2).any(|w| w[1] > w[0]) {
                    return bad("nn.hidden must be a non-empty, non-increasing list of positive widths");
                }
                if self.nn.epochs == 0 || self.nn.batch_size == 0 || !(self.nn.learning_rate > 0.0) {
                    return bad("nn.epochs, nn.batch_size and nn.learning_rate must be positive");
                }
                if self.nn.projection_dim == Some(0) {
                    return bad("nn.projection_dim must be positive");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedModel {
    Lsvm(LinearModel),
    Gbt(BoostedTrees),
    Rf(Forest),
    Nn(NnModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Lsvm(_) => ModelKind::Lsvm,
            TrainedModel::Gbt(_) => ModelKind::Gbt,
            TrainedModel::Rf(_) => ModelKind::Rf,
            TrainedModel::Nn(_) => ModelKind::Nn,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            TrainedModel::Lsvm(m) => m.w.len(),
            TrainedModel::Gbt(m) => m.in_dim,
            TrainedModel::Rf(m) => m.in_dim,
            TrainedModel::Nn(m) => m.in_dim(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile { format: MODEL_FORMAT.into(), version: MODEL_VERSION, model: self.clone() };
        crate::io::write_atomic(path, &serde_json::to_vec(&file)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Format {
                path: path.to_owned(),
                reason: format!("unsupported model container {} v{}", file.format, file.version),
            });
        }
        Ok(file.model)
    }
}

const MODEL_FORMAT: &str = "spoofbench-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: TrainedModel,
}

pub fn train(cfg: &ModelConfig, ds: &Dataset) -> Result<TrainedModel> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Train("empty dataset".into()));
    }
    ds.require_both_classes()?;
    Ok(match cfg.kind {
        ModelKind::Lsvm => TrainedModel::Lsvm(linear::train(&cfg.lsvm, ds)),
        ModelKind::Gbt => TrainedModel::Gbt(tree::train_gbt(&cfg.gbt, ds)),
        ModelKind::Rf => TrainedModel::Rf(tree::train_rf(&cfg.rf, cfg.seed, ds)),
        ModelKind::Nn => TrainedModel::Nn(nn::train(&cfg.nn, cfg.seed, ds)?),
    })
}

pub fn predict(model: &TrainedModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    if x.dim() != model.in_dim() {
        return Err(Error::Shape { expected: model.in_dim(), got: x.dim() });
    }
    Ok(match model {
        TrainedModel::Lsvm(m) => (0..x.n_rows()).map(|i| m.score(x.row(i))).collect(),
        TrainedModel::Gbt(m) => (0..x.n_rows()).map(|i| m.score(x.row(i))).collect(),
        TrainedModel::Rf(m) => (0..x.n_rows()).map(|i| m.score(x.row(i))).collect(),
        TrainedModel::Nn(m) => m.predict(x)?,
    })
}

/// Mean training logistic loss after each boosting round.
pub fn gbt_training_losses(cfg: &GbtConfig, ds: &Dataset) -> Result<Vec<f64>> {
    ModelConfig { kind: ModelKind::Gbt, gbt: cfg.clone(), ..Default::default() }.validate()?;
    ds.require_both_classes()?;
    let mut losses = Vec::with_capacity(cfg.trees);
    tree::train_gbt_traced(cfg, ds, |f| losses.push(tree::logistic_loss(f, &ds.y)));
    Ok(losses)
}

/// Last hidden layer activations of a trained network.
pub fn nn_penultimate(model: &TrainedModel, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    match model {
        TrainedModel::Nn(m) => {
            if x.dim() != m.in_dim() {
                return Err(Error::Shape { expected: m.in_dim(), got: x.dim() });
            }
            m.penultimate(x)
        }
        other => Err(Error::Kind { expected: "nn", got: other.kind().as_str() }),
    }
}
