//! Versioned JSON model files.
//!
//! Trees are stored as flat parallel arrays. Floats are written in shortest
//! round-trip form and parsed exactly, so a reloaded model predicts
//! bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cart::{Bootstrap, CartForest, CartNode, CartParams, CartTree};
use crate::centered::{CenteredForest, CenteredTree, Leaf};
use crate::dcov::FeatureWeights;
use crate::error::{Error, Result};
use crate::harness::ingest::Encoder;
use crate::transfer::{ForestModel, TargetSplit, TransferModel};

pub const FORMAT_VERSION: u32 = 1;
pub const FORMAT_NAME: &str = "tlforest-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfTreeArrays {
    pub features: Vec<u32>,
    pub split_values: Vec<f64>,
    pub leaf_means: Vec<f64>,
    pub leaf_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfFile {
    pub version: u32,
    pub d: usize,
    pub depth: usize,
    pub n_trees: usize,
    pub seed: u64,
    pub weights: Vec<f64>,
    pub trees: Vec<CrfTreeArrays>,
}

/// Node `k` is a leaf when `feature[k] < 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartTreeArrays {
    pub feature: Vec<i64>,
    pub threshold: Vec<f64>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub value: Vec<f64>,
    pub count: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartFile {
    pub version: u32,
    pub d: usize,
    pub n_trees: usize,
    pub mtry: usize,
    /// `None` for the identity bootstrap.
    pub n_boot: Option<usize>,
    pub max_depth: Option<usize>,
    pub seed: u64,
    pub weights: Vec<f64>,
    pub trees: Vec<CartTreeArrays>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFile {
    pub version: u32,
    pub d: usize,
    pub source: Box<ModelFile>,
    pub residual: Box<ModelFile>,
    pub dcov_weights: Vec<f64>,
    pub split_train: Vec<usize>,
    pub split_weight: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFile {
    Crf(CrfFile),
    Cart(CartFile),
    Transfer(TransferFile),
}

/// What a model file holds once decoded.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Forest(ForestModel),
    Transfer(TransferModel),
}

impl Model {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Model::Forest(f) => f.predict(x),
            Model::Transfer(t) => t.predict(x),
        }
    }

    pub fn predict_matrix(&self, x: &crate::FeatureMatrix) -> Vec<f64> {
        match self {
            Model::Forest(f) => f.predict_matrix(x),
            Model::Transfer(t) => t.predict_matrix(x),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Forest(f) => f.n_features(),
            Model::Transfer(t) => t.n_features(),
        }
    }
}

/// Top-level document: the model plus the column encoder used to build its
/// training matrix, when it was trained from CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub method: String,
    pub encoder: Option<Encoder>,
    pub model: ModelFile,
}

impl ModelDocument {
    pub fn new(method: impl Into<String>, model: &Model, encoder: Option<Encoder>) -> Self {
        Self {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            method: method.into(),
            encoder,
            model: ModelFile::from(model),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.format != FORMAT_NAME {
            return Err(Error::Model(format!("unknown format `{}`", doc.format)));
        }
        check_version(doc.version)?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn decode(&self) -> Result<Model> {
        Model::try_from(&self.model)
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Model(format!(
            "unsupported version {v}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

impl From<&CenteredForest> for CrfFile {
    fn from(f: &CenteredForest) -> Self {
        Self {
            version: FORMAT_VERSION,
            d: f.n_features(),
            depth: f.depth,
            n_trees: f.trees.len(),
            seed: f.seed,
            weights: f.weights.as_slice().to_vec(),
            trees: f
                .trees
                .iter()
                .map(|t| CrfTreeArrays {
                    features: t.features.clone(),
                    split_values: t.split_values.clone(),
                    leaf_means: t.leaves.iter().map(|l| l.mean).collect(),
                    leaf_counts: t.leaves.iter().map(|l| l.count).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<&CrfFile> for CenteredForest {
    type Error = Error;

    fn try_from(file: &CrfFile) -> Result<Self> {
        check_version(file.version)?;
        if file.trees.len() != file.n_trees {
            return Err(Error::Model("tree count mismatch".into()));
        }
        let trees = file
            .trees
            .iter()
            .map(|t| {
                if t.leaf_means.len() != t.leaf_counts.len() {
                    return Err(Error::Model("leaf arrays differ in length".into()));
                }
                Ok(CenteredTree {
                    d: file.d,
                    depth: file.depth,
                    features: t.features.clone(),
                    split_values: t.split_values.clone(),
                    leaves: t
                        .leaf_means
                        .iter()
                        .zip(&t.leaf_counts)
                        .map(|(&mean, &count)| Leaf { mean, count })
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let forest = CenteredForest {
            trees,
            weights: FeatureWeights::new(file.weights.clone())?,
            depth: file.depth,
            seed: file.seed,
        };
        forest.check_consistent()?;
        Ok(forest)
    }
}

impl From<&CartForest> for CartFile {
    fn from(f: &CartForest) -> Self {
        let trees = f
            .trees
            .iter()
            .map(|t| {
                let mut a = CartTreeArrays {
                    feature: Vec::new(),
                    threshold: Vec::new(),
                    left: Vec::new(),
                    right: Vec::new(),
                    value: Vec::new(),
                    count: Vec::new(),
                };
                for node in &t.nodes {
                    match *node {
                        CartNode::Leaf { value, count } => {
                            a.feature.push(-1);
                            a.threshold.push(0.0);
                            a.left.push(0);
                            a.right.push(0);
                            a.value.push(value);
                            a.count.push(count);
                        }
                        CartNode::Split {
                            feature,
                            threshold,
                            left,
                            right,
                            count,
                        } => {
                            a.feature.push(feature as i64);
                            a.threshold.push(threshold);
                            a.left.push(left);
                            a.right.push(right);
                            a.value.push(0.0);
                            a.count.push(count);
                        }
                    }
                }
                a
            })
            .collect();
        Self {
            version: FORMAT_VERSION,
            d: f.n_features(),
            n_trees: f.trees.len(),
            mtry: f.params.mtry,
            n_boot: match f.params.bootstrap {
                Bootstrap::WithReplacement(n) => Some(n),
                Bootstrap::Identity => None,
            },
            max_depth: f.params.max_depth,
            seed: f.params.seed,
            weights: f.weights.as_slice().to_vec(),
            trees,
        }
    }
}

impl TryFrom<&CartFile> for CartForest {
    type Error = Error;

    fn try_from(file: &CartFile) -> Result<Self> {
        check_version(file.version)?;
        if file.trees.len() != file.n_trees {
            return Err(Error::Model("tree count mismatch".into()));
        }
        let trees = file
            .trees
            .iter()
            .map(|a| {
                let n = a.feature.len();
                if [a.threshold.len(), a.left.len(), a.right.len(), a.value.len(), a.count.len()]
                    .iter()
                    .any(|&l| l != n)
                {
                    return Err(Error::Model("node arrays differ in length".into()));
                }
                let nodes = (0..n)
                    .map(|k| {
                        if a.feature[k] < 0 {
                            CartNode::Leaf {
                                value: a.value[k],
                                count: a.count[k],
                            }
                        } else {
                            CartNode::Split {
                                feature: a.feature[k] as usize,
                                threshold: a.threshold[k],
                                left: a.left[k],
                                right: a.right[k],
                                count: a.count[k],
                            }
                        }
                    })
                    .collect();
                Ok(CartTree { nodes })
            })
            .collect::<Result<Vec<_>>>()?;
        let forest = CartForest {
            trees,
            weights: FeatureWeights::new(file.weights.clone())?,
            params: CartParams {
                n_trees: file.n_trees,
                mtry: file.mtry,
                bootstrap: file.n_boot.map_or(Bootstrap::Identity, Bootstrap::WithReplacement),
                max_depth: file.max_depth,
                seed: file.seed,
            },
        };
        forest.check_consistent()?;
        Ok(forest)
    }
}

impl From<&ForestModel> for ModelFile {
    fn from(f: &ForestModel) -> Self {
        match f {
            ForestModel::Crf(c) => ModelFile::Crf(c.into()),
            ForestModel::Cart(c) => ModelFile::Cart(c.into()),
        }
    }
}

impl From<&Model> for ModelFile {
    fn from(m: &Model) -> Self {
        match m {
            Model::Forest(f) => f.into(),
            Model::Transfer(t) => ModelFile::Transfer(TransferFile {
                version: FORMAT_VERSION,
                d: t.n_features(),
                source: Box::new((&t.source).into()),
                residual: Box::new((&t.residual).into()),
                dcov_weights: t.dcov_weights.as_slice().to_vec(),
                split_train: t.split.train.clone(),
                split_weight: t.split.weight.clone(),
            }),
        }
    }
}

fn forest_from_file(file: &ModelFile) -> Result<ForestModel> {
    match file {
        ModelFile::Crf(c) => Ok(ForestModel::Crf(c.try_into()?)),
        ModelFile::Cart(c) => Ok(ForestModel::Cart(c.try_into()?)),
        ModelFile::Transfer(_) => Err(Error::Model("nested transfer model".into())),
    }
}

impl TryFrom<&ModelFile> for Model {
    type Error = Error;

    fn try_from(file: &ModelFile) -> Result<Self> {
        match file {
            ModelFile::Transfer(t) => {
                check_version(t.version)?;
                let source = forest_from_file(&t.source)?;
                let residual = forest_from_file(&t.residual)?;
                if source.n_features() != t.d || residual.n_features() != t.d {
                    return Err(Error::Model("component forests disagree on d".into()));
                }
                source.check_consistent()?;
                residual.check_consistent()?;
                Ok(Model::Transfer(TransferModel {
                    source,
                    residual,
                    dcov_weights: FeatureWeights::new(t.dcov_weights.clone())?,
                    split: TargetSplit {
                        train: t.split_train.clone(),
                        weight: t.split_weight.clone(),
                    },
                }))
            }
            other => Ok(Model::Forest(forest_from_file(other)?)),
        }
    }
}
