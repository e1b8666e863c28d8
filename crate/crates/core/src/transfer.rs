//! Source fit, target residualization and residual-forest calibration.
//!
//! 1. A forest with uniform feature weights is fit on the source sample.
//! 2. Every target response is residualized against the source prediction.
//! 3. The target rows are split in two halves. Distance covariance between
//!    each feature and the residual on the second half gives the feature
//!    weights; the residual forest is trained on the first half with them.
//!
//! Predictions are `source(x) + residual(x)`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cart::{build_cart_forest, Bootstrap, CartForest, CartParams};
use crate::centered::{build_forest, candidate_depths, cv_select_depth, CenteredForest};
use crate::data::{Dataset, FeatureMatrix};
use crate::dcov::{dcov_weights, DCovKind, FeatureWeights};
use crate::error::{check_len, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrfSettings {
    pub n_trees: usize,
    /// Fixed depth; `None` selects it by cross-validation.
    pub depth: Option<usize>,
    pub folds: usize,
}

impl Default for CrfSettings {
    fn default() -> Self {
        Self {
            n_trees: 100,
            depth: None,
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootSize {
    Rows(usize),
    /// Fraction of the training rows, rounded down, at least one.
    Fraction(f64),
}

impl BootSize {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            BootSize::Rows(k) => k,
            BootSize::Fraction(f) => ((n as f64 * f).floor() as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrfSettings {
    pub n_trees: usize,
    /// `None` uses `⌊√d⌋`.
    pub mtry: Option<usize>,
    pub bootstrap: BootSize,
    /// `None` uses `⌈log₂ n_boot⌉`.
    pub max_depth: Option<usize>,
}

impl Default for SrfSettings {
    fn default() -> Self {
        Self {
            n_trees: 50,
            mtry: None,
            bootstrap: BootSize::Fraction(0.8),
            max_depth: None,
        }
    }
}

impl SrfSettings {
    pub fn params(&self, n: usize, d: usize, seed: u64) -> CartParams {
        let n_boot = self.bootstrap.resolve(n);
        let mtry = self
            .mtry
            .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1))
            .min(d);
        let max_depth = self
            .max_depth
            .unwrap_or_else(|| (n_boot as f64).log2().ceil() as usize);
        CartParams {
            n_trees: self.n_trees,
            mtry,
            bootstrap: Bootstrap::WithReplacement(n_boot),
            max_depth: Some(max_depth),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualWeighting {
    #[default]
    Dcov,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TlcrfConfig {
    pub source: CrfSettings,
    pub residual: CrfSettings,
    pub estimator: DCovKind,
    pub weighting: ResidualWeighting,
    pub seed: u64,
}

impl Default for TlcrfConfig {
    fn default() -> Self {
        Self {
            source: CrfSettings::default(),
            residual: CrfSettings::default(),
            estimator: DCovKind::FastU,
            weighting: ResidualWeighting::Dcov,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TlsrfConfig {
    pub source: SrfSettings,
    pub residual: SrfSettings,
    pub estimator: DCovKind,
    pub weighting: ResidualWeighting,
    pub seed: u64,
}

impl Default for TlsrfConfig {
    fn default() -> Self {
        Self {
            source: SrfSettings::default(),
            residual: SrfSettings::default(),
            estimator: DCovKind::FastU,
            weighting: ResidualWeighting::Dcov,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForestModel {
    Crf(CenteredForest),
    Cart(CartForest),
}

impl ForestModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            ForestModel::Crf(f) => f.predict(x),
            ForestModel::Cart(f) => f.predict(x),
        }
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Vec<f64> {
        match self {
            ForestModel::Crf(f) => f.predict_matrix(x),
            ForestModel::Cart(f) => f.predict_matrix(x),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            ForestModel::Crf(f) => f.n_features(),
            ForestModel::Cart(f) => f.n_features(),
        }
    }

    pub(crate) fn check_consistent(&self) -> Result<()> {
        match self {
            ForestModel::Crf(f) => f.check_consistent(),
            ForestModel::Cart(f) => f.check_consistent(),
        }
    }
}

/// Disjoint halves of the target rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSplit {
    /// Rows the residual forest is trained on.
    pub train: Vec<usize>,
    /// Rows the distance covariance weights are estimated on.
    pub weight: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferModel {
    pub source: ForestModel,
    pub residual: ForestModel,
    pub dcov_weights: FeatureWeights,
    pub split: TargetSplit,
}

impl TransferModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.source.predict(x) + self.residual.predict(x)
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Vec<f64> {
        let s = self.source.predict_matrix(x);
        let r = self.residual.predict_matrix(x);
        s.into_iter().zip(r).map(|(a, b)| a + b).collect()
    }

    pub fn n_features(&self) -> usize {
        self.source.n_features()
    }
}

pub fn predict_transfer(model: &TransferModel, x: &[f64]) -> f64 {
    model.predict(x)
}

pub fn residualize(y_target: &[f64], source_preds: &[f64]) -> Result<Vec<f64>> {
    check_len(y_target.len(), source_preds.len())?;
    Ok(y_target.iter().zip(source_preds).map(|(y, p)| y - p).collect())
}

/// Random halves of sizes `⌈n/2⌉` (training) and `⌊n/2⌋` (weights), each
/// sorted.
pub fn split_target(n_t: usize, seed: u64) -> Result<TargetSplit> {
    if n_t < 2 {
        return Err(Error::invalid(format!("cannot split {n_t} target rows in two")));
    }
    let mut order: Vec<usize> = (0..n_t).collect();
    order.shuffle(&mut rng::chacha(seed));
    let cut = n_t.div_ceil(2);
    let mut train = order[..cut].to_vec();
    let mut weight = order[cut..].to_vec();
    train.sort_unstable();
    weight.sort_unstable();
    Ok(TargetSplit { train, weight })
}

/// Centered forest with depth fixed or chosen by cross-validation.
pub fn fit_crf(
    data: &Dataset,
    weights: &FeatureWeights,
    settings: &CrfSettings,
    seed: u64,
) -> Result<CenteredForest> {
    let depth = match settings.depth {
        Some(h) => h,
        None => {
            let candidates = candidate_depths(data.len());
            if candidates.len() == 1 {
                candidates[0]
            } else {
                cv_select_depth(data, weights, settings.n_trees, settings.folds, seed)?
            }
        }
    };
    build_forest(data, weights, depth, settings.n_trees, seed)
}

pub fn fit_srf(
    data: &Dataset,
    weights: &FeatureWeights,
    settings: &SrfSettings,
    seed: u64,
) -> Result<CartForest> {
    let params = settings.params(data.len(), data.n_features(), seed);
    build_cart_forest(data, weights, params)
}

/// CART forest with weights from distance covariance on all of `data`.
pub fn fit_rf_dcov(
    data: &Dataset,
    settings: &SrfSettings,
    estimator: DCovKind,
    seed: u64,
) -> Result<CartForest> {
    let weights = dcov_weights(data, estimator)?;
    fit_srf(data, &weights, settings, seed)
}

struct Calibration {
    residual_train: Dataset,
    weights: FeatureWeights,
    split: TargetSplit,
}

fn calibrate(
    target: &Dataset,
    source_preds: &[f64],
    estimator: DCovKind,
    weighting: ResidualWeighting,
    seed: u64,
) -> Result<Calibration> {
    let residuals = residualize(&target.y, source_preds)?;
    let tilde = target.with_response(residuals)?;
    let split = split_target(target.len(), seed)?;
    let weights = match weighting {
        ResidualWeighting::Dcov => dcov_weights(&tilde.subset(&split.weight), estimator)
            .map_err(|e| e.context("estimating residual feature weights"))?,
        ResidualWeighting::Uniform => FeatureWeights::uniform(target.n_features()),
    };
    Ok(Calibration {
        residual_train: tilde.subset(&split.train),
        weights,
        split,
    })
}

fn check_domains(source: &Dataset, target: &Dataset) -> Result<()> {
    source.require_nonempty()?;
    target.require_nonempty()?;
    check_len(source.n_features(), target.n_features())
}

const SOURCE_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const RESIDUAL_STREAM: u64 = 3;

pub fn fit_tlcrf(source: &Dataset, target: &Dataset, config: &TlcrfConfig) -> Result<TransferModel> {
    check_domains(source, target)?;
    let d = source.n_features();
    let source_forest = fit_crf(
        source,
        &FeatureWeights::uniform(d),
        &config.source,
        rng::derive(config.seed, &[SOURCE_STREAM]),
    )
    .map_err(|e| e.context("fitting source forest"))?;
    let preds = source_forest.predict_matrix(&target.x);
    let cal = calibrate(
        target,
        &preds,
        config.estimator,
        config.weighting,
        rng::derive(config.seed, &[SPLIT_STREAM]),
    )?;
    let residual_forest = fit_crf(
        &cal.residual_train,
        &cal.weights,
        &config.residual,
        rng::derive(config.seed, &[RESIDUAL_STREAM]),
    )
    .map_err(|e| e.context("fitting residual forest"))?;
    Ok(TransferModel {
        source: ForestModel::Crf(source_forest),
        residual: ForestModel::Crf(residual_forest),
        dcov_weights: cal.weights,
        split: cal.split,
    })
}

pub fn fit_tlsrf(source: &Dataset, target: &Dataset, config: &TlsrfConfig) -> Result<TransferModel> {
    check_domains(source, target)?;
    let d = source.n_features();
    let source_forest = fit_srf(
        source,
        &FeatureWeights::uniform(d),
        &config.source,
        rng::derive(config.seed, &[SOURCE_STREAM]),
    )
    .map_err(|e| e.context("fitting source forest"))?;
    let preds = source_forest.predict_matrix(&target.x);
    let cal = calibrate(
        target,
        &preds,
        config.estimator,
        config.weighting,
        rng::derive(config.seed, &[SPLIT_STREAM]),
    )?;
    let residual_forest = fit_srf(
        &cal.residual_train,
        &cal.weights,
        &config.residual,
        rng::derive(config.seed, &[RESIDUAL_STREAM]),
    )
    .map_err(|e| e.context("fitting residual forest"))?;
    Ok(TransferModel {
        source: ForestModel::Cart(source_forest),
        residual: ForestModel::Cart(residual_forest),
        dcov_weights: cal.weights,
        split: cal.split,
    })
}

/// Seeds the pipelines use for each stage, for callers reproducing a stage
/// by hand.
pub fn stage_seeds(seed: u64) -> (u64, u64, u64) {
    (
        rng::derive(seed, &[SOURCE_STREAM]),
        rng::derive(seed, &[SPLIT_STREAM]),
        rng::derive(seed, &[RESIDUAL_STREAM]),
    )
}
