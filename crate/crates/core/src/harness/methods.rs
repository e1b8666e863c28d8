use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dcov::FeatureWeights;
use crate::error::{Error, Result};
use crate::model_file::Model;
use crate::transfer::{
    fit_crf, fit_srf, fit_tlcrf, fit_tlsrf, stage_seeds, CrfSettings, ForestModel, SrfSettings,
    TlcrfConfig, TlsrfConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Centered forest on the target sample only.
    Crf,
    /// CART forest on the target sample only.
    Srf,
    Tlcrf,
    Tlsrf,
    /// The transfer pipeline's stage-one centered forest, unadjusted.
    SourceOnly,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Crf => "crf",
            Method::Srf => "srf",
            Method::Tlcrf => "tlcrf",
            Method::Tlsrf => "tlsrf",
            Method::SourceOnly => "source_only",
        }
    }

    pub fn needs_source(self) -> bool {
        matches!(self, Method::Tlcrf | Method::Tlsrf | Method::SourceOnly)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "crf" => Ok(Method::Crf),
            "srf" => Ok(Method::Srf),
            "tlcrf" => Ok(Method::Tlcrf),
            "tlsrf" => Ok(Method::Tlsrf),
            "source_only" => Ok(Method::SourceOnly),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

/// Hyper-parameters for every method; TOML sections `[crf]`, `[srf]`,
/// `[tlcrf]`, `[tlsrf]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub crf: CrfSettings,
    pub srf: SrfSettings,
    pub tlcrf: TlcrfConfig,
    pub tlsrf: TlsrfConfig,
}

impl ModelSettings {
    /// Set `mtry` on every CART forest.
    pub fn set_mtry(&mut self, mtry: usize) {
        self.srf.mtry = Some(mtry);
        self.tlsrf.source.mtry = Some(mtry);
        self.tlsrf.residual.mtry = Some(mtry);
    }
}

/// Fit `method`. Target-only methods ignore `source`.
pub fn fit_method(
    method: Method,
    source: Option<&Dataset>,
    target: &Dataset,
    settings: &ModelSettings,
    seed: u64,
) -> Result<Model> {
    let need_source = || source.ok_or_else(|| Error::invalid(format!("{method} needs source data")));
    let uniform = FeatureWeights::uniform(target.n_features());
    Ok(match method {
        Method::Crf => Model::Forest(ForestModel::Crf(fit_crf(target, &uniform, &settings.crf, seed)?)),
        Method::Srf => Model::Forest(ForestModel::Cart(fit_srf(target, &uniform, &settings.srf, seed)?)),
        Method::Tlcrf => {
            let config = TlcrfConfig {
                seed,
                ..settings.tlcrf
            };
            Model::Transfer(fit_tlcrf(need_source()?, target, &config)?)
        }
        Method::Tlsrf => {
            let config = TlsrfConfig {
                seed,
                ..settings.tlsrf
            };
            Model::Transfer(fit_tlsrf(need_source()?, target, &config)?)
        }
        Method::SourceOnly => {
            let source = need_source()?;
            let uniform = FeatureWeights::uniform(source.n_features());
            let forest = fit_crf(source, &uniform, &settings.tlcrf.source, stage_seeds(seed).0)?;
            Model::Forest(ForestModel::Crf(forest))
        }
    })
}

/// Fit on single-domain data with explicit feature weights, bypassing the
/// transfer pipeline.
pub fn fit_weighted(
    method: Method,
    data: &Dataset,
    weights: &FeatureWeights,
    settings: &ModelSettings,
    seed: u64,
) -> Result<ForestModel> {
    match method {
        Method::Crf => Ok(ForestModel::Crf(fit_crf(data, weights, &settings.crf, seed)?)),
        Method::Srf => Ok(ForestModel::Cart(fit_srf(data, weights, &settings.srf, seed)?)),
        other => Err(Error::invalid(format!("{other} does not take explicit weights"))),
    }
}
