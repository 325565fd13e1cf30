//! JSON model configuration.

use serde::{Deserialize, Serialize};

use super::{
    discrete_gamma, CodonModelParams, GeneticCode, ModelError, ModelInstance, RateCategories,
    RateMatrix,
};

/// Model configuration file contents, e.g.
/// `{"model": "gtr", "frequencies": [0.25, 0.25, 0.25, 0.25],
///   "exchangeabilities": [1, 1, 1, 1, 1, 1],
///   "gamma": {"alpha": 0.5, "categories": 4}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ModelConfig {
    /// `gtr` or `codon-m0`.
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exchangeabilities: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub genetic_code: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaConfig {
    pub alpha: f64,
    pub categories: usize,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Validation(format!("model config: {e}")))
    }

    /// Jukes-Cantor without rate variation; the simplest usable config.
    pub fn jukes_cantor() -> Self {
        ModelConfig {
            model: "gtr".to_string(),
            frequencies: Some(vec![0.25; 4]),
            exchangeabilities: Some(vec![1.0; 6]),
            kappa: None,
            omega: None,
            genetic_code: None,
            gamma: None,
        }
    }

    pub fn genetic_code(&self) -> Result<GeneticCode, ModelError> {
        GeneticCode::by_name(self.genetic_code.as_deref().unwrap_or("universal"))
    }

    pub fn is_codon(&self) -> bool {
        self.model == "codon-m0"
    }

    pub fn build(&self) -> Result<ModelInstance, ModelError> {
        let rate_matrix = match self.model.as_str() {
            "gtr" => {
                let freqs = self
                    .frequencies
                    .as_deref()
                    .ok_or_else(|| ModelError::Validation("gtr requires frequencies".into()))?;
                let freqs: &[f64; 4] = freqs.try_into().map_err(|_| {
                    ModelError::Validation("gtr requires exactly 4 frequencies".into())
                })?;
                let exch = self.exchangeabilities.clone().unwrap_or_else(|| vec![1.0; 6]);
                let exch: &[f64; 6] = exch.as_slice().try_into().map_err(|_| {
                    ModelError::Validation("gtr requires exactly 6 exchangeabilities".into())
                })?;
                RateMatrix::gtr(exch, freqs)?
            }
            "codon-m0" => {
                let params = CodonModelParams {
                    kappa: self.kappa.unwrap_or(1.0),
                    omega: self.omega.unwrap_or(1.0),
                    codon_frequencies: self.frequencies.clone(),
                    genetic_code: self.genetic_code()?,
                };
                RateMatrix::codon_m0(&params)?
            }
            other => {
                return Err(ModelError::Validation(format!(
                    "unknown model `{other}` (expected `gtr` or `codon-m0`)"
                )))
            }
        };
        let categories = match &self.gamma {
            Some(g) => discrete_gamma(g.alpha, g.categories)?,
            None => RateCategories::single(),
        };
        Ok(ModelInstance::new(rate_matrix, categories))
    }
}
