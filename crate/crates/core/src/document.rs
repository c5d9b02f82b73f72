//! The JSON model document written by `star fit` and read by the other
//! subcommands.
//!
//! Floats are written in shortest round-trip form, so parsing a document and
//! writing it again reproduces it byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::FitResult;
use crate::error::{Result, StarError};
use crate::model::StarModel;
use crate::rounding::RoundingScheme;
use crate::transform::Transformation;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCoef {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n: usize,
    pub converged: bool,
    pub n_iter: usize,
    pub seed: u64,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema: u32,
    pub transform: Transformation,
    pub scheme: RoundingScheme,
    pub coef: Vec<NamedCoef>,
    pub sigma: f64,
    pub fit: FitMetadata,
}

impl ModelDocument {
    pub fn from_fit(
        fit: &FitResult,
        names: &[String],
        seed: u64,
        response: &str,
        weights: Option<&str>,
    ) -> Result<Self> {
        if names.len() != fit.model.n_coef() {
            return Err(StarError::Dimension(format!(
                "{} names for {} coefficients",
                names.len(),
                fit.model.n_coef()
            )));
        }
        Ok(Self {
            schema: SCHEMA_VERSION,
            transform: fit.model.transform.clone(),
            scheme: fit.model.scheme.clone(),
            coef: names
                .iter()
                .zip(&fit.model.theta)
                .map(|(name, &value)| NamedCoef {
                    name: name.clone(),
                    value,
                })
                .collect(),
            sigma: fit.model.sigma,
            fit: FitMetadata {
                loglik: fit.loglik,
                aic: fit.aic,
                bic: fit.bic,
                n: fit.n_obs,
                converged: fit.converged,
                n_iter: fit.n_iter,
                seed,
                response: response.to_string(),
                weights: weights.map(str::to_string),
            },
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.coef.iter().map(|c| c.name.clone()).collect()
    }

    /// The fitted model at unit weights.
    pub fn model(&self) -> Result<StarModel> {
        StarModel::new(
            self.coef.iter().map(|c| c.value).collect(),
            self.sigma,
            self.transform.clone(),
            self.scheme.clone(),
            None,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut doc: Self = serde_json::from_str(text)?;
        if doc.schema != SCHEMA_VERSION {
            return Err(StarError::Usage(format!(
                "unsupported model schema {} (expected {SCHEMA_VERSION})",
                doc.schema
            )));
        }
        doc.scheme = doc.scheme.validated()?;
        doc.transform = doc.transform.restore()?;
        doc.model()?;
        Ok(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| StarError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
