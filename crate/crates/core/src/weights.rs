//! Weight vectors for the two weighted-cosine scores.

use serde::{Deserialize, Serialize};

use crate::error::WeightError;

const SUM_TOLERANCE: f64 = 1e-9;

fn check_group(group: &'static str, values: &[f64]) -> Result<(), WeightError> {
    if values.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(WeightError::Negative(values.to_vec()));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(WeightError::BadSum { group, sum });
    }
    Ok(())
}

/// Train-time weights: sentence / entity-pair / relation, and subject /
/// object within the entity term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl MiningWeights {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64, beta1: f64, beta2: f64) -> Result<Self, WeightError> {
        let w = MiningWeights { alpha1, alpha2, alpha3, beta1, beta2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        check_group("alpha", &[self.alpha1, self.alpha2, self.alpha3])?;
        check_group("beta", &[self.beta1, self.beta2])
    }
}

impl Default for MiningWeights {
    /// Equal thirds across the three terms, equal halves across entities.
    fn default() -> Self {
        MiningWeights { alpha1: 1.0 / 3.0, alpha2: 1.0 / 3.0, alpha3: 1.0 / 3.0, beta1: 0.5, beta2: 0.5 }
    }
}

/// Test-time weights: no relation term since the gold label is unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl RetrievalWeights {
    pub fn new(alpha1: f64, alpha2: f64, beta1: f64, beta2: f64) -> Result<Self, WeightError> {
        let w = RetrievalWeights { alpha1, alpha2, beta1, beta2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        check_group("alpha", &[self.alpha1, self.alpha2])?;
        check_group("beta", &[self.beta1, self.beta2])
    }

    /// Combines component cosines.
    pub fn combine(&self, sentence: f64, e1: f64, e2: f64) -> f64 {
        self.alpha1 * sentence + self.alpha2 * (self.beta1 * e1 + self.beta2 * e2)
    }
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        RetrievalWeights { alpha1: 0.5, alpha2: 0.5, beta1: 0.5, beta2: 0.5 }
    }
}

impl MiningWeights {
    /// Combines component cosines.
    pub fn combine(&self, sentence: f64, e1: f64, e2: f64, relation: f64) -> f64 {
        self.alpha1 * sentence + self.alpha2 * (self.beta1 * e1 + self.beta2 * e2) + self.alpha3 * relation
    }
}
