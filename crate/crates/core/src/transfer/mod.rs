//! Transferability estimators and model-selection aggregation.

pub mod logme;
pub mod nleep;
pub mod parc;
pub mod ranking;
pub mod registry;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use logme::logme_score;
pub use nleep::{nleep_score, NleepConfig};
pub use parc::parc_score;
pub use ranking::{aggregate_ranking, AggregationError, Candidate, RankingReport, ScoreKey};
pub use registry::{Estimator, EstimatorRegistry, RegistryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("table has no labels")]
    MissingLabels,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("plugin failed: {0}")]
    Plugin(String),
}

/// One estimator's score for one (backbone, dataset) table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferScore {
    pub estimator: String,
    #[serde(with = "finite_or_null")]
    pub score: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the estimator failed; such cells are left out of rankings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TransferScore {
    pub fn failed(estimator: impl Into<String>, err: &EstimatorError) -> Self {
        TransferScore {
            estimator: estimator.into(),
            score: f64::NAN,
            converged: false,
            iterations: 0,
            error: Some(err.to_string()),
        }
    }

    pub fn is_usable(&self) -> bool {
        self.error.is_none() && self.score.is_finite()
    }
}

/// Non-finite scores serialize as `null` and read back as NaN.
mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}
