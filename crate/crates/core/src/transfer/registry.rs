use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::{logme_score, nleep_score, parc_score, EstimatorError, NleepConfig, TransferScore};
use crate::store::EmbeddingTable;

pub const BUILTIN: [&str; 3] = ["logme", "nleep", "parc"];

/// Signature of an externally supplied estimator: higher scores mean better
/// expected transfer.
pub type PluginFn = dyn Fn(&EmbeddingTable) -> Result<f64, String> + Send + Sync;

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("estimator {0:?} is already registered")]
    Duplicate(String),
    #[error("unknown estimator {0:?}")]
    Unknown(String),
    #[error("invalid estimator name {0:?}")]
    InvalidName(String),
}

#[derive(Clone)]
pub enum Estimator {
    LogMe,
    Nleep(NleepConfig),
    Parc,
    Plugin { name: String, func: Arc<PluginFn> },
}

impl fmt::Debug for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.column_name())
    }
}

impl Estimator {
    /// Name used for report columns: `logme`, `nleep`, `parc` or `plugin:<name>`.
    pub fn column_name(&self) -> String {
        match self {
            Estimator::LogMe => "logme".into(),
            Estimator::Nleep(_) => "nleep".into(),
            Estimator::Parc => "parc".into(),
            Estimator::Plugin { name, .. } => format!("plugin:{name}"),
        }
    }

    pub fn score(&self, table: &EmbeddingTable) -> Result<TransferScore, EstimatorError> {
        match self {
            Estimator::LogMe => logme_score(table),
            Estimator::Nleep(cfg) => nleep_score(table, *cfg),
            Estimator::Parc => parc_score(table),
            Estimator::Plugin { func, .. } => {
                let score = func(table).map_err(EstimatorError::Plugin)?;
                Ok(TransferScore {
                    estimator: self.column_name(),
                    score,
                    converged: score.is_finite(),
                    iterations: 1,
                    error: None,
                })
            }
        }
    }

    /// Like [`Self::score`] but folds failures into a non-usable record.
    pub fn score_cell(&self, table: &EmbeddingTable) -> TransferScore {
        self.score(table)
            .unwrap_or_else(|e| TransferScore::failed(self.column_name(), &e))
    }
}

/// Built-in estimators plus any registered plugins. Populate during setup;
/// lookups take `&self` and are safe to share across threads.
#[derive(Clone, Default)]
pub struct EstimatorRegistry {
    pub nleep: NleepConfig,
    plugins: BTreeMap<String, Arc<PluginFn>>,
}

impl EstimatorRegistry {
    pub fn new(nleep: NleepConfig) -> Self {
        EstimatorRegistry {
            nleep,
            plugins: BTreeMap::new(),
        }
    }

    pub fn register_plugin<F>(&mut self, name: &str, func: F) -> Result<(), RegistryError>
    where
        F: Fn(&EmbeddingTable) -> Result<f64, String> + Send + Sync + 'static,
    {
        if name.is_empty() || name.contains(['/', ':']) || name.contains(char::is_whitespace) {
            return Err(RegistryError::InvalidName(name.into()));
        }
        if BUILTIN.contains(&name) || self.plugins.contains_key(name) {
            return Err(RegistryError::Duplicate(name.into()));
        }
        self.plugins.insert(name.into(), Arc::new(func));
        Ok(())
    }

    /// Resolves `logme`, `nleep`, `parc`, `plugin:<name>` or a bare plugin name.
    pub fn get(&self, name: &str) -> Result<Estimator, RegistryError> {
        match name {
            "logme" => Ok(Estimator::LogMe),
            "nleep" => Ok(Estimator::Nleep(self.nleep)),
            "parc" => Ok(Estimator::Parc),
            other => {
                let bare = other.strip_prefix("plugin:").unwrap_or(other);
                self.plugins
                    .get(bare)
                    .map(|func| Estimator::Plugin {
                        name: bare.into(),
                        func: Arc::clone(func),
                    })
                    .ok_or_else(|| RegistryError::Unknown(name.into()))
            }
        }
    }

    /// Every available estimator, built-ins first.
    pub fn all(&self) -> Vec<Estimator> {
        BUILTIN
            .iter()
            .chain(self.plugins.keys().map(String::as_str).collect::<Vec<_>>().iter())
            .map(|n| self.get(n).expect("listed names resolve"))
            .collect()
    }
}
