use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::cohort::RESULTS_FRACTIONS;
use crate::probe::ProbeConfig;
use crate::ssl::SslConfig;
use crate::transfer::EstimatorRegistry;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableRole {
    #[default]
    Candidate,
    Baseline,
}

/// One input entry. A directory path expands to every `.emb` and `.csv`
/// file inside it, in name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub role: TableRole,
}

/// Settings for the `ssl` command. Model fields sit alongside the run
/// fields in the `[ssl]` table; the model seed always follows the top-level
/// seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslRunConfig {
    #[serde(flatten)]
    pub model: SslConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub n_clusters: usize,
    pub cluster_spread: f64,
}

impl Default for SslRunConfig {
    fn default() -> Self {
        SslRunConfig {
            model: SslConfig::default(),
            steps: 200,
            batch_size: 64,
            n_clusters: 8,
            cluster_spread: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tables: Vec<TableSpec>,
    pub k_folds: usize,
    pub fractions: Vec<f64>,
    pub estimators: Vec<String>,
    /// NLEEP mixture size; unset uses the estimator's default.
    pub nleep_components: Option<usize>,
    pub probe: ProbeConfig,
    pub budget: Option<u64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub ssl: SslRunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            tables: Vec::new(),
            k_folds: 5,
            fractions: RESULTS_FRACTIONS.to_vec(),
            estimators: vec!["logme".into(), "nleep".into(), "parc".into()],
            nleep_components: None,
            probe: ProbeConfig::default(),
            budget: None,
            seed: 0,
            out_dir: PathBuf::from("out"),
            jobs: 0,
            ssl: SslRunConfig::default(),
        }
    }
}

/// Command-line values that replace file values when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub tables: Vec<PathBuf>,
    pub baselines: Vec<PathBuf>,
    pub k_folds: Option<usize>,
    pub fractions: Option<Vec<f64>>,
    pub estimators: Option<Vec<String>>,
    pub budget: Option<u64>,
    pub lambda: Option<f64>,
    pub steps: Option<usize>,
}

impl ExperimentConfig {
    /// Parses a TOML config. Relative table paths resolve against the
    /// config file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for t in &mut cfg.tables {
            if t.path.is_relative() {
                t.path = base.join(&t.path);
            }
        }
        Ok(cfg)
    }

    /// File values (or defaults without a file) with `overrides` applied.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.jobs {
            self.jobs = v;
        }
        if !o.tables.is_empty() || !o.baselines.is_empty() {
            self.tables = o
                .tables
                .iter()
                .map(|p| (p, TableRole::Candidate))
                .chain(o.baselines.iter().map(|p| (p, TableRole::Baseline)))
                .map(|(p, role)| TableSpec { path: p.clone(), role })
                .collect();
        }
        if let Some(v) = o.k_folds {
            self.k_folds = v;
        }
        if let Some(v) = &o.fractions {
            self.fractions = v.clone();
        }
        if let Some(v) = &o.estimators {
            self.estimators = v.clone();
        }
        if let Some(v) = o.budget {
            self.budget = Some(v);
        }
        if let Some(v) = o.lambda {
            self.probe.lambda = v;
        }
        if let Some(v) = o.steps {
            self.ssl.steps = v;
        }
    }

    /// Checks values that do not depend on the input tables.
    pub fn validate(&self, registry: &EstimatorRegistry) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.k_folds < 2 {
            return bad(format!("k_folds must be at least 2, got {}", self.k_folds));
        }
        if self.fractions.is_empty() {
            return bad("fractions must not be empty".into());
        }
        if let Some(f) = self.fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
            return bad(format!("fraction {f} outside (0, 1]"));
        }
        if self.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return bad("fractions must be strictly increasing".into());
        }
        if self.estimators.is_empty() {
            return bad("no estimators configured".into());
        }
        for name in &self.estimators {
            registry.get(name).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.nleep_components == Some(0) {
            return bad("nleep_components must be positive".into());
        }
        if !(self.probe.lambda > 0.0 && self.probe.lambda.is_finite()) {
            return bad(format!("probe lambda must be positive, got {}", self.probe.lambda));
        }
        if self.probe.tol.is_nan() || self.probe.tol <= 0.0 || self.probe.max_iter == 0 {
            return bad("probe tol and max_iter must be positive".into());
        }
        self.ssl_model()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.ssl.batch_size == 0 || self.ssl.n_clusters == 0 {
            return bad("ssl batch_size and n_clusters must be positive".into());
        }
        for t in &self.tables {
            if !t.path.exists() {
                return bad(format!("table path {} does not exist", t.path.display()));
            }
        }
        Ok(())
    }

    pub fn ssl_model(&self) -> SslConfig {
        SslConfig {
            seed: self.seed,
            ..self.ssl.model.clone()
        }
    }
}
