//! Experiment orchestration behind the `probekit` command line.
//!
//! Every command reads an [`ExperimentConfig`], writes its JSON report into
//! the output directory and returns the report. Reports are deterministic for
//! a fixed config and seed; wall-clock data goes to a `.meta.json` sidecar.

mod commands;
mod config;
mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use thiserror::Error;

use crate::cohort::CohortError;
use crate::metrics::MetricError;
use crate::probe::ProbeError;
use crate::ssl::SslError;
use crate::store::StoreError;
use crate::transfer::{AggregationError, RegistryError};

pub use commands::{
    cmd_estimate, cmd_ingest, cmd_probe_eval, cmd_rank, cmd_split, cmd_ssl, cmd_sweep, cmd_validate, evaluate_folds,
    load_tables, EstimateReport, FileCheck, FoldSplit, IngestRecord, IngestReport, LoadedTable, MetaOverrides,
    ProbeReport, ProbeTableResult, RankReport, ScoreRecord, SplitReport, SslReport, SslStepRecord, SweepPoint,
    SweepReport, SweepTableResult, TableSplit, ValidateReport,
};
pub use config::{ExperimentConfig, Overrides, SslRunConfig, TableRole, TableSpec};
pub use render::render_report;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("aggregation error: {0}")]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Ssl(#[from] SslError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// 1 for configuration problems, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Serialize)]
struct Sidecar {
    report: String,
    created_unix_secs: u64,
    version: &'static str,
}

/// Writes `<dir>/<name>.json` plus a `<name>.meta.json` timestamp sidecar and
/// returns the report path.
pub fn write_report<T: Serialize>(dir: &Path, name: &str, report: &T) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let path = dir.join(format!("{name}.json"));
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;

    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let sidecar = Sidecar {
        report: format!("{name}.json"),
        created_unix_secs: created,
        version: env!("CARGO_PKG_VERSION"),
    };
    let meta = dir.join(format!("{name}.meta.json"));
    fs::write(&meta, serde_json::to_string_pretty(&sidecar)? + "\n").map_err(|e| HarnessError::io(&meta, e))?;
    Ok(path)
}

/// Runs `f` on a rayon pool with `jobs` threads (`0` lets rayon decide).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
