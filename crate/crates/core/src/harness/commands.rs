use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TableRole};
use super::{with_jobs, write_report, HarnessError, Result};
use crate::cohort::{group_kfold, stratified_subsample_rows, FoldPlan};
use crate::metrics::{evaluate_probabilities, fold_summary, paired_ttest, FoldSummary, MetricReport, TTest};
use crate::probe::{fit, predict_proba, ProbeConfig, ProbeData};
use crate::ssl::{collapse_entropy, encode_checkpoint, synthetic_batch, train_step, SslConfig, SslState};
use crate::store::{read_table, validate, write_table, EmbeddingTable, StoreError};
use crate::transfer::{aggregate_ranking, EstimatorRegistry, NleepConfig, RankingReport, ScoreKey, TransferScore};

#[derive(Debug, Clone)]
pub struct LoadedTable {
    pub path: PathBuf,
    pub role: TableRole,
    pub backbone: String,
    pub dataset: String,
    pub table: EmbeddingTable,
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn expand(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.exists() {
        return Err(HarnessError::Config(format!("table path {} does not exist", path.display())));
    }
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| HarnessError::io(path, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| HarnessError::io(path, e))?.path();
        let ext = p.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("emb" | "csv")) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(HarnessError::Config(format!("no .emb or .csv tables in {}", path.display())));
    }
    Ok(files)
}

/// Reads every configured table. Backbone and dataset names come from the
/// table metadata, falling back to the file stem.
pub fn load_tables(cfg: &ExperimentConfig) -> Result<Vec<LoadedTable>> {
    if cfg.tables.is_empty() {
        return Err(HarnessError::Config("no input tables configured".into()));
    }
    let mut out = Vec::new();
    for spec in &cfg.tables {
        for path in expand(&spec.path)? {
            let table = read_table(&path)?;
            let stem = file_stem(&path);
            let pick = |s: &str| if s.is_empty() { stem.clone() } else { s.to_string() };
            out.push(LoadedTable {
                backbone: pick(&table.meta.backbone),
                dataset: pick(&table.meta.dataset),
                path,
                role: spec.role,
                table,
            });
        }
    }
    Ok(out)
}

fn candidates(tables: &[LoadedTable]) -> Vec<&LoadedTable> {
    tables.iter().filter(|t| t.role == TableRole::Candidate).collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub backbone: String,
    pub dataset: String,
    pub path: PathBuf,
    #[serde(flatten)]
    pub score: TransferScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub kind: String,
    pub seed: u64,
    pub estimators: Vec<String>,
    pub params: BTreeMap<String, u64>,
    pub cells: Vec<ScoreRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub kind: String,
    pub seed: u64,
    #[serde(flatten)]
    pub ranking: RankingReport,
}

fn rank_cells(report: &EstimateReport, budget: Option<u64>) -> Result<RankReport> {
    let scores: BTreeMap<ScoreKey, TransferScore> = report
        .cells
        .iter()
        .map(|c| (ScoreKey::new(&c.backbone, &c.dataset, &c.score.estimator), c.score.clone()))
        .collect();
    let ranking = aggregate_ranking(&scores, &report.params, budget)?;
    for w in &ranking.warnings {
        warn!("{w}");
    }
    Ok(RankReport {
        kind: "ranking".into(),
        seed: report.seed,
        ranking,
    })
}

/// Scores every candidate table with every configured estimator, writes
/// `scores.json`, then aggregates into `ranking.json`.
///
/// Estimator failures are kept as unusable cells. The scores file is
/// written even when aggregation fails.
pub fn cmd_estimate(cfg: &ExperimentConfig, registry: &EstimatorRegistry) -> Result<(EstimateReport, RankReport)> {
    cfg.validate(registry)?;
    let tables = load_tables(cfg)?;
    let tables = candidates(&tables);

    let mut params: BTreeMap<String, u64> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for t in &tables {
        if !seen.insert((t.backbone.clone(), t.dataset.clone())) {
            return Err(HarnessError::Config(format!(
                "more than one table for backbone {:?} on dataset {:?}",
                t.backbone, t.dataset
            )));
        }
        let p = *params.entry(t.backbone.clone()).or_insert(t.table.meta.params);
        if p != t.table.meta.params {
            return Err(HarnessError::Config(format!(
                "backbone {:?} has conflicting parameter counts {} and {}",
                t.backbone, p, t.table.meta.params
            )));
        }
    }
    let datasets: BTreeSet<&str> = tables.iter().map(|t| t.dataset.as_str()).collect();
    for b in params.keys() {
        for d in &datasets {
            if !seen.contains(&(b.clone(), d.to_string())) {
                return Err(HarnessError::Config(format!("missing table for backbone {b:?} on dataset {d:?}")));
            }
        }
    }

    let mut reg = registry.clone();
    reg.nleep = NleepConfig {
        n_components: cfg.nleep_components,
        seed: cfg.seed,
    };
    let estimators = cfg
        .estimators
        .iter()
        .map(|n| reg.get(n))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..tables.len())
        .flat_map(|t| (0..estimators.len()).map(move |e| (t, e)))
        .collect();
    let cells: Vec<ScoreRecord> = with_jobs(cfg.jobs, || {
        jobs.par_iter()
            .map(|&(ti, ei)| {
                let t = tables[ti];
                let score = estimators[ei].score_cell(&t.table);
                if let Some(e) = &score.error {
                    warn!("{} on {}/{} failed: {e}", score.estimator, t.backbone, t.dataset);
                }
                ScoreRecord {
                    backbone: t.backbone.clone(),
                    dataset: t.dataset.clone(),
                    path: t.path.clone(),
                    score,
                }
            })
            .collect()
    })?;

    let report = EstimateReport {
        kind: "scores".into(),
        seed: cfg.seed,
        estimators: estimators.iter().map(|e| e.column_name()).collect(),
        params,
        cells,
    };
    write_report(&cfg.out_dir, "scores", &report)?;
    let ranking = rank_cells(&report, cfg.budget)?;
    write_report(&cfg.out_dir, "ranking", &ranking)?;
    info!("winner: {}", ranking.ranking.winner);
    Ok((report, ranking))
}

/// Re-aggregates a `scores.json` file under the configured budget.
pub fn cmd_rank(cfg: &ExperimentConfig, scores_path: &Path) -> Result<RankReport> {
    let report: EstimateReport = read_json(scores_path)?;
    let ranking = rank_cells(&report, cfg.budget)?;
    write_report(&cfg.out_dir, "ranking", &ranking)?;
    Ok(ranking)
}

// ---------------------------------------------------------------- probe

/// Fits the probe on each fold's training rows and evaluates it on the
/// held-out rows. `train_rows(fold)` defaults to the complement of the fold.
pub fn evaluate_folds(
    table: &EmbeddingTable,
    plan: &FoldPlan,
    probe: ProbeConfig,
    train_rows: &(dyn Fn(usize) -> Vec<usize> + Sync),
) -> Result<Vec<MetricReport>> {
    (0..plan.k)
        .into_par_iter()
        .map(|fold| evaluate_one(table, &train_rows(fold), &plan.test_rows(fold), probe))
        .collect()
}

fn evaluate_one(table: &EmbeddingTable, train: &[usize], test: &[usize], probe: ProbeConfig) -> Result<MetricReport> {
    let data = ProbeData::from_rows(table, train)?;
    let model = fit(&data, probe, None)?;
    if !model.converged {
        warn!("probe stopped at max_iter without meeting tol");
    }
    let test_data = ProbeData::from_rows(table, test)?;
    let probs = predict_proba(&model, &test_data.features)?;
    let rows: Vec<Vec<f64>> = probs.row_iter().map(|r| r.iter().copied().collect()).collect();
    Ok(evaluate_probabilities(&rows, &test_data.labels, test_data.n_classes)?)
}

fn metric_columns(per_fold: &[MetricReport]) -> BTreeMap<String, Vec<f64>> {
    let mut cols = BTreeMap::new();
    cols.insert("accuracy".into(), per_fold.iter().map(|m| m.accuracy).collect());
    cols.insert("macro_f1".into(), per_fold.iter().map(|m| m.macro_f1).collect());
    cols.insert("weighted_f1".into(), per_fold.iter().map(|m| m.weighted_f1).collect());
    let auroc: Option<Vec<f64>> = per_fold.iter().map(|m| m.auroc).collect();
    let aupr: Option<Vec<f64>> = per_fold.iter().map(|m| m.aupr).collect();
    for (name, values) in [("auroc", auroc), ("aupr", aupr)] {
        if let Some(v) = values {
            cols.insert(name.into(), v);
        }
    }
    cols
}

fn summarize(per_fold: &[MetricReport]) -> Result<BTreeMap<String, FoldSummary>> {
    metric_columns(per_fold)
        .into_iter()
        .map(|(k, v)| Ok((k, fold_summary(&v)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTableResult {
    pub path: PathBuf,
    pub backbone: String,
    pub dataset: String,
    pub role: TableRole,
    pub folds: FoldPlan,
    pub per_fold: Vec<MetricReport>,
    pub summary: BTreeMap<String, FoldSummary>,
    /// Path of the baseline table compared against, if any.
    pub baseline: Option<PathBuf>,
    /// Paired t-tests of this table's per-fold metrics minus the baseline's.
    pub ttests: BTreeMap<String, TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub kind: String,
    pub seed: u64,
    pub k_folds: usize,
    pub probe: ProbeConfig,
    pub tables: Vec<ProbeTableResult>,
}

fn baseline_for<'a>(t: &LoadedTable, tables: &'a [LoadedTable]) -> Result<Option<&'a LoadedTable>> {
    let Some(b) = tables
        .iter()
        .find(|b| b.role == TableRole::Baseline && b.dataset == t.dataset)
    else {
        return Ok(None);
    };
    if b.table.n_rows() != t.table.n_rows() || b.table.groups != t.table.groups || b.table.labels != t.table.labels {
        return Err(HarnessError::Config(format!(
            "baseline {} does not share rows, labels and groups with {}",
            b.path.display(),
            t.path.display()
        )));
    }
    Ok(Some(b))
}

/// Group k-fold cross-validation of the linear probe on every table, with
/// paired t-tests against a same-dataset baseline table when one is given.
pub fn cmd_probe_eval(cfg: &ExperimentConfig, registry: &EstimatorRegistry) -> Result<ProbeReport> {
    cfg.validate(registry)?;
    let tables = load_tables(cfg)?;
    let results: Vec<(FoldPlan, Vec<MetricReport>)> = with_jobs(cfg.jobs, || {
        tables
            .par_iter()
            .map(|t| {
                let plan = group_kfold(&t.table, cfg.k_folds, cfg.seed)?;
                let per_fold = evaluate_folds(&t.table, &plan, cfg.probe, &|f| plan.train_rows(f))?;
                Ok((plan, per_fold))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut out = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        let (plan, per_fold) = &results[i];
        let mut ttests = BTreeMap::new();
        let mut baseline = None;
        if t.role == TableRole::Candidate {
            if let Some(b) = baseline_for(t, &tables)? {
                let j = tables.iter().position(|x| std::ptr::eq(x, b)).unwrap();
                let mine = metric_columns(per_fold);
                let theirs = metric_columns(&results[j].1);
                for (name, a) in &mine {
                    if let Some(bv) = theirs.get(name) {
                        ttests.insert(name.clone(), paired_ttest(a, bv)?);
                    }
                }
                baseline = Some(b.path.clone());
            }
        }
        out.push(ProbeTableResult {
            path: t.path.clone(),
            backbone: t.backbone.clone(),
            dataset: t.dataset.clone(),
            role: t.role,
            folds: plan.clone(),
            summary: summarize(per_fold)?,
            per_fold: per_fold.clone(),
            baseline,
            ttests,
        });
    }
    let report = ProbeReport {
        kind: "probe".into(),
        seed: cfg.seed,
        k_folds: cfg.k_folds,
        probe: cfg.probe,
        tables: out,
    };
    write_report(&cfg.out_dir, "probe", &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- split / sweep

/// Rows for one fold: the held-out rows and the nested training subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub mask_seed: u64,
    pub test_rows: Vec<usize>,
    /// One entry per configured fraction, in the same order.
    pub train_subsets: Vec<Vec<usize>>,
}

fn fold_splits(table: &EmbeddingTable, plan: &FoldPlan, fractions: &[f64], seed: u64) -> Result<Vec<FoldSplit>> {
    let labels = table.labels.as_ref().ok_or(crate::cohort::CohortError::MissingLabels)?;
    (0..plan.k)
        .map(|fold| {
            let mask_seed = seed.wrapping_add(fold as u64);
            let masks = stratified_subsample_rows(labels, &plan.train_rows(fold), table.n_classes(), fractions, mask_seed)?;
            Ok(FoldSplit {
                fold,
                mask_seed,
                test_rows: plan.test_rows(fold),
                train_subsets: masks.iter().map(|m| m.rows()).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSplit {
    pub path: PathBuf,
    pub folds: FoldPlan,
    pub fold_sizes: Vec<usize>,
    pub splits: Vec<FoldSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub kind: String,
    pub seed: u64,
    pub k_folds: usize,
    pub fractions: Vec<f64>,
    pub tables: Vec<TableSplit>,
}

/// Writes the fold plan and nested training subsets for every table.
pub fn cmd_split(cfg: &ExperimentConfig, registry: &EstimatorRegistry) -> Result<SplitReport> {
    cfg.validate(registry)?;
    let tables = load_tables(cfg)?;
    let mut out = Vec::new();
    for t in &tables {
        let plan = group_kfold(&t.table, cfg.k_folds, cfg.seed)?;
        out.push(TableSplit {
            path: t.path.clone(),
            fold_sizes: plan.fold_sizes(),
            splits: fold_splits(&t.table, &plan, &cfg.fractions, cfg.seed)?,
            folds: plan,
        });
    }
    let report = SplitReport {
        kind: "split".into(),
        seed: cfg.seed,
        k_folds: cfg.k_folds,
        fractions: cfg.fractions.clone(),
        tables: out,
    };
    write_report(&cfg.out_dir, "split", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub per_fold: Vec<MetricReport>,
    pub summary: BTreeMap<String, FoldSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTableResult {
    pub path: PathBuf,
    pub backbone: String,
    pub dataset: String,
    pub folds: FoldPlan,
    pub splits: Vec<FoldSplit>,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: String,
    pub seed: u64,
    pub k_folds: usize,
    pub fractions: Vec<f64>,
    pub probe: ProbeConfig,
    pub tables: Vec<SweepTableResult>,
}

/// Label-efficiency sweep: per fold, nested stratified subsets of the
/// training rows at each fraction, each evaluated on the untouched test fold.
pub fn cmd_sweep(cfg: &ExperimentConfig, registry: &EstimatorRegistry) -> Result<SweepReport> {
    cfg.validate(registry)?;
    let tables = load_tables(cfg)?;
    let tables = candidates(&tables);
    let results = with_jobs(cfg.jobs, || {
        tables
            .par_iter()
            .map(|t| {
                let plan = group_kfold(&t.table, cfg.k_folds, cfg.seed)?;
                let splits = fold_splits(&t.table, &plan, &cfg.fractions, cfg.seed)?;
                let points = cfg
                    .fractions
                    .par_iter()
                    .enumerate()
                    .map(|(fi, &fraction)| {
                        let per_fold =
                            evaluate_folds(&t.table, &plan, cfg.probe, &|f| splits[f].train_subsets[fi].clone())?;
                        Ok(SweepPoint {
                            fraction,
                            summary: summarize(&per_fold)?,
                            per_fold,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(SweepTableResult {
                    path: t.path.clone(),
                    backbone: t.backbone.clone(),
                    dataset: t.dataset.clone(),
                    folds: plan,
                    splits,
                    points,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let report = SweepReport {
        kind: "sweep".into(),
        seed: cfg.seed,
        k_folds: cfg.k_folds,
        fractions: cfg.fractions.clone(),
        probe: cfg.probe,
        tables: results,
    };
    write_report(&cfg.out_dir, "sweep", &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- ssl

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslStepRecord {
    pub seed: u64,
    pub step: u64,
    pub loss: f64,
    pub teacher_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslReport {
    pub kind: String,
    pub seed: u64,
    pub steps: usize,
    pub config: SslConfig,
    pub initial_entropy: f64,
    pub final_entropy: f64,
    /// Mean loss over the first and last `min(20, steps)` steps.
    pub first_window_loss: Option<f64>,
    pub last_window_loss: Option<f64>,
    pub step_log: String,
    pub checkpoint: String,
}

/// Trains the toy student-teacher model on a fixed synthetic batch. Writes
/// `ssl_steps.jsonl` (one record per step, then a final-entropy line),
/// `ssl.ckpt` and `ssl.json`.
pub fn cmd_ssl(cfg: &ExperimentConfig) -> Result<SslReport> {
    let model = cfg.ssl_model();
    model.validate()?;
    if cfg.ssl.batch_size == 0 || cfg.ssl.n_clusters == 0 {
        return Err(HarnessError::Config("ssl batch_size and n_clusters must be positive".into()));
    }
    let batch = synthetic_batch(model.input_dim, cfg.ssl.batch_size, cfg.ssl.n_clusters, cfg.ssl.cluster_spread, cfg.seed);
    let mut state = SslState::init(&model)?;
    let initial_entropy = collapse_entropy(&state, &batch, &model);
    let mut log_text = String::new();
    let mut losses = Vec::with_capacity(cfg.ssl.steps);
    for _ in 0..cfg.ssl.steps {
        let (next, loss) = train_step(&state, &batch, &model)?;
        state = next;
        losses.push(loss);
        let record = SslStepRecord {
            seed: cfg.seed,
            step: state.step,
            loss,
            teacher_entropy: collapse_entropy(&state, &batch, &model),
        };
        log_text.push_str(&serde_json::to_string(&record)?);
        log_text.push('\n');
    }
    let final_entropy = collapse_entropy(&state, &batch, &model);
    log_text.push_str(&serde_json::to_string(&serde_json::json!({
        "seed": cfg.seed,
        "final_entropy": final_entropy,
    }))?);
    log_text.push('\n');

    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let log_path = dir.join("ssl_steps.jsonl");
    fs::write(&log_path, log_text).map_err(|e| HarnessError::io(&log_path, e))?;
    let ckpt_path = dir.join("ssl.ckpt");
    fs::write(&ckpt_path, encode_checkpoint(&state)).map_err(|e| HarnessError::io(&ckpt_path, e))?;

    let w = losses.len().min(20);
    let mean = |s: &[f64]| (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64);
    let report = SslReport {
        kind: "ssl".into(),
        seed: cfg.seed,
        steps: cfg.ssl.steps,
        config: model,
        initial_entropy,
        final_entropy,
        first_window_loss: mean(&losses[..w]),
        last_window_loss: mean(&losses[losses.len() - w..]),
        step_log: "ssl_steps.jsonl".into(),
        checkpoint: "ssl.ckpt".into(),
    };
    write_report(dir, "ssl", &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- ingest / validate

/// Metadata values that replace whatever the input carries.
#[derive(Debug, Clone, Default)]
pub struct MetaOverrides {
    pub backbone: Option<String>,
    pub params: Option<u64>,
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub input: PathBuf,
    pub output: PathBuf,
    pub n_rows: usize,
    pub n_cols: usize,
    pub backbone: String,
    pub params: u64,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub kind: String,
    pub seed: u64,
    pub files: Vec<IngestRecord>,
}

/// Converts CSV or EMB1 inputs into validated EMB1 files in the output
/// directory, named after the input stem.
pub fn cmd_ingest(cfg: &ExperimentConfig, inputs: &[PathBuf], meta: &MetaOverrides) -> Result<IngestReport> {
    if inputs.is_empty() {
        return Err(HarnessError::Config("no input files given".into()));
    }
    if let Some(p) = inputs.iter().find(|p| !p.exists()) {
        return Err(HarnessError::Config(format!("input {} does not exist", p.display())));
    }
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut files = Vec::new();
    for input in inputs {
        let mut table = read_table(input)?;
        if let Some(b) = &meta.backbone {
            table.meta.backbone = b.clone();
        }
        if let Some(p) = meta.params {
            table.meta.params = p;
        }
        if let Some(d) = &meta.dataset {
            table.meta.dataset = d.clone();
        }
        let output = dir.join(format!("{}.emb", file_stem(input)));
        write_table(&table, &output)?;
        files.push(IngestRecord {
            input: input.clone(),
            output,
            n_rows: table.n_rows(),
            n_cols: table.n_cols(),
            backbone: table.meta.backbone.clone(),
            params: table.meta.params,
            dataset: table.meta.dataset.clone(),
        });
    }
    let report = IngestReport {
        kind: "ingest".into(),
        seed: cfg.seed,
        files,
    };
    write_report(dir, "ingest", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileCheck {
    pub path: PathBuf,
    pub n_rows: Option<usize>,
    pub n_cols: Option<usize>,
    pub violations: Vec<String>,
    /// Set when the file could not be parsed at all.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub kind: String,
    pub ok: bool,
    pub files: Vec<FileCheck>,
}

/// Checks each file against the table invariants. Never writes anything.
pub fn cmd_validate(paths: &[PathBuf]) -> Result<ValidateReport> {
    if paths.is_empty() {
        return Err(HarnessError::Config("no files to validate".into()));
    }
    let files: Vec<FileCheck> = paths
        .iter()
        .map(|path| {
            let mut check = FileCheck {
                path: path.clone(),
                n_rows: None,
                n_cols: None,
                violations: Vec::new(),
                error: None,
            };
            match read_table(path) {
                Ok(t) => {
                    check.n_rows = Some(t.n_rows());
                    check.n_cols = Some(t.n_cols());
                    check.violations = validate(&t).iter().map(|v| v.to_string()).collect();
                }
                Err(StoreError::Validation(v)) => {
                    check.violations = v.iter().map(|v| v.to_string()).collect();
                }
                Err(e) => check.error = Some(e.to_string()),
            }
            check
        })
        .collect();
    Ok(ValidateReport {
        kind: "validate".into(),
        ok: files.iter().all(|f| f.violations.is_empty() && f.error.is_none()),
        files,
    })
}
