mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use common::*;
use probekit::harness::{
    cmd_estimate, cmd_probe_eval, cmd_split, cmd_ssl, cmd_sweep, ExperimentConfig, HarnessError, TableRole, TableSpec,
};
use probekit::ssl::{decode_checkpoint, SslState};
use probekit::transfer::EstimatorRegistry;
use probekit::{write_table, EmbeddingTable, TableMeta};
use rand::Rng;

fn write(dir: &Path, name: &str, mut table: EmbeddingTable, backbone: &str, params: u64, dataset: &str) -> PathBuf {
    table.meta = TableMeta::new(backbone, params, dataset);
    let path = dir.join(name);
    write_table(&table, &path).unwrap();
    path
}

fn config(out: &Path, tables: &[(&PathBuf, TableRole)]) -> ExperimentConfig {
    ExperimentConfig {
        tables: tables
            .iter()
            .map(|(p, role)| TableSpec {
                path: (*p).clone(),
                role: *role,
            })
            .collect(),
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn noise_like(t: &EmbeddingTable, seed: u64) -> EmbeddingTable {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..t.n_rows()).map(|_| normal_vec(&mut r, t.n_cols(), 1.0)).collect();
    EmbeddingTable::from_rows(&rows, t.labels.clone(), t.groups.clone(), TableMeta::default()).unwrap()
}

#[test]
fn estimate_cardinality_and_informative_winner() {
    let dir = tempfile::tempdir().unwrap();
    let good = blobs(&mut rng(1), 30, 6, 2, 3.0, 2);
    let noise = noise_like(&good, 2);
    let a = write(dir.path(), "good.emb", good, "good", 100, "ds");
    let b = write(dir.path(), "noise.emb", noise, "noise", 10, "ds");
    let cfg = config(&dir.path().join("out"), &[(&a, TableRole::Candidate), (&b, TableRole::Candidate)]);
    let (scores, ranking) = cmd_estimate(&cfg, &EstimatorRegistry::default()).unwrap();
    assert_eq!(scores.cells.len(), 6);
    assert_eq!(ranking.ranking.winner, "good");
    assert!(cfg.out_dir.join("scores.json").exists());
    assert!(cfg.out_dir.join("ranking.json").exists());
    assert!(cfg.out_dir.join("ranking.meta.json").exists());

    let probe = cmd_probe_eval(&cfg, &EstimatorRegistry::default()).unwrap();
    let acc = |b: &str| probe.tables.iter().find(|t| t.backbone == b).unwrap().summary["accuracy"].mean;
    assert!(acc("good") > acc("noise"));
}

#[test]
fn budget_excluding_everyone_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let t = blobs(&mut rng(3), 20, 4, 2, 3.0, 1);
    let a = write(dir.path(), "a.emb", t.clone(), "a", 100, "ds");
    let b = write(dir.path(), "b.emb", noise_like(&t, 4), "b", 200, "ds");
    let mut cfg = config(&dir.path().join("out"), &[(&a, TableRole::Candidate), (&b, TableRole::Candidate)]);
    cfg.budget = Some(50);
    let err = cmd_estimate(&cfg, &EstimatorRegistry::default()).unwrap_err();
    assert!(matches!(err, HarnessError::Aggregation(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    // scores survive the failed aggregation
    assert!(cfg.out_dir.join("scores.json").exists());
}

#[test]
fn missing_table_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let t = blobs(&mut rng(5), 10, 3, 2, 3.0, 1);
    let a = write(dir.path(), "a__x.emb", t.clone(), "a", 1, "x");
    let b = write(dir.path(), "b__x.emb", t.clone(), "b", 1, "x");
    let c = write(dir.path(), "a__y.emb", t, "a", 1, "y");
    let cfg = config(
        &dir.path().join("out"),
        &[(&a, TableRole::Candidate), (&b, TableRole::Candidate), (&c, TableRole::Candidate)],
    );
    let err = cmd_estimate(&cfg, &EstimatorRegistry::default()).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");

    let gone = dir.path().join("gone.emb");
    let cfg = config(&dir.path().join("out"), &[(&gone, TableRole::Candidate)]);
    assert_eq!(cmd_estimate(&cfg, &EstimatorRegistry::default()).unwrap_err().exit_code(), 1);
}

#[test]
fn failing_estimator_cell_does_not_abort() {
    let dir = tempfile::tempdir().unwrap();
    let t = blobs(&mut rng(6), 20, 4, 2, 3.0, 1);
    let a = write(dir.path(), "a.emb", t.clone(), "a", 1, "ds");
    let b = write(dir.path(), "b.emb", noise_like(&t, 7), "b", 2, "ds");
    let mut registry = EstimatorRegistry::default();
    registry
        .register_plugin("picky", |t: &EmbeddingTable| {
            if t.meta.backbone == "b" {
                Err("refuses b".into())
            } else {
                Ok(1.0)
            }
        })
        .unwrap();
    let mut cfg = config(&dir.path().join("out"), &[(&a, TableRole::Candidate), (&b, TableRole::Candidate)]);
    cfg.estimators = vec!["logme".into(), "plugin:picky".into()];
    let (scores, ranking) = cmd_estimate(&cfg, &registry).unwrap();
    assert_eq!(scores.cells.len(), 4);
    let failed: Vec<_> = scores.cells.iter().filter(|c| c.score.error.is_some()).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(ranking.ranking.excluded_columns, ["ds/plugin:picky"]);
    assert_eq!(ranking.ranking.warnings.len(), 1);
}

#[test]
fn singleton_groups_give_row_level_folds() {
    let dir = tempfile::tempdir().unwrap();
    let t = blobs(&mut rng(8), 25, 4, 2, 2.0, 1);
    let a = write(dir.path(), "a.emb", t, "a", 1, "ds");
    let cfg = config(&dir.path().join("out"), &[(&a, TableRole::Candidate)]);
    let split = cmd_split(&cfg, &EstimatorRegistry::default()).unwrap();
    assert_eq!(split.tables[0].fold_sizes, vec![10; 5]);
}

#[test]
fn identical_baseline_gives_p_one() {
    let dir = tempfile::tempdir().unwrap();
    let t = blobs(&mut rng(9), 30, 4, 2, 1.5, 2);
    let a = write(dir.path(), "model.emb", t.clone(), "model", 1, "ds");
    let b = write(dir.path(), "base.emb", t, "base", 1, "ds");
    let cfg = config(&dir.path().join("out"), &[(&a, TableRole::Candidate), (&b, TableRole::Baseline)]);
    let report = cmd_probe_eval(&cfg, &EstimatorRegistry::default()).unwrap();
    let model = &report.tables[0];
    assert_eq!(model.baseline.as_ref(), Some(&b));
    assert!(!model.ttests.is_empty());
    for (metric, tt) in &model.ttests {
        assert_eq!(tt.p, 1.0, "{metric}");
    }
}

#[test]
fn separable_blobs_reach_high_auroc() {
    let dir = tempfile::tempdir().unwrap();
    let t = blobs(&mut rng(10), 50, 8, 2, 4.0, 2);
    let a = write(dir.path(), "a.emb", t, "a", 1, "ds");
    let cfg = config(&dir.path().join("out"), &[(&a, TableRole::Candidate)]);
    let report = cmd_probe_eval(&cfg, &EstimatorRegistry::default()).unwrap();
    let auroc = report.tables[0].summary["auroc"].mean;
    assert!(auroc >= 0.95, "{auroc}");
}

#[test]
fn full_fraction_sweep_matches_probe_eval() {
    let dir = tempfile::tempdir().unwrap();
    let t = blobs(&mut rng(11), 30, 5, 3, 1.5, 3);
    let a = write(dir.path(), "a.emb", t, "a", 1, "ds");
    let mut cfg = config(&dir.path().join("out"), &[(&a, TableRole::Candidate)]);
    cfg.fractions = vec![1.0];
    let sweep = cmd_sweep(&cfg, &EstimatorRegistry::default()).unwrap();
    let probe = cmd_probe_eval(&cfg, &EstimatorRegistry::default()).unwrap();
    assert_eq!(sweep.tables[0].points[0].per_fold, probe.tables[0].per_fold);
    assert_eq!(sweep.tables[0].points[0].summary, probe.tables[0].summary);
}

#[test]
fn sweep_has_no_leakage_and_nests() {
    let dir = tempfile::tempdir().unwrap();
    let t = blobs(&mut rng(12), 40, 5, 2, 1.5, 4);
    let a = write(dir.path(), "a.emb", t, "a", 1, "ds");
    let cfg = config(&dir.path().join("out"), &[(&a, TableRole::Candidate)]);
    let sweep = cmd_sweep(&cfg, &EstimatorRegistry::default()).unwrap();
    let table = &sweep.tables[0];
    for split in &table.splits {
        let test: BTreeSet<usize> = split.test_rows.iter().copied().collect();
        let train: BTreeSet<usize> = table.folds.train_rows(split.fold).into_iter().collect();
        for w in split.train_subsets.windows(2) {
            let small: BTreeSet<usize> = w[0].iter().copied().collect();
            let big: BTreeSet<usize> = w[1].iter().copied().collect();
            assert!(small.is_subset(&big));
        }
        for subset in &split.train_subsets {
            assert!(subset.iter().all(|i| !test.contains(i) && train.contains(i)));
        }
    }
}

#[test]
fn sweep_trend_is_monotone_on_average() {
    let (mut low, mut high) = (0.0, 0.0);
    for seed in 0..5u64 {
        let dir = tempfile::tempdir().unwrap();
        let t = linear_task(&mut rng(200 + seed), 200, 6, 3, 1.0);
        let groups = (0..t.n_rows() as i32).map(|i| i / 2).collect();
        let t = EmbeddingTable::from_rows(
            &(0..t.n_rows()).map(|i| t.row(i).iter().map(|&v| v as f64).collect()).collect::<Vec<_>>(),
            t.labels.clone(),
            Some(groups),
            TableMeta::default(),
        )
        .unwrap();
        let a = write(dir.path(), "a.emb", t, "a", 1, "ds");
        let mut cfg = config(&dir.path().join("out"), &[(&a, TableRole::Candidate)]);
        cfg.seed = seed;
        let sweep = cmd_sweep(&cfg, &EstimatorRegistry::default()).unwrap();
        let pts = &sweep.tables[0].points;
        low += pts[0].summary["accuracy"].mean / 5.0;
        high += pts[pts.len() - 1].summary["accuracy"].mean / 5.0;
    }
    assert!(high >= low - 0.05, "fraction 1.0: {high}, fraction 0.125: {low}");
}

#[test]
fn non_increasing_fractions_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let t = blobs(&mut rng(13), 10, 3, 2, 2.0, 1);
    let a = write(dir.path(), "a.emb", t, "a", 1, "ds");
    let mut cfg = config(&dir.path().join("out"), &[(&a, TableRole::Candidate)]);
    cfg.fractions = vec![0.5, 0.5, 1.0];
    let err = cmd_sweep(&cfg, &EstimatorRegistry::default()).unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(14);
    let t = blobs(&mut r, 20, 4, 3, 2.0, 2);
    let a = write(dir.path(), "a.emb", t.clone(), "a", 5, "ds");
    let b = write(dir.path(), "b.emb", noise_like(&t, r.random()), "b", 9, "ds");
    let read = |out: &Path, name: &str| std::fs::read(out.join(name)).unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let mut cfg = config(&out, &[(&a, TableRole::Candidate), (&b, TableRole::Candidate)]);
        cfg.jobs = 1 + run * 3;
        cmd_estimate(&cfg, &EstimatorRegistry::default()).unwrap();
        cmd_probe_eval(&cfg, &EstimatorRegistry::default()).unwrap();
        cmd_sweep(&cfg, &EstimatorRegistry::default()).unwrap();
        outputs.push(out);
    }
    for name in ["scores.json", "ranking.json", "probe.json", "sweep.json"] {
        assert_eq!(read(&outputs[0], name), read(&outputs[1], name), "{name}");
        let text = String::from_utf8(read(&outputs[0], name)).unwrap();
        assert!(text.contains("\"seed\": 0"), "{name} records the seed");
    }
}

#[test]
fn ssl_zero_steps_writes_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        out_dir: dir.path().into(),
        seed: 21,
        ..ExperimentConfig::default()
    };
    cfg.ssl.steps = 0;
    let report = cmd_ssl(&cfg).unwrap();
    let state = decode_checkpoint(&std::fs::read(dir.path().join("ssl.ckpt")).unwrap()).unwrap();
    let init = SslState::init(&cfg.ssl_model()).unwrap();
    let as_f32 = |v: &[f64]| v.iter().map(|&x| x as f32 as f64).collect::<Vec<_>>();
    assert_eq!(state.step, 0);
    assert_eq!(state.student, as_f32(&init.student));
    assert_eq!(state.teacher, as_f32(&init.teacher));
    assert_eq!(report.final_entropy, report.initial_entropy);
}

#[test]
fn ssl_default_run_avoids_collapse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        out_dir: dir.path().into(),
        ..ExperimentConfig::default()
    };
    let report = cmd_ssl(&cfg).unwrap();
    assert!(report.final_entropy >= 0.5 * 8f64.ln(), "{}", report.final_entropy);
    let log = std::fs::read_to_string(dir.path().join("ssl_steps.jsonl")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 201);
    assert!(lines[200].contains("final_entropy"));
}
