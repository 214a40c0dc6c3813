//! Pairwise distance rank correlation between feature and label geometry.

use super::{EstimatorError, TransferScore};
use crate::rank::{pearson, spearman};
use crate::store::EmbeddingTable;

/// Strict lower triangle (row-major, `i > j`) of `1 - corr(row_i, row_j)`.
pub fn correlation_distances(rows: &[Vec<f64>]) -> Result<Vec<f64>, EstimatorError> {
    let n = rows.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 1..n {
        for j in 0..i {
            let r = pearson(&rows[i], &rows[j])
                .ok_or_else(|| EstimatorError::Degenerate("degenerate row".into()))?;
            out.push(1.0 - r);
        }
    }
    Ok(out)
}

/// `100 * spearman(feature distances, label distances)`.
pub fn parc_from_distances(feature_dist: &[f64], label_dist: &[f64]) -> Result<f64, EstimatorError> {
    spearman(feature_dist, label_dist)
        .map(|r| 100.0 * r)
        .ok_or_else(|| EstimatorError::Degenerate("constant distance structure".into()))
}

pub fn parc_score(table: &EmbeddingTable) -> Result<TransferScore, EstimatorError> {
    let labels = table.class_indices().ok_or(EstimatorError::MissingLabels)?;
    let c = table.n_classes();
    if c < 2 {
        return Err(EstimatorError::SingleClass);
    }
    let n = table.n_rows();
    if n < 3 {
        return Err(EstimatorError::Precondition(format!("need at least 3 rows, got {n}")));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| table.row(i).iter().map(|&v| v as f64).collect())
        .collect();
    if rows.iter().any(|r| r.iter().all(|&v| v == r[0])) {
        return Err(EstimatorError::Degenerate("degenerate row".into()));
    }
    let onehot: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| (0..c).map(|k| if k == y { 1.0 } else { 0.0 }).collect())
        .collect();
    let df = correlation_distances(&rows)?;
    let dy = correlation_distances(&onehot)?;
    let score = parc_from_distances(&df, &dy)?;
    Ok(TransferScore {
        estimator: "parc".into(),
        score,
        converged: true,
        iterations: 1,
        error: None,
    })
}
