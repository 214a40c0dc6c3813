//! Borda (rank-sum) aggregation of transferability scores.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TransferScore;
use crate::rank::midranks;

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("missing score for backbone {backbone:?} on {column}")]
    MissingCell { backbone: String, column: String },
    #[error("no parameter count for backbone {0:?}")]
    MissingParams(String),
    #[error("no usable score columns")]
    NoColumns,
    #[error("no candidate within budget")]
    NoneWithinBudget,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScoreKey {
    pub backbone: String,
    pub dataset: String,
    pub estimator: String,
}

impl ScoreKey {
    pub fn new(backbone: &str, dataset: &str, estimator: &str) -> Self {
        ScoreKey {
            backbone: backbone.into(),
            dataset: dataset.into(),
            estimator: estimator.into(),
        }
    }

    fn column(&self) -> String {
        format!("{}/{}", self.dataset, self.estimator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub backbone: String,
    pub params: u64,
    /// keyed by `dataset/estimator`
    pub scores: BTreeMap<String, f64>,
    pub ranks: BTreeMap<String, f64>,
    pub borda: f64,
    pub within_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    /// Sorted best first: Borda sum, then parameter count, then name.
    pub candidates: Vec<Candidate>,
    pub winner: String,
    pub budget: Option<u64>,
    pub columns: Vec<String>,
    pub excluded_columns: Vec<String>,
    pub warnings: Vec<String>,
}

/// Ranks backbones within every (dataset, estimator) column (1 = highest
/// score, midranks on ties), sums the ranks, and picks the lowest sum among
/// backbones within `budget`.
///
/// A column containing any failed cell is dropped as a whole and reported in
/// `warnings`.
pub fn aggregate_ranking(
    scores: &BTreeMap<ScoreKey, TransferScore>,
    params: &BTreeMap<String, u64>,
    budget: Option<u64>,
) -> Result<RankingReport, AggregationError> {
    let backbones: BTreeSet<&str> = scores.keys().map(|k| k.backbone.as_str()).collect();
    let columns: BTreeSet<(String, String)> = scores
        .keys()
        .map(|k| (k.dataset.clone(), k.estimator.clone()))
        .collect();

    let mut warnings = Vec::new();
    let mut used = Vec::new();
    let mut excluded = Vec::new();
    let mut candidates: BTreeMap<&str, Candidate> = BTreeMap::new();
    for &b in &backbones {
        let p = *params
            .get(b)
            .ok_or_else(|| AggregationError::MissingParams(b.into()))?;
        candidates.insert(
            b,
            Candidate {
                backbone: b.into(),
                params: p,
                scores: BTreeMap::new(),
                ranks: BTreeMap::new(),
                borda: 0.0,
                within_budget: budget.is_none_or(|cap| p <= cap),
            },
        );
    }

    for (dataset, estimator) in &columns {
        let mut cells = Vec::with_capacity(backbones.len());
        for &b in &backbones {
            let key = ScoreKey::new(b, dataset, estimator);
            let cell = scores.get(&key).ok_or_else(|| AggregationError::MissingCell {
                backbone: b.into(),
                column: key.column(),
            })?;
            cells.push((b, cell));
        }
        let column = format!("{dataset}/{estimator}");
        let failed: Vec<&str> = cells
            .iter()
            .filter(|(_, c)| !c.is_usable())
            .map(|(b, _)| *b)
            .collect();
        if !failed.is_empty() {
            warnings.push(format!(
                "column {column} excluded: unusable score for {}",
                failed.join(", ")
            ));
            excluded.push(column);
            continue;
        }
        let negated: Vec<f64> = cells.iter().map(|(_, c)| -c.score).collect();
        for ((b, cell), rank) in cells.iter().zip(midranks(&negated)) {
            let cand = candidates.get_mut(b).unwrap();
            cand.scores.insert(column.clone(), cell.score);
            cand.ranks.insert(column.clone(), rank);
            cand.borda += rank;
        }
        used.push(column);
    }
    if used.is_empty() {
        return Err(AggregationError::NoColumns);
    }

    let mut candidates: Vec<Candidate> = candidates.into_values().collect();
    candidates.sort_by(|a, b| {
        a.borda
            .total_cmp(&b.borda)
            .then(a.params.cmp(&b.params))
            .then(a.backbone.cmp(&b.backbone))
    });
    let winner = candidates
        .iter()
        .find(|c| c.within_budget)
        .ok_or(AggregationError::NoneWithinBudget)?
        .backbone
        .clone();
    Ok(RankingReport {
        candidates,
        winner,
        budget,
        columns: used,
        excluded_columns: excluded,
        warnings,
    })
}
