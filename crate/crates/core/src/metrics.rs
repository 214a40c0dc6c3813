//! Classification metrics and fold-level statistics.

use serde::{Deserialize, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::rank::midranks;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("label {0} outside 0..{1}")]
    LabelOutOfRange(usize, usize),
}

/// Area under the ROC curve via the Mann-Whitney statistic with midranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y).map(|(r, _)| r).sum();
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Average precision: tied scores form a single threshold step.
pub fn aupr(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy and F1 summaries over `n_classes` classes. Classes absent from
/// both predictions and labels score F1 = 0.
pub fn f1_report(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<MetricReport, MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricError::TooFew { need: 1, got: 0 });
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        for v in [p, y] {
            if v >= n_classes {
                return Err(MetricError::LabelOutOfRange(v, n_classes));
            }
        }
        confusion[y][p] += 1;
    }
    let n = labels.len() as f64;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut per_class_f1 = Vec::with_capacity(n_classes);
    let mut weighted = 0.0;
    for c in 0..n_classes {
        let tp = confusion[c][c];
        let true_c: usize = confusion[c].iter().sum();
        let pred_c: usize = confusion.iter().map(|r| r[c]).sum();
        let precision = ratio(tp, pred_c);
        let recall = ratio(tp, true_c);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class_f1.push(f1);
        weighted += true_c as f64 / n * f1;
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    Ok(MetricReport {
        auroc: None,
        aupr: None,
        accuracy: correct as f64 / n,
        macro_f1: per_class_f1.iter().sum::<f64>() / n_classes as f64,
        weighted_f1: weighted,
        per_class_f1,
        confusion,
    })
}

/// Full report from class-probability rows. Ranking metrics are filled in for
/// binary tasks only, scored on the class-1 probability.
pub fn evaluate_probabilities(
    probs: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
) -> Result<MetricReport, MetricError> {
    let predictions: Vec<usize> = probs
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &p)| if p > best.1 { (c, p) } else { best })
                .0
        })
        .collect();
    let mut report = f1_report(&predictions, labels, n_classes)?;
    if n_classes == 2 {
        let scores: Vec<f64> = probs.iter().map(|r| r[1]).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        report.auroc = auroc(&scores, &positive).ok();
        report.aupr = aupr(&scores, &positive).ok();
    }
    Ok(report)
}

/// Mean and sample standard deviation of per-fold values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

pub fn fold_summary(values: &[f64]) -> Result<FoldSummary, MetricError> {
    if values.len() < 2 {
        return Err(MetricError::TooFew {
            need: 2,
            got: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.iter().all(|&v| v == values[0]) {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(FoldSummary {
        per_fold: values.to_vec(),
        mean,
        sd,
    })
}

/// Result of a paired two-sided t-test. `t` is infinite when the differences
/// are constant and nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    #[serde(serialize_with = "serialize_sentinel", deserialize_with = "deserialize_sentinel")]
    pub t: f64,
    pub df: usize,
    pub p: f64,
}

fn serialize_sentinel<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("+inf")
    } else if *v < 0.0 {
        s.serialize_str("-inf")
    } else {
        s.serialize_str("nan")
    }
}

fn deserialize_sentinel<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(s) => match s.as_str() {
            "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("bad t sentinel {other:?}"))),
        },
    }
}

/// Paired two-sided t-test on per-fold values `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(MetricError::TooFew { need: 2, got: a.len() });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let k = d.len();
    let df = k - 1;
    let s = fold_summary(&d)?;
    if s.sd == 0.0 {
        return Ok(if s.mean == 0.0 {
            TTest { t: 0.0, df, p: 1.0 }
        } else {
            TTest {
                t: f64::INFINITY.copysign(s.mean),
                df,
                p: 0.0,
            }
        });
    }
    let t = s.mean / (s.sd / (k as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, df, p })
}
