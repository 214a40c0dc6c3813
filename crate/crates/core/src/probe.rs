//! Multinomial logistic regression on frozen embeddings.
//!
//! The objective is the mean negative log-likelihood plus
//! `lambda / 2 * ||W||_F^2` (bias unpenalized). It is minimized by full-batch
//! gradient descent with an Armijo backtracking line search. Trial steps start
//! from the Barzilai-Borwein estimate and are halved until sufficient decrease
//! holds, so every accepted step lowers the loss.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::EmbeddingTable;

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;
const MAX_STEP: f64 = 1e10;

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("table has no labels")]
    MissingLabels,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("lambda must be positive, got {0}")]
    BadLambda(f64),
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("feature width {got} does not match model width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("initial parameters have the wrong shape")]
    InitShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lambda: 1e-3,
            tol: 1e-5,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// `C x d`, serialized as a list of rows
    #[serde(with = "matrix_rows")]
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
    pub lambda: f64,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

impl ProbeModel {
    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn final_loss(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.loss)
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<usize>, ProbeError> {
        let p = predict_proba(self, features)?;
        Ok(p.row_iter().map(|r| r.transpose().argmax().0).collect())
    }
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged weight matrix"));
        }
        Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
    }
}

/// Labeled design matrix the probe objective is defined on.
#[derive(Debug, Clone)]
pub struct ProbeData {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl ProbeData {
    pub fn from_table(table: &EmbeddingTable) -> Result<Self, ProbeError> {
        let labels = table.class_indices().ok_or(ProbeError::MissingLabels)?;
        Ok(ProbeData {
            features: table.features_f64(),
            labels,
            n_classes: table.n_classes(),
        })
    }

    /// Rows of `table`, keeping the full table's class count.
    pub fn from_rows(table: &EmbeddingTable, rows: &[usize]) -> Result<Self, ProbeError> {
        let mut data = Self::from_table(&table.select_rows(rows))?;
        data.n_classes = table.n_classes();
        Ok(data)
    }

    fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Flattened parameter count: `C * d` weights then `C` biases.
    pub fn n_params(&self) -> usize {
        self.n_classes * (self.dim() + 1)
    }

    pub fn unpack(&self, theta: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let (c, d) = (self.n_classes, self.dim());
        let w = DMatrix::from_row_slice(c, d, &theta.as_slice()[..c * d]);
        let b = DVector::from_column_slice(&theta.as_slice()[c * d..]);
        (w, b)
    }

    pub fn pack(&self, w: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut v: Vec<f64> = w.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        v.extend(b.iter());
        DVector::from_vec(v)
    }

    /// Objective value and gradient at the flattened parameters.
    pub fn loss_grad(&self, theta: &DVector<f64>, lambda: f64) -> (f64, DVector<f64>) {
        let (w, b) = self.unpack(theta);
        let n = self.features.nrows();
        let mut logits = &self.features * w.transpose();
        for mut row in logits.row_iter_mut() {
            row += b.transpose();
        }
        let mut nll = 0.0;
        // logits become (softmax - onehot) / n in place
        for (i, mut row) in logits.row_iter_mut().enumerate() {
            let m = row.max();
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            nll += lse - row[self.labels[i]];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
            row[self.labels[i]] -= 1.0;
        }
        logits /= n as f64;
        let gw = logits.transpose() * &self.features + &w * lambda;
        let gb = logits.row_sum().transpose();
        let loss = nll / n as f64 + 0.5 * lambda * w.norm_squared();
        (loss, self.pack(&gw, &gb))
    }
}

pub fn train_probe(table: &EmbeddingTable, config: ProbeConfig) -> Result<ProbeModel, ProbeError> {
    let data = ProbeData::from_table(table)?;
    fit(&data, config, None)
}

/// Minimizes the probe objective from `init` (zero when `None`).
pub fn fit(
    data: &ProbeData,
    config: ProbeConfig,
    init: Option<&DVector<f64>>,
) -> Result<ProbeModel, ProbeError> {
    let distinct = data.labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 || data.n_classes < 2 {
        return Err(ProbeError::SingleClass);
    }
    if config.lambda.is_nan() || config.lambda <= 0.0 {
        return Err(ProbeError::BadLambda(config.lambda));
    }
    let mut theta = match init {
        Some(t) if t.len() == data.n_params() => t.clone(),
        Some(_) => return Err(ProbeError::InitShape),
        None => DVector::zeros(data.n_params()),
    };
    let (mut loss, mut grad) = data.loss_grad(&theta, config.lambda);
    if !loss.is_finite() {
        return Err(ProbeError::NonFiniteLoss(0));
    }
    let mut trace = vec![TraceEntry {
        iteration: 0,
        loss,
        grad_norm: grad.norm(),
    }];
    let mut step = 1.0;
    let mut converged = grad.norm() <= config.tol;
    let mut it = 0;
    while !converged && it < config.max_iter {
        it += 1;
        let g2 = grad.norm_squared();
        let mut t = step;
        let accepted = loop {
            let cand = &theta - &grad * t;
            let (l, g) = data.loss_grad(&cand, config.lambda);
            if l.is_finite() && l <= loss - ARMIJO_C * t * g2 {
                break Some((cand, l, g));
            }
            t *= 0.5;
            if t < MIN_STEP {
                break None;
            }
        };
        let Some((next, next_loss, next_grad)) = accepted else {
            // no decrease possible at machine precision
            break;
        };
        let s = &next - &theta;
        let y = &next_grad - &grad;
        let sy = s.dot(&y);
        step = if sy > 0.0 {
            (s.norm_squared() / sy).clamp(MIN_STEP, MAX_STEP)
        } else {
            (2.0 * t).min(MAX_STEP)
        };
        theta = next;
        loss = next_loss;
        grad = next_grad;
        let grad_norm = grad.norm();
        trace.push(TraceEntry {
            iteration: it,
            loss,
            grad_norm,
        });
        converged = grad_norm <= config.tol;
    }
    let (w, b) = data.unpack(&theta);
    Ok(ProbeModel {
        weights: w,
        bias: b.iter().copied().collect(),
        lambda: config.lambda,
        converged,
        trace,
    })
}

/// Row-wise softmax of `features * W^T + b`.
pub fn predict_proba(model: &ProbeModel, features: &DMatrix<f64>) -> Result<DMatrix<f64>, ProbeError> {
    if features.ncols() != model.weights.ncols() {
        return Err(ProbeError::WidthMismatch {
            expected: model.weights.ncols(),
            got: features.ncols(),
        });
    }
    let mut logits = features * model.weights.transpose();
    for mut row in logits.row_iter_mut() {
        for (v, b) in row.iter_mut().zip(&model.bias) {
            *v += b;
        }
        softmax_in_place(row.iter_mut());
    }
    Ok(logits)
}

fn softmax_in_place<'a>(row: impl Iterator<Item = &'a mut f64>) {
    let mut vals: Vec<&mut f64> = row.collect();
    let m = vals.iter().map(|v| **v).fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in vals.iter_mut() {
        **v = (**v - m).exp();
        s += **v;
    }
    for v in vals {
        *v /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::TableMeta;

    fn blobs() -> EmbeddingTable {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let jitter = (i as f64 * 0.37).sin() * 0.3;
            rows.push(vec![2.0 + jitter, 1.0 - jitter]);
            labels.push(0);
            rows.push(vec![-2.0 - jitter, -1.0 + jitter * 0.5]);
            labels.push(1);
        }
        EmbeddingTable::from_rows(&rows, Some(labels), None, TableMeta::default()).unwrap()
    }

    #[test]
    fn separable_blobs_fit_exactly() {
        let t = blobs();
        let cfg = ProbeConfig {
            lambda: 1e-4,
            ..Default::default()
        };
        let m = train_probe(&t, cfg).unwrap();
        assert!(m.converged, "final grad {:?}", m.trace.last());
        let pred = m.predict(&t.features_f64()).unwrap();
        let labels = t.class_indices().unwrap();
        assert_eq!(pred, labels);
        assert!(m.trace.windows(2).all(|w| w[1].loss <= w[0].loss));
    }

    #[test]
    fn heavy_regularization_recovers_priors() {
        let mut t = blobs();
        // 3:1 class ratio
        let mut labels = t.labels.take().unwrap();
        for (i, y) in labels.iter_mut().enumerate() {
            *y = (i % 4 == 0) as i32;
        }
        t.labels = Some(labels);
        let m = train_probe(
            &t,
            ProbeConfig {
                lambda: 1e6,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.weights.norm() < 1e-5);
        let p = predict_proba(&m, &t.features_f64()).unwrap();
        for r in p.row_iter() {
            assert!((r[1] - 0.25).abs() < 1e-4, "{}", r[1]);
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = ProbeModel {
            weights: DMatrix::zeros(4, 3),
            bias: vec![0.0; 4],
            lambda: 1.0,
            converged: true,
            trace: vec![],
        };
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.5, 9.0]);
        let p = predict_proba(&m, &x).unwrap();
        assert!(p.iter().all(|&v| v == 0.25));
        assert_eq!(
            predict_proba(&m, &DMatrix::zeros(1, 2)),
            Err(ProbeError::WidthMismatch { expected: 3, got: 2 })
        );
    }

    #[test]
    fn rows_are_distributions_and_shift_invariant() {
        let m = ProbeModel {
            weights: DMatrix::from_row_slice(3, 2, &[1.0, -0.5, 0.3, 2.0, -1.5, 0.2]),
            bias: vec![0.1, -0.2, 0.4],
            lambda: 1.0,
            converged: true,
            trace: vec![],
        };
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -3.0, 0.5, 40.0, -7.0]);
        let p = predict_proba(&m, &x).unwrap();
        for r in p.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-9);
        }
        let mut shifted = m.clone();
        shifted.bias.iter_mut().for_each(|b| *b += 100.0);
        let q = predict_proba(&shifted, &x).unwrap();
        assert!((p - q).amax() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        let t = EmbeddingTable::from_rows(&[vec![1.0], vec![2.0]], Some(vec![0, 0]), None, TableMeta::default())
            .unwrap();
        assert_eq!(train_probe(&t, ProbeConfig::default()), Err(ProbeError::SingleClass));
    }

    #[test]
    fn json_roundtrip() {
        let m = train_probe(&blobs(), ProbeConfig::default()).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"weights\":[["));
        let back: ProbeModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
