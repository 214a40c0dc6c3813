//! Log marginal evidence of a Bayesian linear model on frozen features.
//!
//! For each class a one-vs-rest target `y` is regressed on the features `F`
//! with weight prior `N(0, 1/alpha)` and noise precision `beta`. The evidence
//! is maximized over `(alpha, beta)` by the MacKay fixed-point updates, all
//! carried out in the SVD basis of `F` which is computed once.

use nalgebra::{DMatrix, DVector};

use super::{EstimatorError, TransferScore};
use crate::store::EmbeddingTable;

const MAX_ITER: usize = 100;
const EVIDENCE_TOL: f64 = 1e-6;
const PARAM_TOL: f64 = 1e-6;
const BETA_CAP: f64 = 1e10;
const ALPHA_CAP: f64 = 1e10;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Spectral quantities shared by every class target.
#[derive(Debug, Clone)]
pub struct Spectrum {
    n: usize,
    d: usize,
    /// nonzero squared singular values
    sigma2: Vec<f64>,
    /// left singular vectors matching `sigma2`, as columns
    u: DMatrix<f64>,
}

impl Spectrum {
    pub fn new(features: &DMatrix<f64>) -> Self {
        let (n, d) = features.shape();
        let svd = features.clone().svd(true, false);
        let s = &svd.singular_values;
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let cutoff = smax * (n.max(d) as f64) * f64::EPSILON;
        let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > cutoff).collect();
        let u_all = svd.u.expect("u requested");
        let u = DMatrix::from_fn(n, keep.len(), |r, c| u_all[(r, keep[c])]);
        let sigma2 = keep.iter().map(|&i| s[i] * s[i]).collect();
        Spectrum { n, d, sigma2, u }
    }

    pub fn rank(&self) -> usize {
        self.sigma2.len()
    }
}

/// Evidence terms for one target at fixed `(alpha, beta)`.
#[derive(Debug, Clone, Copy)]
pub struct EvidenceTerms {
    pub gamma: f64,
    /// `m^T m`
    pub m_sq: f64,
    /// `||y - F m||^2`
    pub residual_sq: f64,
    /// per-sample log evidence
    pub evidence: f64,
}

/// Projection of a target onto the left singular vectors.
#[derive(Debug, Clone)]
pub struct Projected {
    x2: Vec<f64>,
    /// squared norm of the part of `y` outside the column space
    outside: f64,
}

impl Spectrum {
    pub fn project(&self, y: &DVector<f64>) -> Projected {
        let x = self.u.tr_mul(y);
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        let outside = (y.norm_squared() - x2.iter().sum::<f64>()).max(0.0);
        Projected { x2, outside }
    }

    pub fn terms(&self, p: &Projected, alpha: f64, beta: f64) -> EvidenceTerms {
        let (n, d) = (self.n as f64, self.d as f64);
        let mut gamma = 0.0;
        let mut m_sq = 0.0;
        let mut residual_sq = p.outside;
        let mut log_det = (self.d - self.rank()) as f64 * alpha.ln();
        for (&s2, &x2) in self.sigma2.iter().zip(&p.x2) {
            let a = alpha + beta * s2;
            gamma += beta * s2 / a;
            m_sq += beta * beta * s2 * x2 / (a * a);
            residual_sq += x2 * (alpha / a) * (alpha / a);
            log_det += a.ln();
        }
        let evidence = (0.5 * d * alpha.ln() + 0.5 * n * beta.ln()
            - 0.5 * n * LN_2PI
            - 0.5 * beta * residual_sq
            - 0.5 * alpha * m_sq
            - 0.5 * log_det)
            / n;
        EvidenceTerms {
            gamma,
            m_sq,
            residual_sq,
            evidence,
        }
    }

    /// One MacKay update of `(alpha, beta)`.
    pub fn update(&self, p: &Projected, alpha: f64, beta: f64) -> (f64, f64) {
        let t = self.terms(p, alpha, beta);
        let n = self.n as f64;
        let new_alpha = (t.gamma / t.m_sq).min(ALPHA_CAP);
        let new_beta = ((n - t.gamma) / t.residual_sq).min(BETA_CAP);
        (new_alpha, new_beta)
    }
}

/// Outcome of maximizing the evidence for a single target.
#[derive(Debug, Clone, Copy)]
pub struct FixedPoint {
    pub alpha: f64,
    pub beta: f64,
    pub evidence: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs the fixed-point iteration from `alpha = beta = 1`.
pub fn maximize_evidence(spec: &Spectrum, y: &DVector<f64>) -> FixedPoint {
    let p = spec.project(y);
    let (mut alpha, mut beta) = (1.0, 1.0);
    let mut evidence = spec.terms(&p, alpha, beta).evidence;
    for it in 1..=MAX_ITER {
        let (a, b) = spec.update(&p, alpha, beta);
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
            return FixedPoint {
                alpha,
                beta,
                evidence,
                iterations: it,
                converged: false,
            };
        }
        let next = spec.terms(&p, a, b).evidence;
        let rel = |new: f64, old: f64| ((new - old) / old).abs();
        let settled = (next - evidence).abs() < EVIDENCE_TOL
            && (rel(a, alpha) < PARAM_TOL || a == ALPHA_CAP)
            && (rel(b, beta) < PARAM_TOL || b == BETA_CAP);
        alpha = a;
        beta = b;
        evidence = next;
        if settled {
            return FixedPoint {
                alpha,
                beta,
                evidence,
                iterations: it,
                converged: true,
            };
        }
    }
    FixedPoint {
        alpha,
        beta,
        evidence,
        iterations: MAX_ITER,
        converged: false,
    }
}

/// Mean over classes of the maximized one-vs-rest per-sample log evidence.
pub fn logme_score(table: &EmbeddingTable) -> Result<TransferScore, EstimatorError> {
    let labels = table.class_indices().ok_or(EstimatorError::MissingLabels)?;
    let c = table.n_classes();
    if c < 2 {
        return Err(EstimatorError::SingleClass);
    }
    let f = table.features_f64();
    if f.iter().all(|&v| v == 0.0) {
        return Err(EstimatorError::Degenerate("zero feature matrix".into()));
    }
    let spec = Spectrum::new(&f);
    let mut total = 0.0;
    let mut iterations = 0;
    let mut converged = true;
    for class in 0..c {
        let y = DVector::from_iterator(
            labels.len(),
            labels.iter().map(|&l| if l == class { 1.0 } else { 0.0 }),
        );
        let fp = maximize_evidence(&spec, &y);
        total += fp.evidence;
        iterations = iterations.max(fp.iterations);
        converged &= fp.converged;
    }
    let score = total / c as f64;
    if !score.is_finite() {
        return Err(EstimatorError::NonFinite("logme".into()));
    }
    Ok(TransferScore {
        estimator: "logme".into(),
        score,
        converged,
        iterations,
        error: None,
    })
}
