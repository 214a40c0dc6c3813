//! Log expected empirical prediction under a Gaussian-mixture soft clustering
//! of PCA-reduced features.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EstimatorError, TransferScore};
use crate::store::EmbeddingTable;

const RETAINED_VARIANCE: f64 = 0.8;
const VAR_FLOOR: f64 = 1e-6;
const REL_TOL: f64 = 1e-5;
const MAX_ITER: usize = 200;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NleepConfig {
    /// Mixture size; `None` picks `max(C, min(5C, n/10, n))`.
    pub n_components: Option<usize>,
    pub seed: u64,
}

pub fn default_components(n: usize, n_classes: usize) -> usize {
    (5 * n_classes).min(n / 10).min(n).max(n_classes).min(n)
}

/// Centers the rows and projects onto the leading principal axes that
/// together explain at least 80% of the variance.
pub fn pca_reduce(features: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = features.shape();
    let mean = features.row_mean();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.tr_mul(&centered) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut keep = 0;
    let mut acc = 0.0;
    for &i in &order {
        keep += 1;
        acc += eig.eigenvalues[i].max(0.0);
        if acc >= RETAINED_VARIANCE * total {
            break;
        }
    }
    let basis = DMatrix::from_fn(d, keep, |r, c| eig.eigenvectors[(r, order[c])]);
    centered * basis
}

/// Diagonal-covariance Gaussian mixture fitted by EM.
#[derive(Debug, Clone)]
pub struct DiagGmm {
    pub weights: Vec<f64>,
    pub means: DMatrix<f64>,
    pub variances: DMatrix<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sq_dist(x: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    (0..x.ncols()).map(|j| (x[(a, j)] - x[(b, j)]).powi(2)).sum()
}

/// k-means++ seeding: indices of the chosen rows.
fn kmeans_pp(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(x, i, chosen[0]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = 0;
            for (i, &w) in d2.iter().enumerate().filter(|(_, &w)| w > 0.0) {
                pick = i;
                if target < w {
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(x, i, next));
        }
    }
    chosen
}

impl DiagGmm {
    /// Per-row component log densities including log weights.
    fn joint_log(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, dim) = x.shape();
        let k = self.weights.len();
        DMatrix::from_fn(n, k, |i, c| {
            let mut lp = self.weights[c].ln();
            for j in 0..dim {
                let v = self.variances[(c, j)];
                lp -= 0.5 * (LN_2PI + v.ln() + (x[(i, j)] - self.means[(c, j)]).powi(2) / v);
            }
            lp
        })
    }

    /// Posterior responsibilities (rows sum to one) and total log-likelihood.
    pub fn posteriors(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        let mut r = self.joint_log(x);
        let mut ll = 0.0;
        for mut row in r.row_iter_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
            ll += m + s.ln();
            for v in row.iter_mut() {
                *v = (*v - m).exp() / s;
            }
        }
        (r, ll)
    }

    pub fn fit(x: &DMatrix<f64>, k: usize, seed: u64) -> Result<Self, EstimatorError> {
        let (n, dim) = x.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = kmeans_pp(x, k, &mut rng);
        let mean = x.row_mean();
        let global_var: Vec<f64> = (0..dim)
            .map(|j| {
                let v = x.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n as f64;
                v.max(VAR_FLOOR)
            })
            .collect();
        let mut gmm = DiagGmm {
            weights: vec![1.0 / k as f64; k],
            means: DMatrix::from_fn(k, dim, |c, j| x[(centers[c], j)]),
            variances: DMatrix::from_fn(k, dim, |_, j| global_var[j]),
            log_likelihood: f64::NEG_INFINITY,
            iterations: 0,
            converged: false,
        };
        let mut prev = f64::NAN;
        for it in 1..=MAX_ITER {
            let (r, ll) = gmm.posteriors(x);
            if !ll.is_finite() {
                return Err(EstimatorError::NonFinite("mixture log-likelihood".into()));
            }
            gmm.log_likelihood = ll;
            gmm.iterations = it;
            if prev.is_finite() && ((ll - prev) / prev).abs() < REL_TOL {
                gmm.converged = true;
                break;
            }
            prev = ll;
            for c in 0..k {
                let nk: f64 = r.column(c).sum();
                gmm.weights[c] = nk / n as f64;
                if nk <= 0.0 {
                    continue;
                }
                for j in 0..dim {
                    let mu = (0..n).map(|i| r[(i, c)] * x[(i, j)]).sum::<f64>() / nk;
                    let var =
                        (0..n).map(|i| r[(i, c)] * (x[(i, j)] - mu).powi(2)).sum::<f64>() / nk;
                    gmm.means[(c, j)] = mu;
                    gmm.variances[(c, j)] = var.max(VAR_FLOOR);
                }
            }
        }
        Ok(gmm)
    }
}

/// Mean log probability of each row's label under the mixture's soft
/// cluster-to-label map.
pub fn expected_prediction(posteriors: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> f64 {
    let (n, k) = posteriors.shape();
    // label distribution of each component
    let mut joint = DMatrix::<f64>::zeros(k, n_classes);
    for i in 0..n {
        for c in 0..k {
            joint[(c, labels[i])] += posteriors[(i, c)];
        }
    }
    for c in 0..k {
        let mass: f64 = joint.row(c).sum();
        if mass > 0.0 {
            joint.row_mut(c).unscale_mut(mass);
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        // dividing by the posterior mass keeps pure components at exactly 1
        let p: f64 = (0..k).map(|c| posteriors[(i, c)] * joint[(c, labels[i])]).sum();
        let mass: f64 = (0..k).map(|c| posteriors[(i, c)]).sum();
        total += (p / mass).min(1.0).ln();
    }
    total / n as f64
}

pub fn nleep_score(table: &EmbeddingTable, config: NleepConfig) -> Result<TransferScore, EstimatorError> {
    let labels = table.class_indices().ok_or(EstimatorError::MissingLabels)?;
    let c = table.n_classes();
    let n = table.n_rows();
    let k = config.n_components.unwrap_or_else(|| default_components(n, c));
    if k == 0 || k > n {
        return Err(EstimatorError::Precondition(format!(
            "component count {k} must lie in 1..={n}"
        )));
    }
    let reduced = pca_reduce(&table.features_f64());
    let gmm = DiagGmm::fit(&reduced, k, config.seed)?;
    let (post, _) = gmm.posteriors(&reduced);
    let score = expected_prediction(&post, &labels, c);
    if !score.is_finite() {
        return Err(EstimatorError::NonFinite("nleep".into()));
    }
    Ok(TransferScore {
        estimator: "nleep".into(),
        score,
        converged: gmm.converged,
        iterations: gmm.iterations,
        error: None,
    })
}
