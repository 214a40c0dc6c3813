//! Independent oracles and fixture builders shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use probekit::probe::ProbeData;
use probekit::{EmbeddingTable, TableMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian features with labels from a noisy random linear map; retries
/// until every class appears at least twice.
pub fn linear_task(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize, noise: f64) -> EmbeddingTable {
    loop {
        let f: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let w: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let labels: Vec<i32> = f
            .iter()
            .map(|x| {
                (0..c)
                    .map(|k| {
                        let e: f64 = rng.sample(StandardNormal);
                        x.iter().zip(&w[k]).map(|(a, b)| a * b).sum::<f64>() + noise * e
                    })
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap()
                    .0 as i32
            })
            .collect();
        if (0..c as i32).all(|k| labels.iter().filter(|&&y| y == k).count() >= 2) {
            return EmbeddingTable::from_rows(&f, Some(labels), None, TableMeta::default()).unwrap();
        }
    }
}

/// Class-separated Gaussian blobs: class `k` centered at `sep * e_k`.
pub fn blobs(rng: &mut ChaCha8Rng, n_per: usize, d: usize, c: usize, sep: f64, groups_of: usize) -> EmbeddingTable {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n_per * c {
        let k = i % c;
        let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        x[k % d] += sep;
        rows.push(x);
        labels.push(k as i32);
    }
    let groups = (0..rows.len()).map(|i| (i / groups_of.max(1)) as i32).collect();
    EmbeddingTable::from_rows(&rows, Some(labels), Some(groups), TableMeta::default()).unwrap()
}

// ---------------------------------------------------------------- LogME

/// Per-sample log evidence from dense linear algebra: `A = alpha I + beta F^T F`,
/// `m = beta A^-1 F^T y`, log-determinant from a Cholesky factor.
pub struct DirectEvidence {
    ftf: DMatrix<f64>,
    fty: DVector<f64>,
    yty: f64,
    n: f64,
    d: usize,
}

impl DirectEvidence {
    pub fn new(f: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        DirectEvidence {
            ftf: f.tr_mul(f),
            fty: f.tr_mul(y),
            yty: y.dot(y),
            n: f.nrows() as f64,
            d: f.ncols(),
        }
    }

    pub fn at(&self, alpha: f64, beta: f64) -> f64 {
        let a = DMatrix::identity(self.d, self.d) * alpha + &self.ftf * beta;
        let chol = a.cholesky().expect("A is positive definite");
        let m = chol.solve(&self.fty) * beta;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let resid = self.yty - 2.0 * m.dot(&self.fty) + m.dot(&(&self.ftf * &m));
        let d = self.d as f64;
        (0.5 * d * alpha.ln() + 0.5 * self.n * beta.ln()
            - 0.5 * self.n * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * beta * resid
            - 0.5 * alpha * m.dot(&m)
            - 0.5 * log_det)
            / self.n
    }

    /// Maximum over a log-spaced grid on `[1e-5, 1e5]^2`, then repeated
    /// local re-gridding around the incumbent.
    pub fn grid_max(&self) -> f64 {
        let (mut la, mut lb, mut best) = (0.0, 0.0, f64::NEG_INFINITY);
        let coarse = 81;
        for i in 0..coarse {
            for j in 0..coarse {
                let a = -5.0 + 10.0 * i as f64 / (coarse - 1) as f64;
                let b = -5.0 + 10.0 * j as f64 / (coarse - 1) as f64;
                let v = self.at(10f64.powf(a), 10f64.powf(b));
                if v > best {
                    (la, lb, best) = (a, b, v);
                }
            }
        }
        let mut half = 10.0 / (coarse - 1) as f64;
        for _ in 0..12 {
            let (ca, cb) = (la, lb);
            let fine = 11;
            for i in 0..fine {
                for j in 0..fine {
                    let a = (ca - half + 2.0 * half * i as f64 / (fine - 1) as f64).clamp(-5.0, 5.0);
                    let b = (cb - half + 2.0 * half * j as f64 / (fine - 1) as f64).clamp(-5.0, 5.0);
                    let v = self.at(10f64.powf(a), 10f64.powf(b));
                    if v > best {
                        (la, lb, best) = (a, b, v);
                    }
                }
            }
            half /= 4.0;
        }
        best
    }
}

/// Mean over one-vs-rest targets of the grid-maximized evidence.
pub fn logme_grid_oracle(table: &EmbeddingTable) -> f64 {
    let f = table.features_f64();
    let labels = table.class_indices().unwrap();
    let c = table.n_classes();
    (0..c)
        .map(|k| {
            let y = DVector::from_iterator(labels.len(), labels.iter().map(|&l| (l == k) as u8 as f64));
            DirectEvidence::new(&f, &y).grid_max()
        })
        .sum::<f64>()
        / c as f64
}

// ---------------------------------------------------------------- probe

/// Damped Newton's method on the probe objective with an explicitly
/// assembled Hessian.
pub fn newton_probe_loss(data: &ProbeData, lambda: f64) -> f64 {
    let (n, d) = data.features.shape();
    let c = data.n_classes;
    let p = c * (d + 1);
    let idx_w = |k: usize, j: usize| k * d + j;
    let idx_b = |k: usize| c * d + k;
    let objective = |theta: &DVector<f64>| -> (f64, DVector<f64>, DMatrix<f64>) {
        let mut loss = 0.0;
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        for i in 0..n {
            let x = data.features.row(i);
            let z: Vec<f64> = (0..c)
                .map(|k| theta[idx_b(k)] + (0..d).map(|j| theta[idx_w(k, j)] * x[j]).sum::<f64>())
                .collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let pr: Vec<f64> = z.iter().map(|v| (v - m).exp() / s).collect();
            loss += m + s.ln() - z[data.labels[i]];
            // feature vector extended with a constant for the bias
            let xe = |j: usize| if j < d { x[j] } else { 1.0 };
            let idx = |k: usize, j: usize| if j < d { idx_w(k, j) } else { idx_b(k) };
            for k in 0..c {
                let r = pr[k] - (k == data.labels[i]) as u8 as f64;
                for j in 0..=d {
                    g[idx(k, j)] += r * xe(j);
                }
                for l in 0..c {
                    let cov = pr[k] * ((k == l) as u8 as f64) - pr[k] * pr[l];
                    for j in 0..=d {
                        for jj in 0..=d {
                            h[(idx(k, j), idx(l, jj))] += cov * xe(j) * xe(jj);
                        }
                    }
                }
            }
        }
        loss /= n as f64;
        g /= n as f64;
        h /= n as f64;
        for k in 0..c {
            for j in 0..d {
                let q = idx_w(k, j);
                loss += 0.5 * lambda * theta[q] * theta[q];
                g[q] += lambda * theta[q];
                h[(q, q)] += lambda;
            }
        }
        (loss, g, h)
    };
    let mut theta = DVector::zeros(p);
    let (mut loss, mut g, mut h) = objective(&theta);
    for _ in 0..200 {
        // bias directions can be flat; a tiny ridge keeps the solve defined
        let hr = &h + DMatrix::identity(p, p) * 1e-12;
        let step = hr.lu().solve(&g).expect("hessian solve");
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            let (l, ng, nh) = objective(&cand);
            if l <= loss || t < 1e-12 {
                theta = cand;
                loss = l;
                g = ng;
                h = nh;
                break;
            }
            t *= 0.5;
        }
        if g.norm() < 1e-13 {
            break;
        }
    }
    loss
}

// ---------------------------------------------------------------- metrics

/// Pair counting: each (positive, negative) pair scores 1 for a win, 0.5 for a tie.
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Average precision by scanning every distinct threshold against the full
/// sample: precision and recall of the rule `score >= t`.
pub fn threshold_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = labels.iter().filter(|&&y| y).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let mut tp = 0.0;
        let mut predicted = 0.0;
        for (s, &y) in scores.iter().zip(labels) {
            if *s >= t {
                predicted += 1.0;
                if y {
                    tp += 1.0;
                }
            }
        }
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

/// Two-sided Student-t tail probability by Simpson quadrature of the
/// unnormalized density, mapping `[0, inf)` onto `[0, 1)` via `x = u / (1 - u)`.
pub fn t_two_sided_p_quadrature(t: f64, df: f64) -> f64 {
    let density = |x: f64| (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let mapped = |u: f64| {
        if u >= 1.0 {
            0.0
        } else {
            let x = u / (1.0 - u);
            density(x) / ((1.0 - u) * (1.0 - u))
        }
    };
    let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let u_t = t.abs() / (1.0 + t.abs());
    let total = simpson(&mapped, 0.0, 1.0, 200_000);
    let tail = simpson(&mapped, u_t, 1.0, 200_000);
    tail / total
}

/// Central finite differences of a scalar function.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max over coordinates of `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| dist.sample(rng)).collect()
}
