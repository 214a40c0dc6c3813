//! Desk-scale student-teacher self-distillation.
//!
//! The encoder is a two-layer tanh perceptron followed by a linear prototype
//! head. The teacher is an exponential moving average of the student; teacher
//! logits are centered with a running mean and sharpened with a low
//! temperature before serving as targets for the student's cross-entropy.
//! Local views are coordinate-dropout copies of the input, the 1-D analogue
//! of small crops.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSL1";

#[derive(Debug, Error, PartialEq)]
pub enum SslError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("empty batch")]
    EmptyBatch,
    #[error("sample has {got} coordinates, encoder expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub n_prototypes: usize,
    pub tau_student: f64,
    pub tau_teacher: f64,
    pub ema_momentum: f64,
    pub center_momentum: f64,
    pub n_global_views: usize,
    pub n_local_views: usize,
    pub local_keep_fraction: f64,
    pub noise_sd: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            input_dim: 16,
            hidden_dim: 32,
            embed_dim: 16,
            n_prototypes: 8,
            tau_student: 0.1,
            tau_teacher: 0.04,
            ema_momentum: 0.996,
            center_momentum: 0.9,
            n_global_views: 2,
            n_local_views: 4,
            local_keep_fraction: 0.3,
            noise_sd: 0.05,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<(), SslError> {
        let bad = |m: &str| Err(SslError::Config(m.into()));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 || self.n_prototypes == 0 {
            return bad("layer sizes must be positive");
        }
        if !(self.tau_student > 0.0 && self.tau_teacher > 0.0) {
            return bad("temperatures must be positive");
        }
        if self.tau_teacher >= self.tau_student {
            return bad("tau_teacher must be below tau_student");
        }
        for m in [self.ema_momentum, self.center_momentum] {
            if !(0.0..=1.0).contains(&m) {
                return bad("momenta must lie in [0, 1]");
            }
        }
        if self.n_global_views == 0 {
            return bad("need at least one global view");
        }
        if !(self.local_keep_fraction > 0.0 && self.local_keep_fraction <= 1.0) {
            return bad("local_keep_fraction must lie in (0, 1]");
        }
        if !(self.noise_sd >= 0.0 && self.learning_rate >= 0.0) {
            return bad("noise_sd and learning_rate must be non-negative");
        }
        Ok(())
    }

    pub fn shapes(&self) -> Shapes {
        Shapes {
            input: self.input_dim,
            hidden: self.hidden_dim,
            embed: self.embed_dim,
            k: self.n_prototypes,
        }
    }

    /// Coordinates a local view keeps: `ceil(keep_fraction * input_dim)`.
    pub fn local_keep_count(&self) -> usize {
        let raw = self.local_keep_fraction * self.input_dim as f64;
        ((raw - 1e-9).ceil() as usize).clamp(1, self.input_dim)
    }
}

/// Layer sizes; parameters are laid out flat as `W1 b1 W2 b2 W3 b3`, weights
/// row-major with one row per output unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shapes {
    pub input: usize,
    pub hidden: usize,
    pub embed: usize,
    pub k: usize,
}

impl Shapes {
    /// Start of W1, b1, W2, b2, W3, b3 in the flat parameter vector.
    pub fn offsets(&self) -> [usize; 6] {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.embed * self.hidden;
        let w3 = b2 + self.embed;
        let b3 = w3 + self.k * self.embed;
        [w1, b1, w2, b2, w3, b3]
    }

    pub fn n_params(&self) -> usize {
        self.offsets()[5] + self.k
    }
}

struct Activations {
    hidden: Vec<f64>,
    embed: Vec<f64>,
    logits: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, &bias)| bias + w[o * x.len()..(o + 1) * x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

fn forward(params: &[f64], s: Shapes, x: &[f64]) -> Activations {
    let [w1, b1, w2, b2, w3, b3] = s.offsets();
    let hidden: Vec<f64> = affine(&params[w1..b1], &params[b1..w2], x)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let embed = affine(&params[w2..b2], &params[b2..w3], &hidden);
    let logits = affine(&params[w3..b3], &params[b3..b3 + s.k], &embed);
    Activations { hidden, embed, logits }
}

/// Accumulates d(loss)/d(params) given d(loss)/d(logits).
fn backward(params: &[f64], s: Shapes, x: &[f64], act: &Activations, dlogits: &[f64], grad: &mut [f64]) {
    let [w1, b1, w2, b2, w3, b3] = s.offsets();
    let mut dembed = vec![0.0; s.embed];
    for o in 0..s.k {
        let g = dlogits[o];
        grad[b3 + o] += g;
        for j in 0..s.embed {
            grad[w3 + o * s.embed + j] += g * act.embed[j];
            dembed[j] += g * params[w3 + o * s.embed + j];
        }
    }
    let mut dhidden = vec![0.0; s.hidden];
    for o in 0..s.embed {
        let g = dembed[o];
        grad[b2 + o] += g;
        for j in 0..s.hidden {
            grad[w2 + o * s.hidden + j] += g * act.hidden[j];
            dhidden[j] += g * params[w2 + o * s.hidden + j];
        }
    }
    for o in 0..s.hidden {
        let g = dhidden[o] * (1.0 - act.hidden[o] * act.hidden[o]);
        grad[b1 + o] += g;
        for j in 0..s.input {
            grad[w1 + o * s.input + j] += g * x[j];
        }
    }
}

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| ((v - m) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|v| v / temperature).collect();
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scaled.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    scaled.into_iter().map(|v| v - lse).collect()
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Cross-entropy `-sum p log q` with `q = softmax(student_logits / tau)`.
pub fn cross_entropy(p: &[f64], student_logits: &[f64], tau: f64) -> f64 {
    -p.iter().zip(log_softmax(student_logits, tau)).map(|(a, b)| a * b).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslState {
    pub shapes: Shapes,
    pub student: Vec<f64>,
    pub teacher: Vec<f64>,
    pub center: Vec<f64>,
    pub step: u64,
}

impl SslState {
    /// Student weights drawn from `N(0, 1/fan_in)`, biases zero; the teacher
    /// starts as an exact copy and the center at zero.
    pub fn init(config: &SslConfig) -> Result<Self, SslError> {
        config.validate()?;
        let s = config.shapes();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut student = vec![0.0; s.n_params()];
        let [w1, b1, w2, b2, w3, b3] = s.offsets();
        for (range, fan_in) in [(w1..b1, s.input), (w2..b2, s.hidden), (w3..b3, s.embed)] {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).unwrap();
            for v in &mut student[range] {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(SslState {
            shapes: s,
            teacher: student.clone(),
            student,
            center: vec![0.0; s.k],
            step: 0,
        })
    }

    pub fn teacher_logits(&self, x: &[f64]) -> Vec<f64> {
        forward(&self.teacher, self.shapes, x).logits
    }

    pub fn student_logits(&self, x: &[f64]) -> Vec<f64> {
        forward(&self.student, self.shapes, x).logits
    }

    /// Centered, sharpened teacher distribution for one input.
    pub fn teacher_probs(&self, x: &[f64], tau_teacher: f64) -> Vec<f64> {
        let centered: Vec<f64> = self
            .teacher_logits(x)
            .iter()
            .zip(&self.center)
            .map(|(l, c)| l - c)
            .collect();
        softmax(&centered, tau_teacher)
    }
}

/// Augmented copies of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Views {
    pub global: Vec<Vec<f64>>,
    pub local: Vec<Vec<f64>>,
}

/// Global views add Gaussian noise to the full vector. Local views keep a
/// random `ceil(keep_fraction * dim)` coordinates, zero the rest, and add
/// noise to the kept ones.
pub fn make_views(sample_vec: &[f64], config: &SslConfig, rng: &mut ChaCha8Rng) -> Views {
    let noise = Normal::new(0.0, config.noise_sd.max(0.0)).unwrap();
    let jitter = |v: &mut f64, rng: &mut ChaCha8Rng| {
        if config.noise_sd > 0.0 {
            *v += noise.sample(rng);
        }
    };
    let mut global = Vec::with_capacity(config.n_global_views);
    for _ in 0..config.n_global_views {
        let mut v = sample_vec.to_vec();
        for x in &mut v {
            jitter(x, rng);
        }
        global.push(v);
    }
    let keep = config.local_keep_count().min(sample_vec.len());
    let mut local = Vec::with_capacity(config.n_local_views);
    for _ in 0..config.n_local_views {
        let mut kept = sample(rng, sample_vec.len(), keep).into_vec();
        kept.sort_unstable();
        let mut v = vec![0.0; sample_vec.len()];
        for i in kept {
            v[i] = sample_vec[i];
            jitter(&mut v[i], rng);
        }
        local.push(v);
    }
    Views { global, local }
}

/// Loss, student gradient, and the teacher logits of every global view
/// (batch order, then view order).
pub struct LossOutput {
    pub loss: f64,
    pub student_gradient: Vec<f64>,
    pub teacher_global_logits: Vec<Vec<f64>>,
}

/// Mean cross-entropy over ordered pairs (teacher global view `i`, student
/// view `j`), skipping `j == i`. Teacher outputs are constants.
pub fn dino_forward(state: &SslState, batch: &[Views], config: &SslConfig) -> Result<LossOutput, SslError> {
    if batch.is_empty() {
        return Err(SslError::EmptyBatch);
    }
    let s = state.shapes;
    let mut grad = vec![0.0; s.n_params()];
    let mut teacher_global_logits = Vec::new();
    let mut total = 0.0;
    let mut pairs = 0usize;
    let mut pending = Vec::new();
    for views in batch {
        for v in views.global.iter().chain(&views.local) {
            if v.len() != s.input {
                return Err(SslError::InputWidth {
                    expected: s.input,
                    got: v.len(),
                });
            }
        }
        let targets: Vec<Vec<f64>> = views
            .global
            .iter()
            .map(|x| {
                let t = state.teacher_logits(x);
                let centered: Vec<f64> = t.iter().zip(&state.center).map(|(l, c)| l - c).collect();
                teacher_global_logits.push(t);
                softmax(&centered, config.tau_teacher)
            })
            .collect();
        let n_global = views.global.len();
        for (j, x) in views.global.iter().chain(&views.local).enumerate() {
            let act = forward(&state.student, s, x);
            if act.logits.iter().any(|v| !v.is_finite()) {
                return Err(SslError::NonFiniteLogits);
            }
            let q = softmax(&act.logits, config.tau_student);
            let mut dlogits = vec![0.0; s.k];
            for (i, p) in targets.iter().enumerate() {
                if j < n_global && i == j {
                    continue;
                }
                total += cross_entropy(p, &act.logits, config.tau_student);
                pairs += 1;
                for k in 0..s.k {
                    dlogits[k] += (q[k] - p[k]) / config.tau_student;
                }
            }
            pending.push((x, act, dlogits));
        }
    }
    if teacher_global_logits.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SslError::NonFiniteLogits);
    }
    if pairs == 0 {
        return Err(SslError::Config("no (teacher, student) view pairs".into()));
    }
    let scale = 1.0 / pairs as f64;
    for (x, act, mut dlogits) in pending {
        dlogits.iter_mut().for_each(|g| *g *= scale);
        backward(&state.student, s, x, &act, &dlogits, &mut grad);
    }
    Ok(LossOutput {
        loss: total * scale,
        student_gradient: grad,
        teacher_global_logits,
    })
}

pub fn dino_loss(state: &SslState, batch: &[Views], config: &SslConfig) -> Result<(f64, Vec<f64>), SslError> {
    let out = dino_forward(state, batch, config)?;
    Ok((out.loss, out.student_gradient))
}

/// `teacher <- m * teacher + (1 - m) * student`.
pub fn ema_update(state: &SslState, m: f64) -> SslState {
    let mut next = state.clone();
    ema_in_place(&mut next.teacher, &state.student, m);
    next
}

fn ema_in_place(teacher: &mut [f64], student: &[f64], m: f64) {
    for (t, s) in teacher.iter_mut().zip(student) {
        *t = m * *t + (1.0 - m) * s;
    }
}

/// `center <- rho * center + (1 - rho) * mean(rows)`.
pub fn center_update(center: &[f64], teacher_logits: &[Vec<f64>], rho: f64) -> Vec<f64> {
    let n = teacher_logits.len().max(1) as f64;
    center
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let mean = teacher_logits.iter().map(|r| r[k]).sum::<f64>() / n;
            rho * c + (1.0 - rho) * mean
        })
        .collect()
}

/// Per-sample view stream, a function of `(seed, step, index)` only.
pub fn view_rng(seed: u64, step: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng.set_word_pos(index as u128 * (1u128 << 40));
    rng
}

/// One optimization step: views, loss and gradient, student SGD update,
/// teacher EMA, center update from this step's teacher global logits.
pub fn train_step(state: &SslState, batch: &[Vec<f64>], config: &SslConfig) -> Result<(SslState, f64), SslError> {
    if batch.is_empty() {
        return Err(SslError::EmptyBatch);
    }
    let views: Vec<Views> = batch
        .iter()
        .enumerate()
        .map(|(i, x)| make_views(x, config, &mut view_rng(config.seed, state.step, i)))
        .collect();
    let out = dino_forward(state, &views, config)?;
    let mut next = state.clone();
    for (p, g) in next.student.iter_mut().zip(&out.student_gradient) {
        *p -= config.learning_rate * g;
    }
    ema_in_place(&mut next.teacher, &next.student, config.ema_momentum);
    next.center = center_update(&state.center, &out.teacher_global_logits, config.center_momentum);
    next.step += 1;
    Ok((next, out.loss))
}

/// Entropy of the batch-mean centered, sharpened teacher distribution on
/// clean inputs. Values near zero indicate collapse onto one prototype.
pub fn collapse_entropy(state: &SslState, probe_batch: &[Vec<f64>], config: &SslConfig) -> f64 {
    let mut mean = vec![0.0; state.shapes.k];
    for x in probe_batch {
        for (m, p) in mean.iter_mut().zip(state.teacher_probs(x, config.tau_teacher)) {
            *m += p;
        }
    }
    let n = probe_batch.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    entropy(&mean)
}

/// Fixed training set: `n` samples around `n_clusters` random unit-scale
/// cluster centers.
pub fn synthetic_batch(input_dim: usize, n: usize, n_clusters: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let centers: Vec<Vec<f64>> = (0..n_clusters.max(1))
        .map(|_| (0..input_dim).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    (0..n)
        .map(|i| {
            centers[i % centers.len()]
                .iter()
                .map(|c| c + spread * unit.sample(&mut rng))
                .collect()
        })
        .collect()
}

/// SSL1 checkpoint: magic, four `u32` layer sizes, `u64` step, `u32`
/// parameter count, then student, teacher and center as little-endian `f32`.
pub fn encode_checkpoint(state: &SslState) -> Vec<u8> {
    let s = state.shapes;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [s.input, s.hidden, s.embed, s.k] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&state.step.to_le_bytes());
    buf.extend_from_slice(&(s.n_params() as u32).to_le_bytes());
    for v in state.student.iter().chain(&state.teacher).chain(&state.center) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<SslState, SslError> {
    let err = |m: &str| SslError::Checkpoint(m.into());
    if buf.len() < 32 || &buf[..4] != CHECKPOINT_MAGIC {
        return Err(err("bad magic or short header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    let shapes = Shapes {
        input: u32_at(4),
        hidden: u32_at(8),
        embed: u32_at(12),
        k: u32_at(16),
    };
    let step = u64::from_le_bytes(buf[20..28].try_into().unwrap());
    let p = u32_at(28);
    if p != shapes.n_params() {
        return Err(err("parameter count does not match layer sizes"));
    }
    if buf.len() != 32 + 4 * (2 * p + shapes.k) {
        return Err(err("payload size mismatch"));
    }
    let vals: Vec<f64> = buf[32..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(SslState {
        shapes,
        student: vals[..p].to_vec(),
        teacher: vals[p..2 * p].to_vec(),
        center: vals[2 * p..].to_vec(),
        step,
    })
}
