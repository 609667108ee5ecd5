//! Training loops for the hybrid scheme and its references: local gradient
//! computation, sample mixing, central-gradient estimation, the weighted
//! fusion rule, and a per-round engine that couples the learner to the
//! simulated radio. Includes a synthetic strongly-convex least-squares task
//! whose curvature constants are exact, so the gap theory can be validated
//! end to end, and a small dense classifier for the image experiments.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelRealization;
use crate::convergence::{decreasing_learning_rate, ConvergenceError, GapParams};
use crate::numerics::norm_sq as complex_norm_sq;
use crate::seeding;
use crate::transceiver::{
    min_sinr, normalization_stats, simulate_aggregation, sinr, DataCounts, TransceiverSolution,
};

/// Errors raised by the training components.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LearningError {
    #[error("gradient requested over an empty batch")]
    EmptyBatch,
    #[error("central gradient requested from an empty pool")]
    EmptyPool,
    #[error("mixing partners must carry different labels")]
    SameLabel,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// One supervised sample: feature vector and (possibly soft) label vector.
/// The synthetic quadratic task stores its per-sample center in `x` and
/// leaves `y` empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Where a gradient estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Device-side batch gradient.
    Local,
    /// Base-station gradient over uploaded samples.
    Central,
    /// Fused/over-the-air estimate driving the model update.
    Aggregated,
    /// Exact population gradient (available for the synthetic task).
    Ideal,
}

/// A gradient estimate with its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

/// Per-device round batches: `local[k]` are sample indices kept for local
/// gradient computation, `upload[k]` the indices mixed and uploaded. The two
/// lists are disjoint positions of the device's round draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundDataSplit {
    pub local: Vec<Vec<usize>>,
    pub upload: Vec<Vec<usize>>,
}

/// Training scheme being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Hybrid: over-the-air gradient aggregation plus sample upload.
    SemiFl,
    /// Hybrid with an ideal radio (exact aggregation, lossless delivery).
    SemiFlErrorFree,
    /// All drawn samples feed local gradients; no uploads.
    Fl,
    /// All drawn samples are uploaded; the base station computes the only
    /// gradient. Delivery is idealized, matching the reference analysis.
    Cl,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Mode::SemiFl => "semifl",
            Mode::SemiFlErrorFree => "semifl-error-free",
            Mode::Fl => "fl",
            Mode::Cl => "cl",
        };
        f.pad(name)
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "semifl" => Ok(Mode::SemiFl),
            "semifl-error-free" | "error-free" => Ok(Mode::SemiFlErrorFree),
            "fl" => Ok(Mode::Fl),
            "cl" => Ok(Mode::Cl),
            other => Err(format!(
                "unknown mode `{other}` (expected semifl, semifl-error-free, fl, or cl)"
            )),
        }
    }
}

/// How the base station draws the batch for its central gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClSampling {
    /// A fresh uniform batch of the configured size from the accumulated pool.
    PerRound,
    /// The entire accumulated pool (the growing-pool refinement).
    Accumulated,
}

/// Step-size policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSize {
    Fixed(f64),
    /// η_t = Λ/(t+τ).
    Decreasing { lambda: f64, tau: f64 },
}

impl StepSize {
    pub fn at(&self, round: u64) -> f64 {
        match *self {
            StepSize::Fixed(eta) => eta,
            StepSize::Decreasing { lambda, tau } => decreasing_learning_rate(lambda, tau, round),
        }
    }
}

/// How round batches are drawn from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitStrategy {
    /// One uniform without-replacement draw from the global corpus, assigned
    /// to devices in schedule order. This is the sampling model under which
    /// the without-replacement error bounds hold exactly, so theory runs use
    /// it.
    GlobalWithoutReplacement,
    /// Each device draws from its own shard with replacement (the image
    /// experiments' setting).
    ShardWithReplacement,
}

/// Sample-mixing configuration: symmetric Beta(α, α) mixing weight and the
/// Gaussian obfuscation noise applied to features and labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixupConfig {
    pub alpha: f64,
    pub noise_sigma: f64,
}

/// Uplink rate gate: a device's round uploads are delivered only when its
/// data-stream SINR meets the minimum implied by the payload size and frame
/// budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateGate {
    /// Payload bits per uploaded sample.
    pub m_bits: f64,
    /// Bandwidth in Hz.
    pub bandwidth: f64,
    /// Rate-gap factor in (0,1).
    pub b1: f64,
    /// SINR-gap factor ≥ 1.
    pub b2: f64,
    /// Frame duration in seconds.
    pub t_c: f64,
}

/// Full training-loop configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Per-device local/upload sample counts for every round.
    pub counts: DataCounts,
    pub step: StepSize,
    pub cl_sampling: ClSampling,
    /// `None` delivers raw samples (theory runs); `Some` mixes uploads.
    pub mixup: Option<MixupConfig>,
    pub split: SplitStrategy,
    /// `None` assumes delivery; `Some` gates uploads on the achieved SINR.
    pub gate: Option<RateGate>,
    /// Optional cap on the accumulated pool (a deterministic ring buffer
    /// overwriting the oldest entries); bounds memory on long image runs.
    pub pool_cap: Option<u64>,
    pub master_seed: u64,
}

/// Everything recorded about one round, measured at the pre-update model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based round index.
    pub round: u64,
    /// Population loss F(w_t) for the synthetic task; round-batch mean loss
    /// for the classifier.
    pub loss: f64,
    /// F(w_t) − F(w*), when the optimum is known exactly.
    pub gap: Option<f64>,
    /// ‖∇F(w_t)‖², when the population gradient is exact.
    pub grad_norm_sq: Option<f64>,
    /// ‖∇F − g_f‖²: local-pool sampling error (exact-gradient tasks).
    pub e1_sq: Option<f64>,
    /// ‖∇F − g_c‖²: central-pool sampling error (exact-gradient tasks).
    pub e2_sq: Option<f64>,
    /// ‖g_f − ĝ_f‖²: realized over-the-air aggregation error.
    pub e3_sq: Option<f64>,
    /// Exact conditional expectation of the aggregation error over receiver
    /// noise, for comparison against its closed-form bound.
    pub expected_e3_sq: Option<f64>,
    /// ‖∇F − ĝ‖² of the fused update direction (exact-gradient tasks).
    pub combined_error_sq: Option<f64>,
    /// ‖(ā₁(e₁+e₃) + ā₂e₂) − (∇F − ĝ)‖: residual of the error decomposition
    /// identity, which must vanish to numerical precision.
    pub decomposition_residual: Option<f64>,
    /// Step size used this round.
    pub eta: f64,
    /// Uploaded samples actually delivered this round.
    pub delivered_uploads: u64,
    /// Accumulated pool size after this round's deliveries.
    pub pool_size: u64,
}

// ---------------------------------------------------------------------------
// Synthetic strongly-convex task
// ---------------------------------------------------------------------------

/// Least-squares task f_n(w) = ½(w−c_n)ᵀH(w−c_n) with a shared dense Hessian
/// whose extremal eigenvalues are exactly the requested (μ, L). The optimum
/// w* = mean(c_n), the optimal value, and the curvature constants are all
/// closed-form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    pub hessian: Vec<Vec<f64>>,
    pub samples: Vec<Sample>,
    pub device_shards: Vec<Vec<usize>>,
    pub w_star: Vec<f64>,
    pub f_star: f64,
    pub mu: f64,
    pub l: f64,
    /// Unit eigenvector attaining μ.
    pub min_direction: Vec<f64>,
    /// Unit eigenvector attaining L.
    pub max_direction: Vec<f64>,
}

fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn real_norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn real_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl QuadraticTask {
    pub fn dimension(&self) -> usize {
        self.w_star.len()
    }

    pub fn sample_gradient(&self, w: &[f64], s: &Sample) -> Vec<f64> {
        mat_vec(&self.hessian, &sub(w, &s.x))
    }

    pub fn sample_loss(&self, w: &[f64], s: &Sample) -> f64 {
        let d = sub(w, &s.x);
        0.5 * real_dot(&d, &mat_vec(&self.hessian, &d))
    }

    /// Exact population gradient ∇F(w) = H(w − w*).
    pub fn population_gradient(&self, w: &[f64]) -> Vec<f64> {
        mat_vec(&self.hessian, &sub(w, &self.w_star))
    }

    /// Exact population loss F(w) = ½(w−w*)ᵀH(w−w*) + F(w*).
    pub fn population_loss(&self, w: &[f64]) -> f64 {
        let d = sub(w, &self.w_star);
        0.5 * real_dot(&d, &mat_vec(&self.hessian, &d)) + self.f_star
    }

    pub fn gap(&self, w: &[f64]) -> f64 {
        self.population_loss(w) - self.f_star
    }
}

/// Builds a [`QuadraticTask`]: eigenvalues linearly spaced on [μ, L], basis
/// rotated by a seeded sequence of plane rotations, per-sample centers drawn
/// standard normal, and samples sharded over `k` devices in contiguous
/// blocks.
pub fn make_quadratic_task(
    seed: u64,
    q: usize,
    k: usize,
    samples_per_device: usize,
    mu_target: f64,
    l_target: f64,
) -> QuadraticTask {
    assert!(q >= 1 && k >= 1 && samples_per_device >= 1, "positive task dimensions required");
    assert!(
        0.0 < mu_target && mu_target <= l_target,
        "curvature targets must satisfy 0 < mu <= L"
    );
    let mut rng = seeding::rng(seed, &[0x7A5C]);

    // Spectrum with exact endpoints.
    let eigs: Vec<f64> = if q == 1 {
        assert!(
            (l_target - mu_target).abs() <= f64::EPSILON * l_target,
            "a one-dimensional task cannot carry two distinct curvatures"
        );
        vec![l_target]
    } else {
        (0..q)
            .map(|i| mu_target + (l_target - mu_target) * i as f64 / (q - 1) as f64)
            .collect()
    };

    // Orthogonal basis from a sweep of random plane rotations applied to the
    // identity; rows of `rot` are the eigenvectors.
    let mut rot = vec![vec![0.0; q]; q];
    for (i, row) in rot.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..3 * q {
        if q < 2 {
            break;
        }
        let i = rng.gen_range(0..q - 1);
        let j = rng.gen_range(i + 1..q);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        for col in 0..q {
            let (ri, rj) = (rot[i][col], rot[j][col]);
            rot[i][col] = c * ri + s * rj;
            rot[j][col] = -s * ri + c * rj;
        }
    }
    let mut hessian = vec![vec![0.0; q]; q];
    for (i, eig) in eigs.iter().enumerate() {
        for a in 0..q {
            for b in 0..q {
                hessian[a][b] += eig * rot[i][a] * rot[i][b];
            }
        }
    }

    let n = k * samples_per_device;
    let samples: Vec<Sample> = (0..n)
        .map(|_| Sample {
            x: (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            y: Vec::new(),
        })
        .collect();
    let device_shards: Vec<Vec<usize>> = (0..k)
        .map(|d| (d * samples_per_device..(d + 1) * samples_per_device).collect())
        .collect();

    let mut w_star = vec![0.0; q];
    for s in &samples {
        for (acc, v) in w_star.iter_mut().zip(&s.x) {
            *acc += v / n as f64;
        }
    }
    let f_star = samples
        .iter()
        .map(|s| {
            let d = sub(&w_star, &s.x);
            0.5 * real_dot(&d, &mat_vec(&hessian, &d))
        })
        .sum::<f64>()
        / n as f64;

    QuadraticTask {
        hessian,
        samples,
        device_shards,
        w_star,
        f_star,
        mu: mu_target,
        l: l_target,
        min_direction: rot[0].clone(),
        max_direction: rot[q - 1].clone(),
    }
}

// ---------------------------------------------------------------------------
// Dense classifier
// ---------------------------------------------------------------------------

/// Fully-connected one-hidden-layer network with tanh activation and squared
/// error loss ½‖o − y‖². Parameters live in a flat vector laid out as
/// [W1 | b1 | W2 | b2] with row-major weight blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpClassifier {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpClassifier {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        assert!(input >= 1 && hidden >= 1 && output >= 1, "positive layer sizes required");
        Self { input, hidden, output }
    }

    pub fn param_count(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.output + self.output
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.input * self.hidden;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.hidden * self.output;
        (w1, b1, w2)
    }

    /// Seeded uniform initialization scaled per layer fan-in/out.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = seeding::rng(seed, &[0x311F]);
        let mut w = vec![0.0; self.param_count()];
        let (w1_end, b1_end, w2_end) = self.offsets();
        let s1 = (6.0 / (self.input + self.hidden) as f64).sqrt();
        for v in &mut w[..w1_end] {
            *v = rng.gen_range(-s1..s1);
        }
        let s2 = (6.0 / (self.hidden + self.output) as f64).sqrt();
        for v in &mut w[b1_end..w2_end] {
            *v = rng.gen_range(-s2..s2);
        }
        w
    }

    fn forward(&self, w: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(x.len(), self.input, "feature dimension mismatch");
        let (w1_end, b1_end, w2_end) = self.offsets();
        let mut hidden = vec![0.0; self.hidden];
        for (m, h) in hidden.iter_mut().enumerate() {
            let row = &w[m * self.input..(m + 1) * self.input];
            *h = (real_dot(row, x) + w[w1_end + m]).tanh();
        }
        let mut out = vec![0.0; self.output];
        for (j, o) in out.iter_mut().enumerate() {
            let row = &w[b1_end + j * self.hidden..b1_end + (j + 1) * self.hidden];
            *o = real_dot(row, &hidden) + w[w2_end + j];
        }
        (hidden, out)
    }

    pub fn sample_loss(&self, w: &[f64], s: &Sample) -> f64 {
        let (_, out) = self.forward(w, &s.x);
        0.5 * out.iter().zip(&s.y).map(|(o, y)| (o - y) * (o - y)).sum::<f64>()
    }

    /// Backpropagated gradient of the squared-error loss for one sample.
    pub fn sample_gradient(&self, w: &[f64], s: &Sample) -> Vec<f64> {
        assert_eq!(s.y.len(), self.output, "label dimension mismatch");
        let (w1_end, b1_end, w2_end) = self.offsets();
        let (hidden, out) = self.forward(w, &s.x);
        let delta_out: Vec<f64> = out.iter().zip(&s.y).map(|(o, y)| o - y).collect();
        let mut grad = vec![0.0; self.param_count()];
        // Output layer.
        for (j, d) in delta_out.iter().enumerate() {
            let row = &mut grad[b1_end + j * self.hidden..b1_end + (j + 1) * self.hidden];
            for (g, h) in row.iter_mut().zip(&hidden) {
                *g = d * h;
            }
            grad[w2_end + j] = *d;
        }
        // Hidden layer through the tanh derivative 1 − h².
        for m in 0..self.hidden {
            let mut back = 0.0;
            for (j, d) in delta_out.iter().enumerate() {
                back += d * w[b1_end + j * self.hidden + m];
            }
            let dz = back * (1.0 - hidden[m] * hidden[m]);
            let row = &mut grad[m * self.input..(m + 1) * self.input];
            for (g, xi) in row.iter_mut().zip(&s.x) {
                *g = dz * xi;
            }
            grad[w1_end + m] = dz;
        }
        grad
    }

    pub fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        let (_, out) = self.forward(w, x);
        argmax_label(&out).expect("at least one output")
    }

    /// Fraction of samples whose argmax output matches the argmax label.
    pub fn accuracy(&self, w: &[f64], samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let correct = samples
            .iter()
            .filter(|s| {
                let label = argmax_label(&s.y).expect("nonempty label");
                self.predict(w, &s.x) == label
            })
            .count();
        correct as f64 / samples.len() as f64
    }
}

// ---------------------------------------------------------------------------
// Task wrapper
// ---------------------------------------------------------------------------

/// The learning problem a trainer runs on.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Quadratic(QuadraticTask),
    Mlp { classifier: MlpClassifier, samples: Vec<Sample>, device_shards: Vec<Vec<usize>> },
}

impl Task {
    pub fn dimension(&self) -> usize {
        match self {
            Task::Quadratic(t) => t.dimension(),
            Task::Mlp { classifier, .. } => classifier.param_count(),
        }
    }

    pub fn samples(&self) -> &[Sample] {
        match self {
            Task::Quadratic(t) => &t.samples,
            Task::Mlp { samples, .. } => samples,
        }
    }

    pub fn device_shards(&self) -> &[Vec<usize>] {
        match self {
            Task::Quadratic(t) => &t.device_shards,
            Task::Mlp { device_shards, .. } => device_shards,
        }
    }

    pub fn sample_gradient(&self, w: &[f64], s: &Sample) -> Vec<f64> {
        match self {
            Task::Quadratic(t) => t.sample_gradient(w, s),
            Task::Mlp { classifier, .. } => classifier.sample_gradient(w, s),
        }
    }

    pub fn sample_loss(&self, w: &[f64], s: &Sample) -> f64 {
        match self {
            Task::Quadratic(t) => t.sample_loss(w, s),
            Task::Mlp { classifier, .. } => classifier.sample_loss(w, s),
        }
    }

    /// Exact population gradient when the task admits one.
    pub fn population_gradient(&self, w: &[f64]) -> Option<Vec<f64>> {
        match self {
            Task::Quadratic(t) => Some(t.population_gradient(w)),
            Task::Mlp { .. } => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Component operations
// ---------------------------------------------------------------------------

/// Mean gradient over the given sample batch.
pub fn batch_gradient(task: &Task, w: &[f64], batch: &[&Sample]) -> Result<Vec<f64>, LearningError> {
    if batch.is_empty() {
        return Err(LearningError::EmptyBatch);
    }
    let mut acc = vec![0.0; task.dimension()];
    for s in batch {
        let g = task.sample_gradient(w, s);
        for (a, v) in acc.iter_mut().zip(&g) {
            *a += v;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(acc)
}

/// Device-side batch gradient over the given sample indices.
pub fn local_gradient(
    task: &Task,
    w: &[f64],
    batch: &[usize],
) -> Result<GradientVector, LearningError> {
    let samples = task.samples();
    let refs: Vec<&Sample> = batch.iter().map(|&i| &samples[i]).collect();
    Ok(GradientVector { values: batch_gradient(task, w, &refs)?, provenance: Provenance::Local })
}

/// First-wins argmax over a finite vector.
fn argmax_label(y: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in y.iter().enumerate() {
        assert!(v.is_finite(), "labels and logits must be finite");
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Mixes two differently-labeled samples: x̄ = ϖx_a + (1−ϖ)x_b + n and
/// ȳ = ϖy_a + (1−ϖ)y_b + n′ with n, n′ iid Gaussian of standard deviation
/// `noise_sigma` on every entry (features and labels alike).
pub fn mixup(
    a: &Sample,
    b: &Sample,
    varpi: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Sample, LearningError> {
    assert!(varpi > 0.0 && varpi < 1.0, "mixing weight must lie strictly inside (0,1)");
    assert!(noise_sigma >= 0.0, "noise level must be nonnegative");
    if a.y.is_empty() || b.y.is_empty() || argmax_label(&a.y) == argmax_label(&b.y) {
        return Err(LearningError::SameLabel);
    }
    if a.x.len() != b.x.len() {
        return Err(LearningError::LengthMismatch { expected: a.x.len(), got: b.x.len() });
    }
    if a.y.len() != b.y.len() {
        return Err(LearningError::LengthMismatch { expected: a.y.len(), got: b.y.len() });
    }
    let mut rng = seeding::rng(seed, &[0x3D1C]);
    let mut blend = |u: &[f64], v: &[f64]| -> Vec<f64> {
        u.iter()
            .zip(v)
            .map(|(ua, vb)| {
                varpi * ua + (1.0 - varpi) * vb + noise_sigma * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    };
    let x = blend(&a.x, &b.x);
    let y = blend(&a.y, &b.y);
    Ok(Sample { x, y })
}

/// Base-station gradient over its accumulated pool: either a fresh uniform
/// without-replacement batch of `n_c` samples or the whole pool.
pub fn cl_gradient(
    task: &Task,
    w: &[f64],
    pool: &[Sample],
    n_c: usize,
    mode: ClSampling,
    seed: u64,
) -> Result<GradientVector, LearningError> {
    if pool.is_empty() {
        return Err(LearningError::EmptyPool);
    }
    let refs: Vec<&Sample> = match mode {
        ClSampling::Accumulated => pool.iter().collect(),
        ClSampling::PerRound => {
            let take = n_c.min(pool.len());
            let mut rng = seeding::rng(seed, &[0xC1_5E]);
            rand::seq::index::sample(&mut rng, pool.len(), take)
                .into_iter()
                .map(|i| &pool[i])
                .collect()
        }
    };
    Ok(GradientVector { values: batch_gradient(task, w, &refs)?, provenance: Provenance::Central })
}

/// Sample-count-weighted fusion of the aggregated local gradient and the
/// central gradient: ĝ = (N_f·ĝ_f + N_c·g_c)/(N_f+N_c).
pub fn combine(
    g_f_hat: &[f64],
    g_c: &[f64],
    n_f: u64,
    n_c: u64,
) -> Result<GradientVector, LearningError> {
    if g_f_hat.len() != g_c.len() {
        return Err(LearningError::LengthMismatch { expected: g_f_hat.len(), got: g_c.len() });
    }
    assert!(n_f + n_c > 0, "fusion requires at least one sample");
    let a1 = n_f as f64 / (n_f + n_c) as f64;
    let a2 = n_c as f64 / (n_f + n_c) as f64;
    let values = g_f_hat.iter().zip(g_c).map(|(f, c)| a1 * f + a2 * c).collect();
    Ok(GradientVector { values, provenance: Provenance::Aggregated })
}

/// Draws the per-device round batches under the configured strategy.
pub fn draw_split(
    task: &Task,
    counts: &DataCounts,
    strategy: SplitStrategy,
    seed: u64,
) -> RoundDataSplit {
    let devices = counts.devices();
    let mut rng = seeding::rng(seed, &[0x5B11]);
    let mut local = Vec::with_capacity(devices);
    let mut upload = Vec::with_capacity(devices);
    match strategy {
        SplitStrategy::GlobalWithoutReplacement => {
            let total: u64 = (0..devices).map(|k| counts.local[k] + counts.upload[k]).sum();
            let n = task.samples().len();
            assert!(
                total as usize <= n,
                "round draw of {total} exceeds the corpus size {n}"
            );
            let draw: Vec<usize> =
                rand::seq::index::sample(&mut rng, n, total as usize).into_iter().collect();
            let mut cursor = 0usize;
            for k in 0..devices {
                let nf = counts.local[k] as usize;
                let nc = counts.upload[k] as usize;
                local.push(draw[cursor..cursor + nf].to_vec());
                upload.push(draw[cursor + nf..cursor + nf + nc].to_vec());
                cursor += nf + nc;
            }
        }
        SplitStrategy::ShardWithReplacement => {
            let shards = task.device_shards();
            assert_eq!(shards.len(), devices, "one shard per device required");
            for k in 0..devices {
                let shard = &shards[k];
                assert!(!shard.is_empty(), "device {k} has an empty shard");
                let nf = counts.local[k] as usize;
                let nc = counts.upload[k] as usize;
                let draw: Vec<usize> =
                    (0..nf + nc).map(|_| shard[rng.gen_range(0..shard.len())]).collect();
                local.push(draw[..nf].to_vec());
                upload.push(draw[nf..].to_vec());
            }
        }
    }
    RoundDataSplit { local, upload }
}

/// Exact expectation over receiver noise of the realized aggregation error
/// ‖g_f − ĝ_f‖² under the simulated real-part channel model:
/// Σ_q (Σ_k w_k Re{1−p_kbᴴh_k}(g_{k,q}−ḡ))² + Q·σ̄²·σ²‖b‖²/2.
pub fn expected_aggregation_error_sq(
    local_gradients: &[Vec<f64>],
    solution: &TransceiverSolution,
    channel: &ChannelRealization,
    counts: &DataCounts,
) -> f64 {
    let stats = match normalization_stats(local_gradients) {
        Ok(s) => s,
        Err(_) => return 0.0,
    };
    if stats.is_degenerate() {
        return 0.0;
    }
    let b = &solution.beams.aggregation;
    let mis_re: Vec<f64> = (0..counts.devices())
        .map(|k| {
            let gain = solution.power.gradient[k] * crate::numerics::dot(b, &channel.h[k]);
            counts.weight(k) * (1.0 - gain.re)
        })
        .collect();
    let q_len = local_gradients[0].len();
    let mut deterministic = 0.0;
    for q in 0..q_len {
        let mut acc = 0.0;
        for (k, w_mis) in mis_re.iter().enumerate() {
            acc += w_mis * (local_gradients[k][q] - stats.global_mean);
        }
        deterministic += acc * acc;
    }
    deterministic
        + q_len as f64 * stats.global_var * channel.noise_power * complex_norm_sq(b) / 2.0
}

// ---------------------------------------------------------------------------
// Round engine
// ---------------------------------------------------------------------------

/// State-carrying training loop: owns the task, the model iterate, the
/// base-station sample pool, and the round counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub task: Task,
    pub config: TrainConfig,
    pub model: Vec<f64>,
    /// Completed rounds.
    pub round: u64,
    pool: Vec<Sample>,
    /// Lifetime count of delivered uploads (drives the ring overwrite when a
    /// pool cap is set).
    delivered_total: u64,
}

impl Trainer {
    pub fn new(task: Task, config: TrainConfig, initial_model: Vec<f64>) -> Self {
        assert_eq!(initial_model.len(), task.dimension(), "model/task dimension mismatch");
        assert_eq!(
            config.counts.devices(),
            task.device_shards().len(),
            "schedule and task must agree on the device count"
        );
        Self { task, config, model: initial_model, round: 0, pool: Vec::new(), delivered_total: 0 }
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    /// Append a delivered sample, honoring the optional pool cap by
    /// overwriting the oldest entries in delivery order.
    fn pool_insert(&mut self, sample: Sample) {
        match self.config.pool_cap {
            Some(cap) if self.pool.len() as u64 >= cap => {
                let slot = (self.delivered_total % cap) as usize;
                self.pool[slot] = sample;
            }
            _ => self.pool.push(sample),
        }
        self.delivered_total += 1;
    }

    /// Per-mode effective schedule: the federated reference moves every drawn
    /// sample into the local pools, the centralized reference uploads all.
    fn effective_counts(&self) -> DataCounts {
        let c = &self.config.counts;
        match self.config.mode {
            Mode::SemiFl | Mode::SemiFlErrorFree => c.clone(),
            Mode::Fl => DataCounts::new(
                c.local.iter().zip(&c.upload).map(|(a, b)| a + b).collect(),
                vec![0; c.devices()],
            ),
            Mode::Cl => DataCounts::new(
                vec![0; c.devices()],
                c.local.iter().zip(&c.upload).map(|(a, b)| a + b).collect(),
            ),
        }
    }

    /// Runs one round against the given channel/transceiver design and
    /// advances the model.
    pub fn run_round(
        &mut self,
        channel: &ChannelRealization,
        solution: &TransceiverSolution,
    ) -> Result<RoundMetrics, LearningError> {
        let t = self.round + 1;
        let master = self.config.master_seed;
        let counts = self.effective_counts();
        let devices = counts.devices();
        let dim = self.task.dimension();
        let w = self.model.clone();

        let split = draw_split(&self.task, &counts, self.config.split, seeding::mix(master, &[0x51, t]));

        // Device-side gradients (zeros for devices with no local samples —
        // their aggregation weight is zero).
        let has_local = counts.n_f() > 0;
        let mut locals: Vec<Vec<f64>> = Vec::with_capacity(devices);
        for k in 0..devices {
            if split.local[k].is_empty() {
                locals.push(vec![0.0; dim]);
            } else {
                locals.push(local_gradient(&self.task, &w, &split.local[k])?.values);
            }
        }
        let g_f: Option<Vec<f64>> = has_local.then(|| {
            let mut acc = vec![0.0; dim];
            for k in 0..devices {
                let wk = counts.weight(k);
                for (a, v) in acc.iter_mut().zip(&locals[k]) {
                    *a += wk * v;
                }
            }
            acc
        });

        // Over-the-air aggregation (or its ideal counterpart).
        let mut e3_sq = None;
        let mut expected_e3 = None;
        let g_f_hat: Option<Vec<f64>> = match (&g_f, self.config.mode) {
            (None, _) => None,
            (Some(ideal), Mode::SemiFlErrorFree) => Some(ideal.clone()),
            (Some(ideal), _) => {
                let stats = match normalization_stats(&locals) {
                    Ok(s) => s,
                    Err(_) => {
                        // A zero-dimensional pathology; treat as ideal.
                        e3_sq = Some(0.0);
                        expected_e3 = Some(0.0);
                        return self.finish_round(
                            t, &w, &counts, &split, g_f.clone(), g_f.clone(), e3_sq, expected_e3,
                            channel, solution,
                        );
                    }
                };
                let hat = if stats.is_degenerate() {
                    // Nothing to transmit: every device holds the same value,
                    // which the receiver reconstructs exactly.
                    ideal.clone()
                } else {
                    simulate_aggregation(
                        &locals,
                        &stats,
                        &solution.power,
                        &solution.beams,
                        channel,
                        &counts,
                        seeding::mix(master, &[0x54, t]),
                    )
                };
                e3_sq = Some(real_norm_sq(&sub(ideal, &hat)));
                expected_e3 =
                    Some(expected_aggregation_error_sq(&locals, solution, channel, &counts));
                Some(hat)
            }
        };
        self.finish_round(t, &w, &counts, &split, g_f, g_f_hat, e3_sq, expected_e3, channel, solution)
    }

    /// Upload delivery, central gradient, fusion, and the model update.
    #[allow(clippy::too_many_arguments)]
    fn finish_round(
        &mut self,
        t: u64,
        w: &[f64],
        counts: &DataCounts,
        split: &RoundDataSplit,
        g_f: Option<Vec<f64>>,
        g_f_hat: Option<Vec<f64>>,
        e3_sq: Option<f64>,
        expected_e3: Option<f64>,
        channel: &ChannelRealization,
        solution: &TransceiverSolution,
    ) -> Result<RoundMetrics, LearningError> {
        let master = self.config.master_seed;
        let devices = counts.devices();
        let samples = self.task.samples().to_vec();
        let mut delivered = 0u64;

        for k in 0..devices {
            if split.upload[k].is_empty() {
                continue;
            }
            // Rate gate: the whole upload of a device is lost when its link
            // cannot carry the payload within the frame.
            let passes = match (self.config.mode, &self.config.gate) {
                (Mode::SemiFlErrorFree | Mode::Cl, _) | (_, None) => true,
                (_, Some(gate)) => {
                    let needed = min_sinr(
                        gate.m_bits,
                        counts.upload[k],
                        gate.bandwidth,
                        gate.b1,
                        gate.b2,
                        gate.t_c,
                    );
                    sinr(k, &solution.power, &solution.beams, channel, counts) + 1e-12 >= needed
                }
            };
            if !passes {
                continue;
            }
            let batch: Vec<usize> =
                split.local[k].iter().chain(&split.upload[k]).copied().collect();
            for (slot, &idx) in split.upload[k].iter().enumerate() {
                let raw = &samples[idx];
                let mixed = match self.config.mixup {
                    None => raw.clone(),
                    Some(m) => {
                        let mut rng = seeding::rng(
                            master,
                            &[0x52, t, k as u64, slot as u64],
                        );
                        let partners: Vec<usize> = batch
                            .iter()
                            .copied()
                            .filter(|&j| {
                                j != idx
                                    && !samples[j].y.is_empty()
                                    && argmax_label(&samples[j].y) != argmax_label(&raw.y)
                            })
                            .collect();
                        match partners.choose(&mut rng) {
                            None => raw.clone(),
                            Some(&p) => {
                                let beta =
                                    Beta::new(m.alpha, m.alpha).expect("positive mixing shape");
                                let varpi: f64 =
                                    beta.sample(&mut rng).clamp(1e-9, 1.0 - 1e-9);
                                mixup(
                                    raw,
                                    &samples[p],
                                    varpi,
                                    m.noise_sigma,
                                    seeding::mix(master, &[0x52F, t, k as u64, slot as u64]),
                                )?
                            }
                        }
                    }
                };
                self.pool_insert(mixed);
                delivered += 1;
            }
        }

        // Central gradient over the accumulated pool.
        let n_c = counts.n_c();
        let (g_c, n_c_effective): (Option<Vec<f64>>, u64) = if self.pool.is_empty() {
            (None, 0)
        } else {
            match self.config.mode {
                Mode::Fl => (None, 0),
                Mode::Cl => {
                    let batch = (counts.n_f() + counts.n_c()) as usize;
                    let g = cl_gradient(
                        &self.task,
                        w,
                        &self.pool,
                        batch,
                        ClSampling::PerRound,
                        seeding::mix(master, &[0x53, t]),
                    )?;
                    (Some(g.values), n_c)
                }
                Mode::SemiFl | Mode::SemiFlErrorFree => {
                    if n_c == 0 {
                        (None, 0)
                    } else {
                        let g = cl_gradient(
                            &self.task,
                            w,
                            &self.pool,
                            n_c as usize,
                            self.config.cl_sampling,
                            seeding::mix(master, &[0x53, t]),
                        )?;
                        let effective = match self.config.cl_sampling {
                            ClSampling::PerRound => n_c.min(self.pool.len() as u64),
                            ClSampling::Accumulated => self.pool.len() as u64,
                        };
                        (Some(g.values), effective)
                    }
                }
            }
        };

        // Fusion.
        let n_f = counts.n_f();
        let update: Vec<f64> = match (&g_f_hat, &g_c) {
            (Some(f), None) => f.clone(),
            (None, Some(c)) => c.clone(),
            (Some(f), Some(c)) => combine(f, c, n_f, n_c_effective)?.values,
            (None, None) => return Err(LearningError::EmptyBatch),
        };

        // Metrics at the pre-update iterate.
        let ideal = self.task.population_gradient(w);
        let (loss, gap) = match &self.task {
            Task::Quadratic(q) => {
                let l = q.population_loss(w);
                (l, Some(l - q.f_star))
            }
            Task::Mlp { .. } => {
                let mut acc = 0.0;
                let mut count = 0usize;
                for k in 0..devices {
                    for &i in split.local[k].iter().chain(&split.upload[k]) {
                        acc += self.task.sample_loss(w, &samples[i]);
                        count += 1;
                    }
                }
                (if count > 0 { acc / count as f64 } else { 0.0 }, None)
            }
        };
        let mut e1_sq = None;
        let mut e2_sq = None;
        let mut combined_error_sq = None;
        let mut decomposition_residual = None;
        let mut grad_norm_sq = None;
        if let Some(ideal) = &ideal {
            grad_norm_sq = Some(real_norm_sq(ideal));
            let e1 = g_f.as_ref().map(|f| sub(ideal, f));
            let e2 = g_c.as_ref().map(|c| sub(ideal, c));
            e1_sq = e1.as_ref().map(|v| real_norm_sq(v));
            e2_sq = e2.as_ref().map(|v| real_norm_sq(v));
            combined_error_sq = Some(real_norm_sq(&sub(ideal, &update)));
            // ∇F − ĝ must equal ā₁(e₁+e₃) + ā₂e₂ with the fusion weights
            // actually used (ā weights degenerate to 1/0 when a part is
            // absent).
            let denom = match (&g_f_hat, &g_c) {
                (Some(_), Some(_)) => (n_f + n_c_effective) as f64,
                _ => 0.0,
            };
            let (a1, a2) = match (&g_f_hat, &g_c) {
                (Some(_), Some(_)) => (n_f as f64 / denom, n_c_effective as f64 / denom),
                (Some(_), None) => (1.0, 0.0),
                (None, Some(_)) => (0.0, 1.0),
                (None, None) => (0.0, 0.0),
            };
            let mut recon = vec![0.0; ideal.len()];
            if let (Some(e1), Some(f), Some(fh)) = (&e1, &g_f, &g_f_hat) {
                let e3 = sub(f, fh);
                for i in 0..recon.len() {
                    recon[i] += a1 * (e1[i] + e3[i]);
                }
            }
            if let Some(e2) = &e2 {
                for i in 0..recon.len() {
                    recon[i] += a2 * e2[i];
                }
            }
            let direct = sub(ideal, &update);
            decomposition_residual = Some(real_norm_sq(&sub(&recon, &direct)).sqrt());
        }

        let eta = self.config.step.at(t);
        for (wi, gi) in self.model.iter_mut().zip(&update) {
            *wi -= eta * gi;
        }
        self.round = t;

        Ok(RoundMetrics {
            round: t,
            loss,
            gap,
            grad_norm_sq,
            e1_sq,
            e2_sq,
            e3_sq,
            expected_e3_sq: expected_e3,
            combined_error_sq,
            decomposition_residual,
            eta,
            delivered_uploads: delivered,
            pool_size: self.pool.len() as u64,
        })
    }
}

// ---------------------------------------------------------------------------
// Theory-constant calibration
// ---------------------------------------------------------------------------

/// Derives the gap-theory constants for a quadratic-task run by a pilot pass
/// over the exact trajectory the measured run will take (identical seeds):
/// ξ₂ is the midpoint of its admissible range, ξ₁ the maximum over all
/// samples and visited iterates of ‖g_n(w)‖² − ξ₂‖∇F(w)‖², and G² is 1.5×
/// the largest per-device local gradient norm seen. Returns the parameter
/// record together with the initial optimality gap.
pub fn calibrate_gap_params(
    task: &QuadraticTask,
    config: &TrainConfig,
    channel: &ChannelRealization,
    solution: &TransceiverSolution,
    rounds: u64,
    initial_model: &[f64],
) -> Result<(GapParams, f64), ConvergenceError> {
    let n = task.samples.len() as u64;
    let counts = &config.counts;
    let (_, hi) = crate::convergence::xi2_range(n, counts.n_f(), counts.n_c());
    let xi2 = if hi.is_finite() { hi / 2.0 } else { 1.0 };

    let mut pilot = Trainer::new(
        Task::Quadratic(task.clone()),
        config.clone(),
        initial_model.to_vec(),
    );
    let mut xi1: f64 = 0.0;
    let mut g2_max: f64 = 0.0;
    for _ in 0..rounds {
        let w = pilot.model.clone();
        let grad = task.population_gradient(&w);
        let grad_sq = real_norm_sq(&grad);
        for s in &task.samples {
            let g = task.sample_gradient(&w, s);
            xi1 = xi1.max(real_norm_sq(&g) - xi2 * grad_sq);
        }
        // Per-device local gradients of this round bound G².
        let counts_eff = pilot.effective_counts();
        let split = draw_split(
            &pilot.task,
            &counts_eff,
            config.split,
            seeding::mix(config.master_seed, &[0x51, pilot.round + 1]),
        );
        for batch in &split.local {
            if batch.is_empty() {
                continue;
            }
            let g = local_gradient(&pilot.task, &w, batch)
                .expect("nonempty batch")
                .values;
            g2_max = g2_max.max(real_norm_sq(&g));
        }
        pilot.run_round(channel, solution).expect("pilot round");
    }
    let initial_gap = task.gap(initial_model);
    let params = GapParams::new(task.mu, task.l, xi1.max(0.0), xi2, 1.5 * g2_max, n, counts.clone())?;
    Ok((params, initial_gap))
}
