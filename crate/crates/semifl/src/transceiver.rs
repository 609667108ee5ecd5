//! Joint gradient-aggregation / data-upload signal model.
//!
//! Devices normalize local gradients by globally pooled statistics, scale
//! them by their sample-count weights and transmit them simultaneously with
//! the data-sample streams over the same uplink resource.  This module
//! provides the model's measurable quantities — normalization statistics,
//! per-device SINR, aggregation mean-square error, the minimum SINR implied
//! by the round latency budget — and a seeded simulation of the
//! de-normalized over-the-air aggregate.

use crate::channel::ChannelRealization;
use crate::numerics::{dot, norm_sq, C64};
use crate::seeding;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TransceiverError {
    #[error("pooled gradient variance {variance:.3e} is below the degenerate floor")]
    DegenerateVariance { variance: f64 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Normalized gradient entries fall back to zero when the pooled variance is
/// degenerate (σ̄ at or below this floor): a constant gradient is fully
/// described by its mean.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Per-device sample counts for one round: `local[k]` samples feed the local
/// gradient (aggregated over the air), `upload[k]` samples are uploaded for
/// centralized learning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataCounts {
    pub local: Vec<u64>,
    pub upload: Vec<u64>,
}

impl DataCounts {
    pub fn new(local: Vec<u64>, upload: Vec<u64>) -> Self {
        assert_eq!(local.len(), upload.len(), "per-device count lists must align");
        assert!(!local.is_empty(), "at least one device required");
        Self { local, upload }
    }

    /// Equal counts across `k` devices.
    pub fn uniform(k: usize, local: u64, upload: u64) -> Self {
        Self::new(vec![local; k], vec![upload; k])
    }

    pub fn devices(&self) -> usize {
        self.local.len()
    }

    /// N_f — total local-gradient samples this round.
    pub fn n_f(&self) -> u64 {
        self.local.iter().sum()
    }

    /// N_c — total uploaded samples this round.
    pub fn n_c(&self) -> u64 {
        self.upload.iter().sum()
    }

    /// w_k = N_f,k / N_f, the aggregation weight of device k.
    pub fn weight(&self, k: usize) -> f64 {
        self.local[k] as f64 / self.n_f() as f64
    }

    /// ι = Σ_k (N_f,k/N_f)² — the zero-beamformer aggregation error.
    pub fn iota(&self) -> f64 {
        (0..self.devices()).map(|k| self.weight(k).powi(2)).sum()
    }

    /// (a₁, a₂): fusion weights of the aggregated gradient and the
    /// centrally computed gradient, proportional to their sample counts.
    pub fn fusion_weights(&self) -> (f64, f64) {
        let nf = self.n_f() as f64;
        let nc = self.n_c() as f64;
        (nf / (nf + nc), nc / (nf + nc))
    }
}

/// Transmit power coefficients: `gradient[k]` scales the gradient stream,
/// `data[k]` the sample stream of device k.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub gradient: Vec<C64>,
    pub data: Vec<C64>,
}

impl PowerAllocation {
    pub fn zeros(k: usize) -> Self {
        Self { gradient: vec![C64::new(0.0, 0.0); k], data: vec![C64::new(0.0, 0.0); k] }
    }

    /// Per-device consumed power (N_f,k²/N_f²)|p_f,k|² + |p_c,k|².
    pub fn consumed(&self, counts: &DataCounts, k: usize) -> f64 {
        let w = counts.weight(k);
        w * w * self.gradient[k].norm_sqr() + self.data[k].norm_sqr()
    }

    /// True when every device respects the power budget (1e-9 slack).
    pub fn within_budget(&self, counts: &DataCounts, p_max: f64) -> bool {
        (0..counts.devices()).all(|k| self.consumed(counts, k) <= p_max + 1e-9)
    }
}

/// Receive-side beamformers: one aggregation vector `b`, one decoding
/// combiner `f[k]` per device.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformers {
    pub aggregation: Vec<C64>,
    pub decoding: Vec<Vec<C64>>,
}

/// Pooled first/second-moment statistics used for gradient normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub global_mean: f64,
    pub global_var: f64,
}

impl NormalizationStats {
    pub fn is_degenerate(&self) -> bool {
        self.global_var.sqrt() <= SIGMA_FLOOR
    }
}

/// Full transceiver design for one round plus its measured feasibility.
#[derive(Debug, Clone, PartialEq)]
pub struct TransceiverSolution {
    pub power: PowerAllocation,
    pub beams: Beamformers,
    /// Aggregation-error objective actually attained (see [`design_objective`]).
    pub objective_value: f64,
    pub feasible: bool,
}

/// ḡ = (1/K)Σ_k (1/Q)Σ_q g_{k,q} and σ̄² = (1/K)Σ_k (1/Q)Σ_q g²_{k,q} − ḡ²,
/// clamped at zero.  All devices must report equal-length gradients.
pub fn normalization_stats(local_gradients: &[Vec<f64>]) -> Result<NormalizationStats, TransceiverError> {
    assert!(!local_gradients.is_empty(), "at least one gradient required");
    let q = local_gradients[0].len();
    assert!(q >= 1, "gradients must be nonempty");
    for g in local_gradients {
        if g.len() != q {
            return Err(TransceiverError::LengthMismatch { expected: q, got: g.len() });
        }
    }
    let k = local_gradients.len() as f64;
    let mean = local_gradients
        .iter()
        .map(|g| g.iter().sum::<f64>() / q as f64)
        .sum::<f64>()
        / k;
    let second = local_gradients
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>() / q as f64)
        .sum::<f64>()
        / k;
    Ok(NormalizationStats { global_mean: mean, global_var: (second - mean * mean).max(0.0) })
}

/// g̃_q = (g_q − ḡ)/σ̄.
pub fn normalize(gradient: &[f64], stats: &NormalizationStats) -> Result<Vec<f64>, TransceiverError> {
    if stats.is_degenerate() {
        return Err(TransceiverError::DegenerateVariance { variance: stats.global_var });
    }
    let sigma = stats.global_var.sqrt();
    Ok(gradient.iter().map(|g| (g - stats.global_mean) / sigma).collect())
}

/// Inverts [`normalize`] entrywise: g = σ̄·s + ḡ.
pub fn denormalize_entry(s: f64, stats: &NormalizationStats) -> f64 {
    stats.global_var.sqrt() * s + stats.global_mean
}

/// Eq.-(10) SINR of device k's data stream under the given design.
///
/// Interference comprises the other devices' data streams and *all* gradient
/// streams (weighted by their sample shares); scaling f_k leaves the value
/// unchanged.
pub fn sinr(
    k: usize,
    power: &PowerAllocation,
    beams: &Beamformers,
    channel: &ChannelRealization,
    counts: &DataCounts,
) -> f64 {
    let f_k = &beams.decoding[k];
    let signal = (dot(f_k, &channel.h[k]) * power.data[k]).norm_sqr();
    let mut denom = channel.noise_power * norm_sq(f_k);
    for j in 0..counts.devices() {
        let fh = dot(f_k, &channel.h[j]);
        let w = counts.weight(j);
        denom += w * w * (fh * power.gradient[j]).norm_sqr();
        if j != k {
            denom += (fh * power.data[j]).norm_sqr();
        }
    }
    signal / denom
}

/// All devices' SINRs.
pub fn all_sinrs(
    power: &PowerAllocation,
    beams: &Beamformers,
    channel: &ChannelRealization,
    counts: &DataCounts,
) -> Vec<f64> {
    (0..counts.devices()).map(|k| sinr(k, power, beams, channel, counts)).collect()
}

/// Eq.-(12) aggregation error Σ_k (N_f,k²/N_f²)|p_f,k bᴴh_k − 1|² + ‖b‖²σ².
pub fn aggregation_mse(
    power: &PowerAllocation,
    b: &[C64],
    channel: &ChannelRealization,
    counts: &DataCounts,
) -> f64 {
    let mut mse = channel.noise_power * norm_sq(b);
    for k in 0..counts.devices() {
        let w = counts.weight(k);
        let misalign = power.gradient[k] * dot(b, &channel.h[k]) - C64::new(1.0, 0.0);
        mse += w * w * misalign.norm_sqr();
    }
    mse
}

/// Per-device misalignment magnitudes |1 − p_f,k bᴴh_k|², the building block
/// shared by the design objective and the per-round gap contribution.
pub fn misalignment_sq(power_gradient: &[C64], b: &[C64], channel: &ChannelRealization) -> Vec<f64> {
    power_gradient
        .iter()
        .zip(channel.h.iter())
        .map(|(p, h)| (C64::new(1.0, 0.0) - p * dot(b, h)).norm_sqr())
        .collect()
}

/// The design objective minimized by the optimizer:
/// (4K/(N_f+N_c)²)·Σ_k N_f,k²|1 − p_f,k bᴴh_k|² + N_f²σ²‖b‖²/(N_f+N_c)².
pub fn design_objective(
    power: &PowerAllocation,
    b: &[C64],
    channel: &ChannelRealization,
    counts: &DataCounts,
) -> f64 {
    let k = counts.devices() as f64;
    let n_f = counts.n_f() as f64;
    let n_tot = n_f + counts.n_c() as f64;
    let mis = misalignment_sq(&power.gradient, b, channel);
    let weighted: f64 = (0..counts.devices())
        .map(|i| (counts.local[i] as f64).powi(2) * mis[i])
        .sum();
    (4.0 * k * weighted + n_f * n_f * channel.noise_power * norm_sq(b)) / (n_tot * n_tot)
}

/// Minimum SINR for device k to deliver `n_ck` samples of `m_bits` bits
/// within the round latency `t_c` at bandwidth `w` and rate-fit constants
/// (b1, b2): γ_min = b2·(2^(m·n_ck/(b1·w·t_c)) − 1).
pub fn min_sinr(m_bits: f64, n_ck: u64, w: f64, b1: f64, b2: f64, t_c: f64) -> f64 {
    if n_ck == 0 {
        return 0.0;
    }
    assert!(m_bits > 0.0 && w > 0.0 && t_c > 0.0, "positive rate parameters required");
    assert!(b1 > 0.0 && b1 < 1.0, "b1 must lie in (0,1)");
    assert!(b2 >= 1.0, "b2 must be at least 1");
    b2 * (2f64.powf(m_bits * n_ck as f64 / (b1 * w * t_c)) - 1.0)
}

/// Achievable sum rate Σ_k W·b1·log₂(1 + γ_k/b2) in bit/s.
pub fn sum_rate(sinrs: &[f64], w: f64, b1: f64, b2: f64) -> f64 {
    sinrs.iter().map(|g| w * b1 * (1.0 + g / b2).log2()).sum()
}

/// Simulates the de-normalized over-the-air aggregate, entry by entry:
/// ĝ_q = Re{Σ_k w_k p_f,k bᴴh_k}·g_{k,q} + Re{Σ_k w_k (1 − p_f,k bᴴh_k)}·ḡ
///       + σ̄·Re{bᴴn_q},  n_q ~ CN(0, σ²I) drawn per slot.
///
/// `local_gradients` are the raw (unnormalized) per-device gradients; the
/// normalization/de-normalization pair is applied internally.  When the
/// pooled variance is degenerate every device transmits zeros and the
/// aggregate reduces to ḡ in every entry (plus nothing — the scale σ̄ ≈ 0
/// also suppresses the noise term).
pub fn simulate_aggregation(
    local_gradients: &[Vec<f64>],
    stats: &NormalizationStats,
    power: &PowerAllocation,
    beams: &Beamformers,
    channel: &ChannelRealization,
    counts: &DataCounts,
    noise_seed: u64,
) -> Vec<f64> {
    let q_len = local_gradients[0].len();
    let b = &beams.aggregation;
    let sigma = stats.global_var.sqrt();
    let degenerate = stats.is_degenerate();

    // Per-device effective complex gains p_f,k·bᴴh_k.
    let gains: Vec<C64> = (0..counts.devices())
        .map(|k| power.gradient[k] * dot(b, &channel.h[k]))
        .collect();
    let mean_carry: f64 = (0..counts.devices())
        .map(|k| counts.weight(k) * (C64::new(1.0, 0.0) - gains[k]).re)
        .sum();

    let noise_amp = (channel.noise_power / 2.0).sqrt();
    let mut out = vec![0.0; q_len];
    for (q, slot) in out.iter_mut().enumerate() {
        // Counter-based per-slot noise stream.
        let mut rng = seeding::rng(noise_seed, &[0x0A99, channel.round_index, q as u64]);
        let bn: C64 = b
            .iter()
            .map(|bi| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                bi.conj() * C64::new(re * noise_amp, im * noise_amp)
            })
            .sum();
        if degenerate {
            *slot = stats.global_mean;
            continue;
        }
        let mut acc = stats.global_mean * mean_carry + sigma * bn.re;
        for k in 0..counts.devices() {
            // Re{p_f,k bᴴh_k}·w_k·g_{k,q}: the de-normalization expands the
            // normalized symbol back into mean and signal parts.
            acc += counts.weight(k) * gains[k].re * local_gradients[k][q];
        }
        *slot = acc;
    }
    out
}

/// Feasibility measurements of a candidate design against the constraint set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub mse: f64,
    pub sinrs: Vec<f64>,
    pub power_ok: bool,
    pub mse_ok: bool,
    pub sinr_ok: bool,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.power_ok && self.mse_ok && self.sinr_ok
    }
}

/// Evaluates power budget, aggregation-error cap and per-device SINR targets.
pub fn check_constraints(
    power: &PowerAllocation,
    beams: &Beamformers,
    channel: &ChannelRealization,
    counts: &DataCounts,
    p_max: f64,
    epsilon: f64,
    gamma_min: &[f64],
) -> FeasibilityReport {
    let mse = aggregation_mse(power, &beams.aggregation, channel, counts);
    let sinrs = all_sinrs(power, beams, channel, counts);
    FeasibilityReport {
        power_ok: power.within_budget(counts, p_max),
        mse_ok: mse <= epsilon + 1e-6,
        sinr_ok: sinrs.iter().zip(gamma_min.iter()).all(|(g, t)| *g >= t - 1e-9),
        mse,
        sinrs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, sample_topology, PathLossModel};
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn test_channel(seed: u64, k: usize, n_r: usize, noise: f64) -> ChannelRealization {
        let topo = sample_topology(seed, k, 100.0, [0.0, 0.0, 10.0]);
        sample_channel(&topo, &PathLossModel::default(), 2.0, noise, 0, seed, n_r)
    }

    /// Unit-scale random channel so that O(1) powers/beamformers exercise
    /// nontrivial SINR and MSE values in oracle comparisons.
    fn unit_channel(rng: &mut impl Rng, k: usize, n_r: usize, noise: f64) -> ChannelRealization {
        let h = (0..k)
            .map(|_| (0..n_r).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
            .collect();
        ChannelRealization { h, noise_power: noise, round_index: 0 }
    }

    fn random_power(rng: &mut impl Rng, k: usize) -> PowerAllocation {
        PowerAllocation {
            gradient: (0..k).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect(),
            data: (0..k).map(|_| c(rng.gen_range(0.1..1.0), 0.0)).collect(),
        }
    }

    fn random_beams(rng: &mut impl Rng, k: usize, n_r: usize) -> Beamformers {
        Beamformers {
            aggregation: (0..n_r).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect(),
            decoding: (0..k)
                .map(|_| (0..n_r).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
                .collect(),
        }
    }

    #[test]
    fn stats_constant_gradients() {
        let g = vec![vec![3.5; 7], vec![3.5; 7]];
        let s = normalization_stats(&g).unwrap();
        assert_eq!(s.global_mean, 3.5);
        assert!(s.global_var.abs() < 1e-12);
        assert!(s.is_degenerate());
    }

    #[test]
    fn stats_two_device_hand_example() {
        let s = normalization_stats(&[vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(s.global_mean, 0.0);
        assert_eq!(s.global_var, 1.0);
    }

    #[test]
    fn stats_mismatched_lengths_error() {
        let err = normalization_stats(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert_eq!(err, TransceiverError::LengthMismatch { expected: 2, got: 1 });
    }

    #[test]
    fn normalized_pool_has_zero_mean_unit_second_moment() {
        let mut rng = crate::seeding::rng(31, &[0]);
        let grads: Vec<Vec<f64>> =
            (0..5).map(|_| (0..40).map(|_| rng.gen_range(-2.0..3.0)).collect()).collect();
        let stats = normalization_stats(&grads).unwrap();
        let normed: Vec<Vec<f64>> =
            grads.iter().map(|g| normalize(g, &stats).unwrap()).collect();
        let re_pooled = normalization_stats(&normed).unwrap();
        assert!(re_pooled.global_mean.abs() < 1e-10);
        assert!((re_pooled.global_var - 1.0).abs() < 1e-10);
    }

    #[test]
    fn normalize_formula_and_round_trip() {
        let stats = NormalizationStats { global_mean: 2.0, global_var: 4.0 };
        let normed = normalize(&[4.0], &stats).unwrap();
        assert!((normed[0] - 1.0).abs() < 1e-15);
        let mut rng = crate::seeding::rng(32, &[0]);
        let g: Vec<f64> = (0..64).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let s = normalization_stats(&[g.clone()]).unwrap();
        for (orig, n) in g.iter().zip(normalize(&g, &s).unwrap()) {
            assert!((denormalize_entry(n, &s) - orig).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_degenerate_variance() {
        let stats = NormalizationStats { global_mean: 1.0, global_var: 0.0 };
        assert!(matches!(
            normalize(&[1.0], &stats),
            Err(TransceiverError::DegenerateVariance { .. })
        ));
    }

    #[test]
    fn sinr_single_device_no_interference() {
        let mut rng = crate::seeding::rng(33, &[0]);
        let ch = unit_channel(&mut rng, 1, 4, 0.3);
        let counts = DataCounts::uniform(1, 16, 8);
        let beams = random_beams(&mut rng, 1, 4);
        let power = PowerAllocation { gradient: vec![c(0.0, 0.0)], data: vec![c(0.8, 0.0)] };
        let got = sinr(0, &power, &beams, &ch, &counts);
        let f = &beams.decoding[0];
        let expect = (dot(f, &ch.h[0]) * power.data[0]).norm_sqr() / (0.3 * norm_sq(f));
        assert!((got - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn sinr_zero_data_power_is_zero() {
        let mut rng = crate::seeding::rng(34, &[0]);
        let ch = unit_channel(&mut rng, 3, 4, 0.1);
        let counts = DataCounts::uniform(3, 16, 8);
        let beams = random_beams(&mut rng, 3, 4);
        let mut power = random_power(&mut rng, 3);
        power.data = vec![c(0.0, 0.0); 3];
        for k in 0..3 {
            assert_eq!(sinr(k, &power, &beams, &ch, &counts), 0.0);
        }
    }

    #[test]
    fn sinr_matches_monte_carlo_symbol_simulation() {
        // Simulate the received slot signal with unit-variance symbols and
        // noise, beamform, and measure signal/interference powers directly.
        let mut rng = crate::seeding::rng(35, &[0]);
        let k = 4;
        let n_r = 6;
        let noise = 0.05;
        let ch = unit_channel(&mut rng, k, n_r, noise);
        let counts = DataCounts::new(vec![10, 20, 30, 40], vec![8, 8, 8, 8]);
        let beams = random_beams(&mut rng, k, n_r);
        let power = random_power(&mut rng, k);

        let draws = 1_000_000usize;
        let mut sig_pow = 0.0;
        let mut int_pow = 0.0;
        let device = 1usize;
        let f = &beams.decoding[device];
        let noise_amp = (noise / 2.0).sqrt();
        for _ in 0..draws {
            let mut interference = c(0.0, 0.0);
            let mut signal = c(0.0, 0.0);
            for j in 0..k {
                // data symbol: unit-variance circular complex
                let d = c(rng.gen_range(-1.0..1.0f64).signum(), 0.0)
                    * std::f64::consts::FRAC_1_SQRT_2
                    + c(0.0, rng.gen_range(-1.0..1.0f64).signum()) * std::f64::consts::FRAC_1_SQRT_2;
                // gradient symbol: real unit-variance (normalized, weighted)
                let s: f64 = StandardNormal.sample(&mut rng);
                let fh = dot(f, &ch.h[j]);
                let data_term = fh * power.data[j] * d;
                let grad_term = fh * power.gradient[j] * counts.weight(j) * s;
                if j == device {
                    signal += data_term;
                    interference += grad_term;
                } else {
                    interference += data_term + grad_term;
                }
            }
            let n: C64 = f
                .iter()
                .map(|fi| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    fi.conj() * c(re * noise_amp, im * noise_amp)
                })
                .sum();
            interference += n;
            sig_pow += signal.norm_sqr();
            int_pow += interference.norm_sqr();
        }
        let mc = sig_pow / int_pow;
        let formula = sinr(device, &power, &beams, &ch, &counts);
        assert!(
            (mc - formula).abs() <= 0.02 * formula,
            "Monte-Carlo {mc:.5} vs formula {formula:.5}"
        );
    }

    #[test]
    fn mse_perfect_inversion_zero() {
        let mut rng = crate::seeding::rng(36, &[0]);
        let mut ch = unit_channel(&mut rng, 3, 4, 0.0);
        ch.noise_power = 0.0;
        let counts = DataCounts::uniform(3, 16, 8);
        let b: Vec<C64> = (0..4).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let gradient: Vec<C64> =
            (0..3).map(|k| c(1.0, 0.0) / dot(&b, &ch.h[k])).collect();
        let power = PowerAllocation { gradient, data: vec![c(0.0, 0.0); 3] };
        let mse = aggregation_mse(&power, &b, &ch, &counts);
        assert!(mse.abs() < 1e-12);
    }

    #[test]
    fn mse_zero_beamformer_is_iota() {
        let mut rng = crate::seeding::rng(37, &[0]);
        let mut ch = unit_channel(&mut rng, 4, 5, 0.2);
        ch.noise_power = 0.2;
        let counts = DataCounts::new(vec![4, 8, 12, 16], vec![8; 4]);
        let power = random_power(&mut rng, 4);
        let b = vec![c(0.0, 0.0); 5];
        let mse = aggregation_mse(&power, &b, &ch, &counts);
        assert!((mse - counts.iota()).abs() < 1e-14);
    }

    #[test]
    fn mse_matches_monte_carlo() {
        let mut rng = crate::seeding::rng(38, &[0]);
        for trial in 0..20u64 {
            let k = 2 + (trial as usize % 3);
            let n_r = 3 + (trial as usize % 4);
            let noise = rng.gen_range(0.01..0.2);
            let ch = unit_channel(&mut rng, k, n_r, noise);
            let counts = DataCounts::uniform(k, 16, 8);
            let power = random_power(&mut rng, k);
            let b: Vec<C64> =
                (0..n_r).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();

            let draws = 100_000usize;
            let noise_amp = (noise / 2.0).sqrt();
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..draws {
                let mut est = c(0.0, 0.0);
                let mut target = 0.0;
                for j in 0..k {
                    let s: f64 = StandardNormal.sample(&mut rng);
                    let sym = counts.weight(j) * s;
                    target += sym;
                    est += dot(&b, &ch.h[j]) * power.gradient[j] * sym;
                }
                let n: C64 = b
                    .iter()
                    .map(|bi| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        bi.conj() * c(re * noise_amp, im * noise_amp)
                    })
                    .sum();
                est += n;
                let dev = (est - c(target, 0.0)).norm_sqr();
                sum += dev;
                sum_sq += dev * dev;
            }
            let mc = sum / draws as f64;
            let se = ((sum_sq / draws as f64 - mc * mc).max(0.0) / draws as f64).sqrt();
            let formula = aggregation_mse(&power, &b, &ch, &counts);
            // 4·SE keeps the union bound over 20 trials below ~0.2%.
            assert!(
                (mc - formula).abs() <= 4.0 * se,
                "trial {trial}: MC {mc:.5} vs formula {formula:.5} (4·SE {:.2e})",
                4.0 * se
            );
        }
    }

    #[test]
    fn min_sinr_values() {
        assert_eq!(min_sinr(12704.0, 0, 5e6, 0.905, 1.34, 0.5), 0.0);
        let g = min_sinr(12704.0, 8, 5e6, 0.905, 1.34, 0.5);
        assert!((g - 0.0424).abs() < 5e-4, "γ_min = {g}");
        // Doubling the payload squares the (1 + γ/b2) factor.
        let g2 = min_sinr(2.0 * 12704.0, 8, 5e6, 0.905, 1.34, 0.5);
        let predicted = 1.34 * ((1.0 + g / 1.34).powi(2) - 1.0);
        assert!((g2 - predicted).abs() < 1e-9 * predicted.max(1.0));
    }

    #[test]
    fn sum_rate_at_b2_reference_point() {
        // γ = b2 in every stream → each contributes W·b1·log2(2) = W·b1.
        let rate = sum_rate(&[1.34, 1.34], 5e6, 0.905, 1.34);
        assert!((rate - 2.0 * 5e6 * 0.905).abs() < 1e-6);
    }

    #[test]
    fn sinr_invariant_under_combiner_scaling() {
        let mut rng = crate::seeding::rng(39, &[0]);
        let ch = unit_channel(&mut rng, 3, 5, 0.07);
        let counts = DataCounts::uniform(3, 16, 8);
        let power = random_power(&mut rng, 3);
        let beams = random_beams(&mut rng, 3, 5);
        let base = sinr(1, &power, &beams, &ch, &counts);
        for _ in 0..100 {
            let scale = c(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            if scale.norm() < 1e-3 {
                continue;
            }
            let mut scaled = beams.clone();
            scaled.decoding[1].iter_mut().for_each(|z| *z *= scale);
            let got = sinr(1, &power, &scaled, &ch, &counts);
            assert!((got - base).abs() <= 1e-10 * base);
        }
    }

    #[test]
    fn mse_midpoint_convexity() {
        let mut rng = crate::seeding::rng(40, &[0]);
        let ch = unit_channel(&mut rng, 3, 4, 0.1);
        let counts = DataCounts::uniform(3, 16, 8);
        let power = random_power(&mut rng, 3);
        for _ in 0..100 {
            let b1: Vec<C64> =
                (0..4).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let b2: Vec<C64> =
                (0..4).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let mid: Vec<C64> = b1.iter().zip(b2.iter()).map(|(x, y)| (x + y) * 0.5).collect();
            let lhs = aggregation_mse(&power, &mid, &ch, &counts);
            let rhs = 0.5 * aggregation_mse(&power, &b1, &ch, &counts)
                + 0.5 * aggregation_mse(&power, &b2, &ch, &counts);
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn aggregation_noise_free_perfect_inversion_is_weighted_average() {
        let mut rng = crate::seeding::rng(41, &[0]);
        let mut ch = unit_channel(&mut rng, 3, 4, 1e-30);
        ch.noise_power = 0.0;
        let counts = DataCounts::new(vec![10, 30, 60], vec![8; 3]);
        let b: Vec<C64> = (0..4).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let gradient: Vec<C64> = (0..3).map(|k| c(1.0, 0.0) / dot(&b, &ch.h[k])).collect();
        let power = PowerAllocation { gradient, data: vec![c(0.0, 0.0); 3] };
        let beams = Beamformers { aggregation: b, decoding: vec![vec![c(1.0, 0.0); 4]; 3] };
        let grads: Vec<Vec<f64>> =
            (0..3).map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let stats = normalization_stats(&grads).unwrap();
        let agg = simulate_aggregation(&grads, &stats, &power, &beams, &ch, &counts, 5);
        for q in 0..12 {
            let ideal: f64 = (0..3).map(|k| counts.weight(k) * grads[k][q]).sum();
            assert!((agg[q] - ideal).abs() <= 1e-10, "slot {q}: {} vs {}", agg[q], ideal);
        }
    }

    #[test]
    fn aggregation_zero_beamformer_returns_global_mean() {
        let mut rng = crate::seeding::rng(42, &[0]);
        let ch = unit_channel(&mut rng, 2, 3, 0.1);
        let counts = DataCounts::uniform(2, 16, 8);
        let power = random_power(&mut rng, 2);
        let beams = Beamformers {
            aggregation: vec![c(0.0, 0.0); 3],
            decoding: vec![vec![c(1.0, 0.0); 3]; 2],
        };
        let grads = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0]];
        let stats = normalization_stats(&grads).unwrap();
        let agg = simulate_aggregation(&grads, &stats, &power, &beams, &ch, &counts, 9);
        for v in agg {
            assert!((v - stats.global_mean).abs() < 1e-14);
        }
    }

    #[test]
    fn aggregation_deterministic_in_seed() {
        let ch = test_channel(11, 3, 8, 1e-11);
        let counts = DataCounts::uniform(3, 16, 8);
        let mut rng = crate::seeding::rng(43, &[0]);
        let power = random_power(&mut rng, 3);
        let beams = random_beams(&mut rng, 3, 8);
        let grads: Vec<Vec<f64>> =
            (0..3).map(|_| (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let stats = normalization_stats(&grads).unwrap();
        let a = simulate_aggregation(&grads, &stats, &power, &beams, &ch, &counts, 77);
        let b = simulate_aggregation(&grads, &stats, &power, &beams, &ch, &counts, 77);
        assert_eq!(a, b);
        let c_run = simulate_aggregation(&grads, &stats, &power, &beams, &ch, &counts, 78);
        assert_ne!(a, c_run);
    }

    #[test]
    fn degenerate_variance_transmits_mean_only() {
        let mut rng = crate::seeding::rng(44, &[0]);
        let ch = unit_channel(&mut rng, 2, 3, 0.5);
        let counts = DataCounts::uniform(2, 16, 8);
        let power = random_power(&mut rng, 2);
        let beams = random_beams(&mut rng, 2, 3);
        let grads = vec![vec![2.5; 6], vec![2.5; 6]];
        let stats = normalization_stats(&grads).unwrap();
        assert!(stats.is_degenerate());
        let agg = simulate_aggregation(&grads, &stats, &power, &beams, &ch, &counts, 13);
        for v in agg {
            assert_eq!(v, 2.5);
        }
    }
}
