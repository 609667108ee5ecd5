//! Closed-form optimality-gap theory for the hybrid learning scheme.
//!
//! Everything here is pure arithmetic over a small parameter record: the
//! per-round gradient-error bounds, the geometric gap recursion for the hybrid
//! scheme, its accumulated-data and decreasing-step-size refinements, the
//! federated/centralized reference gaps with their ordering, and the
//! error-free limits. No state, no caching — each call re-evaluates the
//! formulas so tests can cross-check independent derivations of the same
//! quantity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelRealization;
use crate::numerics::norm_sq;
use crate::transceiver::{misalignment_sq, DataCounts, TransceiverSolution};

/// Errors raised by the bound evaluators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvergenceError {
    /// A derived contraction factor or validated parameter left its open
    /// interval, so the geometric bound is vacuous.
    #[error("{quantity} = {value} falls outside its required range ({lo}, {hi})")]
    OutOfRange { quantity: &'static str, value: f64, lo: f64, hi: f64 },
    /// The decreasing step-size schedule violates the conditions that make
    /// the 1/T bound valid.
    #[error("invalid step-size schedule: {reason}")]
    InvalidSchedule { reason: String },
    /// A per-pool error bound was requested for an empty pool.
    #[error("{quantity} is zero, the corresponding sampling-error bound is undefined")]
    DivisionByZero { quantity: &'static str },
}

/// Task and schedule constants entering the optimality-gap bounds: strong
/// convexity μ, smoothness L, the gradient-deviation constants ξ₁/ξ₂, the
/// squared gradient cap G², the global dataset size N, and the per-round
/// per-device sample schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapParams {
    /// Strong-convexity modulus μ > 0.
    pub mu: f64,
    /// Smoothness constant L ≥ μ.
    pub l: f64,
    /// Additive gradient-deviation constant ξ₁ ≥ 0.
    pub xi1: f64,
    /// Multiplicative gradient-deviation constant ξ₂ > 0.
    pub xi2: f64,
    /// Squared per-device gradient bound G².
    pub g2: f64,
    /// Total number of training samples N across all devices.
    pub n: u64,
    /// Per-device local-gradient and upload sample counts for one round.
    pub counts: DataCounts,
}

impl GapParams {
    /// Validates the basic sign and ordering constraints. The tighter
    /// requirement that ξ₂ lies inside [`xi2_range`] is only needed by the
    /// contraction factors and is checked where those are formed.
    pub fn new(
        mu: f64,
        l: f64,
        xi1: f64,
        xi2: f64,
        g2: f64,
        n: u64,
        counts: DataCounts,
    ) -> Result<Self, ConvergenceError> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(ConvergenceError::OutOfRange {
                quantity: "mu",
                value: mu,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if !(l >= mu && l.is_finite()) {
            return Err(ConvergenceError::OutOfRange {
                quantity: "L",
                value: l,
                lo: mu,
                hi: f64::INFINITY,
            });
        }
        if !(xi1 >= 0.0 && xi1.is_finite()) {
            return Err(ConvergenceError::OutOfRange {
                quantity: "xi1",
                value: xi1,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if !(xi2 > 0.0 && xi2.is_finite()) {
            return Err(ConvergenceError::OutOfRange {
                quantity: "xi2",
                value: xi2,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if !(g2 >= 0.0 && g2.is_finite()) {
            return Err(ConvergenceError::OutOfRange {
                quantity: "G2",
                value: g2,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        let used = counts.n_f() + counts.n_c();
        if used == 0 || n < used {
            return Err(ConvergenceError::OutOfRange {
                quantity: "N",
                value: n as f64,
                lo: used as f64,
                hi: f64::INFINITY,
            });
        }
        Ok(Self { mu, l, xi1, xi2, g2, n, counts })
    }

    fn n_f(&self) -> f64 {
        self.counts.n_f() as f64
    }

    fn n_c(&self) -> f64 {
        self.counts.n_c() as f64
    }

    /// N_f + N_c, the per-round sample pool a model update is built from.
    fn pooled(&self) -> f64 {
        self.n_f() + self.n_c()
    }

    /// N_f(N−N_f) + N_c(N−N_c), the without-replacement variance weight that
    /// multiplies ξ₁/ξ₂ in the contraction constants.
    fn variance_weight(&self) -> f64 {
        let n = self.n as f64;
        self.n_f() * (n - self.n_f()) + self.n_c() * (n - self.n_c())
    }
}

/// Per-round empirical statistics consumed by the decreasing-step-size bound:
/// the measured optimality gap and squared gradient-error norm at round T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    /// E[F(w_T) − F(w*)], estimated from the run.
    pub gap: f64,
    /// E‖e_T‖², estimated from the run.
    pub error_norm_sq: f64,
}

/// Asymptotic gaps of all three schemes over error-free channels, plus the
/// predicate deciding whether the hybrid scheme's limit is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorFreeLimits {
    /// lim ψ_T for the hybrid scheme: ρ₂/(1−ρ₁).
    pub semifl: f64,
    /// lim ψ_T for pure federated aggregation: ρ̃₂/(1−ρ̃₁).
    pub fl: f64,
    /// lim ψ_T for fully centralized training: ρ̂₂/(1−ρ̂₁).
    pub cl: f64,
    /// Whether (N_f − N/2)² + (N_c − N/2)² = N²/2 within relative 1e-9, the
    /// circle on which the hybrid limit vanishes entirely.
    pub semifl_zero_gap: bool,
}

/// Open interval of admissible ξ₂ values: (0, (N_f+N_c)²/(4[N_f(N−N_f)+N_c(N−N_c)])).
///
/// Any ξ₂ strictly inside keeps the contraction factor ρ₁ below one. When
/// every sample participates in exactly one pool of maximal size the variance
/// weight vanishes and the upper end is unbounded.
pub fn xi2_range(n: u64, n_f: u64, n_c: u64) -> (f64, f64) {
    assert!(n_f + n_c > 0, "at least one sample must be used per round");
    assert!(n >= n_f + n_c, "per-round pools cannot exceed the dataset");
    let nf = n_f as f64;
    let nc = n_c as f64;
    let nn = n as f64;
    let weight = nf * (nn - nf) + nc * (nn - nc);
    let pooled = nf + nc;
    if weight == 0.0 {
        (0.0, f64::INFINITY)
    } else {
        (0.0, pooled * pooled / (4.0 * weight))
    }
}

/// Contraction factor and sampling-bias constant of the per-round gap
/// recursion: ρ₁ = 1 − μ/L + 4μξ₂·V/(L(N_f+N_c)²) and ρ₂ = 2ξ₁·V/(L(N_f+N_c)²)
/// with V = N_f(N−N_f)+N_c(N−N_c). Fails unless ρ₁ lands strictly inside (0,1).
pub fn rho_params(params: &GapParams) -> Result<(f64, f64), ConvergenceError> {
    let pooled_sq = params.pooled() * params.pooled();
    let v = params.variance_weight();
    let rho1 = 1.0 - params.mu / params.l + 4.0 * params.mu * params.xi2 * v / (params.l * pooled_sq);
    let rho2 = 2.0 * params.xi1 * v / (params.l * pooled_sq);
    if !(rho1 > 0.0 && rho1 < 1.0) {
        return Err(ConvergenceError::OutOfRange { quantity: "rho1", value: rho1, lo: 0.0, hi: 1.0 });
    }
    Ok((rho1, rho2))
}

/// Per-round distortion term of the hybrid scheme's gap bound:
/// φ_t = [4KG²Σ_k N_f,k²|1−p_f,k bᴴh_k|² + N_f²G²σ²‖b‖²]/(L(N_f+N_c)²).
///
/// The counts in `params` must describe the same round layout the solution
/// was designed for. Equals (G²/L)·(aggregation design objective) and also
/// a₁²/L times the over-the-air error bound from [`lemma2_bounds`]; tests
/// cross-check both identities.
pub fn phi_t(solution: &TransceiverSolution, channel: &ChannelRealization, params: &GapParams) -> f64 {
    let counts = &params.counts;
    let k = counts.devices() as f64;
    let pooled_sq = params.pooled() * params.pooled();
    let mis = misalignment_sq(&solution.power.gradient, &solution.beams.aggregation, channel);
    let weighted: f64 = mis
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let nfk = counts.local[i] as f64;
            nfk * nfk * m
        })
        .sum();
    let noise = params.n_f() * params.n_f()
        * params.g2
        * channel.noise_power
        * norm_sq(&solution.beams.aggregation);
    (4.0 * k * params.g2 * weighted + noise) / (params.l * pooled_sq)
}

/// Per-round distortion term of the federated reference bound: the same
/// aggregation misalignments weighted by the combined counts (N_f,k+N_c,k)²
/// plus an unattenuated noise term,
/// φ̃_t = 4KG²Σ_k(N_f,k+N_c,k)²|1−p_f,k bᴴh_k|²/(L(N_f+N_c)²) + G²σ²‖b‖²/L.
pub fn fl_phi_t(
    solution: &TransceiverSolution,
    channel: &ChannelRealization,
    params: &GapParams,
) -> f64 {
    let counts = &params.counts;
    let k = counts.devices() as f64;
    let pooled_sq = params.pooled() * params.pooled();
    let mis = misalignment_sq(&solution.power.gradient, &solution.beams.aggregation, channel);
    let weighted: f64 = mis
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let combined = (counts.local[i] + counts.upload[i]) as f64;
            combined * combined * m
        })
        .sum();
    4.0 * k * params.g2 * weighted / (params.l * pooled_sq)
        + params.g2 * channel.noise_power * norm_sq(&solution.beams.aggregation) / params.l
}

/// Optimality gap of the hybrid scheme after `t` rounds:
/// ψ_T = ρ₁ᵀ·g₀ + ρ₂(1−ρ₁ᵀ)/(1−ρ₁) + Σ_{i=1..T} ρ₁^{T−i} φ_i.
///
/// `phis[i-1]` is the round-i distortion; the slice length must equal `t`.
pub fn semifl_gap(
    t: u64,
    initial_gap: f64,
    params: &GapParams,
    phis: &[f64],
) -> Result<f64, ConvergenceError> {
    assert_eq!(phis.len(), t as usize, "one distortion value per round required");
    let (rho1, rho2) = rho_params(params)?;
    let decay = rho1.powi(t as i32);
    let mut gap = decay * initial_gap + rho2 * (1.0 - decay) / (1.0 - rho1);
    for (i, phi) in phis.iter().enumerate() {
        gap += rho1.powi((t - 1 - i as u64) as i32) * phi;
    }
    Ok(gap)
}

/// Optimality gap when the centrally collected pool accumulates across
/// rounds: round i uses N̄_c,i = i·N_c samples, so every constant becomes
/// round-dependent and the bound takes the product form
/// ψ̄_T = (Π_i ρ̄₁,i)g₀ + Σ_i (Π_{j>i} ρ̄₁,j)(ρ̄₂,i + φ̄_i) with
/// φ̄_i = φ_i·(N_f+N_c)²/(N_f+N̄_c,i)².
///
/// Takes the same per-round φ_i values as [`semifl_gap`] and derives the
/// shrunken φ̄_i internally; asserts the claimed per-round dominance
/// ρ̄₁,i ≤ ρ₁, ρ̄₂,i ≤ ρ₂, φ̄_i ≤ φ_i that makes this bound the tighter one.
/// The dominance holds whenever the dataset dominates the local pool
/// (N ≥ 2N_f, implied by the dataset-rich regime the comparison is stated
/// for); outside that regime accumulation can transiently raise the
/// contraction factor and the assertion trips rather than silently reporting
/// an invalid comparison.
pub fn accumulated_gap(
    t: u64,
    initial_gap: f64,
    params: &GapParams,
    phis: &[f64],
) -> Result<f64, ConvergenceError> {
    assert_eq!(phis.len(), t as usize, "one distortion value per round required");
    let (rho1, rho2) = rho_params(params)?;
    let n = params.n as f64;
    let nf = params.n_f();
    let nc = params.n_c();
    let pooled_sq = params.pooled() * params.pooled();

    let rounds = t as usize;
    let mut rho1_bars = Vec::with_capacity(rounds);
    let mut per_round = Vec::with_capacity(rounds);
    for i in 1..=rounds {
        let nc_bar = i as f64 * nc;
        let pool = nf + nc_bar;
        let v = nf * (n - nf) + nc_bar * (n - nc_bar);
        let r1 = 1.0 - params.mu / params.l + 4.0 * params.mu * params.xi2 * v / (params.l * pool * pool);
        let r2 = 2.0 * params.xi1 * v / (params.l * pool * pool);
        if !(r1 > 0.0 && r1 < 1.0) {
            return Err(ConvergenceError::OutOfRange {
                quantity: "rho1_bar",
                value: r1,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let phi_bar = phis[i - 1] * pooled_sq / (pool * pool);
        let slack = 1e-12;
        assert!(
            r1 <= rho1 * (1.0 + slack),
            "accumulated contraction must not exceed the fixed-pool one"
        );
        assert!(
            r2 <= rho2 * (1.0 + slack) + 1e-300,
            "accumulated bias must not exceed the fixed-pool one"
        );
        assert!(
            phi_bar <= phis[i - 1] * (1.0 + slack) + 1e-300,
            "accumulated distortion must not exceed the per-round one"
        );
        rho1_bars.push(r1);
        per_round.push(r2 + phi_bar);
    }

    // Suffix products Π_{j>i} ρ̄₁,j, evaluated by a reverse scan.
    let mut suffix = vec![1.0; rounds + 1];
    for i in (0..rounds).rev() {
        suffix[i] = suffix[i + 1] * rho1_bars[i];
    }
    let mut gap = suffix[0] * initial_gap;
    for i in 0..rounds {
        gap += suffix[i + 1] * per_round[i];
    }
    Ok(gap)
}

/// The decreasing step-size schedule η_t = Λ/(t+τ).
pub fn decreasing_learning_rate(lambda: f64, tau: f64, t: u64) -> f64 {
    lambda / (t as f64 + tau)
}

/// Optimality gap after `t` rounds under the decreasing schedule
/// η_i = Λ/(i+τ): θ_T/(T+τ+1) with
/// θ_T = max{Λ(T+τ)E‖e_T‖²/(2(Λμ−1)), gap_T·(T+τ)}.
///
/// Both trajectory statistics are empirical inputs; the theory leaves them to
/// the run being analyzed. Requires Λ > 1/μ and τ ≥ ΛL, which together keep
/// every step below 1/L.
pub fn decreasing_lr_gap(
    t: u64,
    params: &GapParams,
    stats: &TrajectoryStats,
    lambda: f64,
    tau: f64,
) -> Result<f64, ConvergenceError> {
    if !(lambda > 1.0 / params.mu) {
        return Err(ConvergenceError::InvalidSchedule {
            reason: format!(
                "step-size scale {lambda} must exceed 1/mu = {}",
                1.0 / params.mu
            ),
        });
    }
    if !(tau >= lambda * params.l) {
        return Err(ConvergenceError::InvalidSchedule {
            reason: format!("offset {tau} must be at least scale*L = {}", lambda * params.l),
        });
    }
    assert!(stats.gap >= 0.0 && stats.error_norm_sq >= 0.0, "trajectory statistics are norms");
    let horizon = t as f64 + tau;
    let theta = (lambda * horizon * stats.error_norm_sq / (2.0 * (lambda * params.mu - 1.0)))
        .max(stats.gap * horizon);
    Ok(theta / (horizon + 1.0))
}

/// Reference-scheme gaps after `t` rounds at the same transceiver design.
///
/// Federated: all pooled samples feed the over-the-air aggregate, giving
/// ρ̃₁ = 1−μ/L+8μξ₂(N−S)/(LS), ρ̃₂ = 4ξ₁(N−S)/(LS) with S = N_f+N_c, plus the
/// distortions `phi_tildes` from [`fl_phi_t`]. Centralized: the pool is
/// processed at the base station, giving ρ̂₁ = 1−μ/L+μξ₂(N−S)/(LS),
/// ρ̂₂ = ξ₁(N−S)/(2LS) and no distortion term. Returns (federated, centralized).
pub fn fl_cl_gaps(
    t: u64,
    initial_gap: f64,
    params: &GapParams,
    phi_tildes: &[f64],
) -> Result<(f64, f64), ConvergenceError> {
    assert_eq!(phi_tildes.len(), t as usize, "one distortion value per round required");
    let excess = params.n as f64 - params.pooled();
    let scale = excess / (params.l * params.pooled());
    let rho1_tilde = 1.0 - params.mu / params.l + 8.0 * params.mu * params.xi2 * scale;
    let rho2_tilde = 4.0 * params.xi1 * scale;
    let rho1_hat = 1.0 - params.mu / params.l + params.mu * params.xi2 * scale;
    let rho2_hat = params.xi1 * scale / 2.0;
    if !(rho1_tilde > 0.0 && rho1_tilde < 1.0) {
        return Err(ConvergenceError::OutOfRange {
            quantity: "rho1_tilde",
            value: rho1_tilde,
            lo: 0.0,
            hi: 1.0,
        });
    }
    if !(rho1_hat > 0.0 && rho1_hat < 1.0) {
        return Err(ConvergenceError::OutOfRange {
            quantity: "rho1_hat",
            value: rho1_hat,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let decay_fl = rho1_tilde.powi(t as i32);
    let mut fl = decay_fl * initial_gap + rho2_tilde * (1.0 - decay_fl) / (1.0 - rho1_tilde);
    for (i, phi) in phi_tildes.iter().enumerate() {
        fl += rho1_tilde.powi((t - 1 - i as u64) as i32) * phi;
    }
    let decay_cl = rho1_hat.powi(t as i32);
    let cl = decay_cl * initial_gap + rho2_hat * (1.0 - decay_cl) / (1.0 - rho1_hat);
    Ok((fl, cl))
}

/// Asymptotic gaps of all three schemes when every round's distortion term is
/// zero (error-free channels): ρ₂/(1−ρ₁), ρ̃₂/(1−ρ̃₁), ρ̂₂/(1−ρ̂₁), evaluated
/// as raw formulas (degenerate parameter choices yield non-finite limits
/// rather than errors), plus the zero-gap circle predicate for the hybrid
/// scheme.
pub fn error_free_limits(params: &GapParams) -> ErrorFreeLimits {
    let pooled_sq = params.pooled() * params.pooled();
    let v = params.variance_weight();
    let rho1 = 1.0 - params.mu / params.l + 4.0 * params.mu * params.xi2 * v / (params.l * pooled_sq);
    let rho2 = 2.0 * params.xi1 * v / (params.l * pooled_sq);
    let excess = params.n as f64 - params.pooled();
    let scale = excess / (params.l * params.pooled());
    let rho1_tilde = 1.0 - params.mu / params.l + 8.0 * params.mu * params.xi2 * scale;
    let rho2_tilde = 4.0 * params.xi1 * scale;
    let rho1_hat = 1.0 - params.mu / params.l + params.mu * params.xi2 * scale;
    let rho2_hat = params.xi1 * scale / 2.0;

    let half = params.n as f64 / 2.0;
    let lhs = (params.n_f() - half).powi(2) + (params.n_c() - half).powi(2);
    let rhs = (params.n as f64) * (params.n as f64) / 2.0;
    let zero_gap = (lhs - rhs).abs() <= 1e-9 * rhs.max(1.0);

    ErrorFreeLimits {
        semifl: rho2 / (1.0 - rho1),
        fl: rho2_tilde / (1.0 - rho1_tilde),
        cl: rho2_hat / (1.0 - rho1_hat),
        semifl_zero_gap: zero_gap,
    }
}

/// Without-replacement sampling-error bound for a uniformly drawn pool of
/// `pool` out of `n` samples: (n−pool)/pool·(ξ₁ + ξ₂‖∇F‖²). This is the
/// generic piece behind all three per-error bounds; the federated and
/// centralized specializations substitute their own pool sizes.
pub fn sampling_error_bound(
    n: u64,
    pool: u64,
    xi1: f64,
    xi2: f64,
    grad_norm_sq: f64,
) -> Result<f64, ConvergenceError> {
    if pool == 0 {
        return Err(ConvergenceError::DivisionByZero { quantity: "sample pool" });
    }
    Ok((n as f64 - pool as f64) / pool as f64 * (xi1 + xi2 * grad_norm_sq))
}

/// The three per-round gradient-error bounds:
/// b1 bounds the local-pool sampling error E‖e₁‖², b2 the central-pool
/// sampling error E‖e₂‖², and b3 the over-the-air aggregation error
/// E‖e₃‖² ≤ 4KG²/N_f²·Σ_k N_f,k²|1−p_f,k bᴴh_k|² + G²σ²‖b‖².
pub fn lemma2_bounds(
    params: &GapParams,
    grad_norm_sq: f64,
    solution: &TransceiverSolution,
    channel: &ChannelRealization,
) -> Result<(f64, f64, f64), ConvergenceError> {
    let counts = &params.counts;
    if counts.n_f() == 0 {
        return Err(ConvergenceError::DivisionByZero { quantity: "N_f" });
    }
    if counts.n_c() == 0 {
        return Err(ConvergenceError::DivisionByZero { quantity: "N_c" });
    }
    let b1 = sampling_error_bound(params.n, counts.n_f(), params.xi1, params.xi2, grad_norm_sq)?;
    let b2 = sampling_error_bound(params.n, counts.n_c(), params.xi1, params.xi2, grad_norm_sq)?;
    let k = counts.devices() as f64;
    let nf = params.n_f();
    let mis = misalignment_sq(&solution.power.gradient, &solution.beams.aggregation, channel);
    let weighted: f64 = mis
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let nfk = counts.local[i] as f64;
            nfk * nfk * m
        })
        .sum();
    let b3 = 4.0 * k * params.g2 * weighted / (nf * nf)
        + params.g2 * channel.noise_power * norm_sq(&solution.beams.aggregation);
    Ok((b1, b2, b3))
}
