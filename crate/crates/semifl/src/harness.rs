//! Reproducible experiment drivers.
//!
//! One TOML-serializable [`ExperimentConfig`] describes the deployment
//! geometry, the radio, the per-round data schedule, and the learner. Each
//! `run_*` function executes one experiment end to end and writes plain-text
//! artifacts (CSV tables, JSONL round streams) into an output directory.
//! Every artifact embeds the fully resolved configuration and the master
//! seed, and contains no timestamps or environment-dependent fields, so a
//! rerun with the same configuration produces byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    sample_channel, sample_topology, ChannelRealization, PathLossModel, Topology,
};
use crate::convergence::{
    accumulated_gap, error_free_limits, fl_cl_gaps, fl_phi_t, phi_t, rho_params, semifl_gap,
    ConvergenceError, ErrorFreeLimits,
};
use crate::data::{self, DataError, Split};
use crate::learning::{
    calibrate_gap_params, make_quadratic_task, ClSampling, LearningError, MixupConfig,
    MlpClassifier, Mode, RateGate, RoundMetrics, Sample, SplitStrategy, StepSize, Task,
    TrainConfig, Trainer,
};
use crate::optimizer::{
    benchmark_allocations, two_stage_optimize, BenchmarkKind, OptimizerConfig, OptimizerError,
};
use crate::seeding;
use crate::transceiver::{aggregation_mse, min_sinr, sinr, sum_rate, DataCounts};

/// Errors surfaced by the experiment drivers.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("failed to {action} {path}: {source}")]
    Io { action: &'static str, path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("transceiver design failed on trial {trial}: {source}")]
    Solver { trial: u64, source: OptimizerError },
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Convergence(#[from] ConvergenceError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("artifact serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Converts a power level in dBm to watts: P[W] = 10^((dBm − 30)/10).
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Converts watts to dBm (inverse of [`dbm_to_watts`]).
pub fn watts_to_dbm(watts: f64) -> f64 {
    assert!(watts > 0.0, "power must be positive to express in dBm");
    10.0 * watts.log10() + 30.0
}

/// 64-bit FNV-1a hash; used to fingerprint resolved configurations inside
/// artifacts so mismatched files are easy to spot.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Cell placement: base-station coordinates and the device disc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySettings {
    pub devices: usize,
    pub radius_m: f64,
    pub bs_position: [f64; 3],
}

impl Default for TopologySettings {
    fn default() -> Self {
        Self { devices: 10, radius_m: 100.0, bs_position: [0.0, 0.0, 10.0] }
    }
}

/// Fading and array parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSettings {
    pub antennas: usize,
    pub rician_kappa: f64,
    pub noise_dbm: f64,
    pub path_loss_offset_db: f64,
    pub path_loss_slope_db_per_decade: f64,
}

impl Default for ChannelSettings {
    fn default() -> Self {
        Self {
            antennas: 16,
            rician_kappa: 2.0,
            noise_dbm: -80.0,
            path_loss_offset_db: 32.6,
            path_loss_slope_db_per_decade: 36.7,
        }
    }
}

/// Link budget: transmit power cap and the finite-blocklength rate model
/// whose backoff parameters set the per-device SINR targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSettings {
    pub p_max_dbm: f64,
    pub bandwidth_hz: f64,
    pub rate_backoff_b1: f64,
    pub sinr_backoff_b2: f64,
    pub frame_seconds: f64,
    pub payload_bits: f64,
}

impl Default for RadioSettings {
    fn default() -> Self {
        Self {
            p_max_dbm: 30.0,
            bandwidth_hz: 5e6,
            rate_backoff_b1: 0.905,
            sinr_backoff_b2: 1.34,
            frame_seconds: 0.5,
            payload_bits: 12_704.0,
        }
    }
}

/// Per-round, per-device sample schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountSettings {
    pub local_per_device: u64,
    pub upload_per_device: u64,
}

impl Default for CountSettings {
    fn default() -> Self {
        Self { local_per_device: 16, upload_per_device: 8 }
    }
}

/// Solver budget knobs; everything else stays at the solver defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub max_outer_iters: usize,
    pub convergence_accuracy: f64,
    pub mse_tolerance: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            max_outer_iters: d.max_outer_iters,
            convergence_accuracy: d.convergence_accuracy,
            mse_tolerance: d.mse_tolerance,
        }
    }
}

impl OptimizerSettings {
    pub fn to_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            max_outer_iters: self.max_outer_iters,
            convergence_accuracy: self.convergence_accuracy,
            mse_tolerance: self.mse_tolerance,
            ..OptimizerConfig::default()
        }
    }
}

/// Which training task the `train` command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Quadratic,
    Mnist,
}

/// Decreasing step-size schedule η_t = Λ/(t+τ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecreasingSchedule {
    pub lambda: f64,
    pub tau: f64,
}

/// Synthetic strongly-convex task dimensions and curvature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticSettings {
    pub dimension: usize,
    pub samples_per_device: usize,
    pub mu: f64,
    pub l: f64,
}

impl Default for QuadraticSettings {
    fn default() -> Self {
        Self { dimension: 50, samples_per_device: 100, mu: 0.8, l: 3.0 }
    }
}

/// Image-classification run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistSettings {
    /// Dataset directory; falls back to the `SEMIFL_DATA_DIR` environment
    /// variable when absent.
    pub data_dir: Option<PathBuf>,
    pub hidden_units: usize,
    /// Training samples owned by each device.
    pub shard_per_device: usize,
    /// Deterministic prefix of the test split used for accuracy.
    pub eval_samples: usize,
    /// Accuracy cadence in rounds (the final round is always evaluated).
    pub eval_every: u64,
    /// Cap on the base-station sample pool (ring overwrite beyond it).
    pub pool_cap: Option<u64>,
}

impl Default for MnistSettings {
    fn default() -> Self {
        Self {
            data_dir: None,
            hidden_units: 50,
            shard_per_device: 2000,
            eval_samples: 2500,
            eval_every: 25,
            pool_cap: Some(24_000),
        }
    }
}

/// Training-loop parameters shared by both tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningSettings {
    pub task: TaskKind,
    /// Modes to run: any of `semifl`, `semifl-error-free`, `fl`, `cl`.
    pub modes: Vec<String>,
    pub rounds: u64,
    /// Independent repetitions (distinct sampling/noise realizations).
    pub seeds: u64,
    /// Fixed step size; `None` picks the task default (1/L for the quadratic
    /// task, 0.01 for images). Ignored when `decreasing` is set.
    pub eta: Option<f64>,
    pub decreasing: Option<DecreasingSchedule>,
    /// Central gradients over the whole accumulated pool instead of fresh
    /// fixed-size batches.
    pub accumulate: bool,
    /// Blend uploads pairwise before transmission (image task only).
    pub mixup_enabled: bool,
    pub mixup_alpha: f64,
    pub mixup_noise_sigma: f64,
    pub quadratic: QuadraticSettings,
    pub mnist: MnistSettings,
}

impl Default for LearningSettings {
    fn default() -> Self {
        Self {
            task: TaskKind::Quadratic,
            modes: vec!["semifl".into(), "fl".into(), "cl".into()],
            rounds: 300,
            seeds: 3,
            eta: None,
            decreasing: None,
            accumulate: false,
            mixup_enabled: true,
            mixup_alpha: 2.0,
            mixup_noise_sigma: 0.05,
            quadratic: QuadraticSettings::default(),
            mnist: MnistSettings::default(),
        }
    }
}

/// Complete experiment description. The default value reproduces the
/// reference deployment: a 100 m cell with ten devices, a 16-antenna base
/// station, Rician fading with −80 dBm noise, a 30 dBm power budget, and the
/// 16-local/8-upload per-round schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random quantity in a run derives from it.
    pub seed: u64,
    /// Independent channel draws for the statistical commands.
    pub trials: u64,
    pub topology: TopologySettings,
    pub channel: ChannelSettings,
    pub radio: RadioSettings,
    pub counts: CountSettings,
    pub optimizer: OptimizerSettings,
    pub learning: LearningSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            trials: 100,
            topology: TopologySettings::default(),
            channel: ChannelSettings::default(),
            radio: RadioSettings::default(),
            counts: CountSettings::default(),
            optimizer: OptimizerSettings::default(),
            learning: LearningSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn noise_watts(&self) -> f64 {
        dbm_to_watts(self.channel.noise_dbm)
    }

    pub fn p_max_watts(&self) -> f64 {
        dbm_to_watts(self.radio.p_max_dbm)
    }

    pub fn path_loss(&self) -> PathLossModel {
        PathLossModel {
            offset_db: self.channel.path_loss_offset_db,
            slope_db_per_decade: self.channel.path_loss_slope_db_per_decade,
        }
    }

    pub fn data_counts(&self) -> DataCounts {
        DataCounts::uniform(
            self.topology.devices,
            self.counts.local_per_device,
            self.counts.upload_per_device,
        )
    }

    /// Per-device SINR floor implied by the payload and the frame budget.
    pub fn gamma_min_per_device(&self) -> Vec<f64> {
        let r = &self.radio;
        (0..self.topology.devices)
            .map(|_| {
                min_sinr(
                    r.payload_bits,
                    self.counts.upload_per_device,
                    r.bandwidth_hz,
                    r.rate_backoff_b1,
                    r.sinr_backoff_b2,
                    r.frame_seconds,
                )
            })
            .collect()
    }

    pub fn rate_gate(&self) -> RateGate {
        RateGate {
            m_bits: self.radio.payload_bits,
            bandwidth: self.radio.bandwidth_hz,
            b1: self.radio.rate_backoff_b1,
            b2: self.radio.sinr_backoff_b2,
            t_c: self.radio.frame_seconds,
        }
    }

    pub fn topology_for_trial(&self, trial: u64) -> Topology {
        sample_topology(
            seeding::mix(self.seed, &[0x7091, trial]),
            self.topology.devices,
            self.topology.radius_m,
            self.topology.bs_position,
        )
    }

    /// Independent channel realization for one trial (fresh placement and
    /// fading per trial index).
    pub fn channel_for_trial(&self, trial: u64) -> ChannelRealization {
        self.channel_with_antennas(trial, self.channel.antennas)
    }

    pub fn channel_with_antennas(&self, trial: u64, antennas: usize) -> ChannelRealization {
        let topo = self.topology_for_trial(trial);
        sample_channel(
            &topo,
            &self.path_loss(),
            self.channel.rician_kappa,
            self.noise_watts(),
            trial,
            self.seed,
            antennas,
        )
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes to TOML")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            action: "read",
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// FNV-1a fingerprint of the canonical TOML form.
    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.to_toml_string().as_bytes())
    }
}

// ---------------------------------------------------------------------------
// Artifact plumbing
// ---------------------------------------------------------------------------

/// Comment block embedded at the top of every CSV artifact: fingerprint,
/// master seed, and the full resolved configuration.
fn config_comment_block(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_fnv1a=0x{:016x}", config.config_hash());
    let _ = writeln!(out, "# master_seed={}", config.seed);
    for line in config.to_toml_string().lines() {
        let _ = writeln!(out, "# {line}");
    }
    out
}

fn write_artifact(path: &Path, contents: &str) -> Result<PathBuf, HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
            action: "create directory",
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        action: "write",
        path: path.to_path_buf(),
        source,
    })?;
    Ok(path.to_path_buf())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// First line of every JSONL artifact: the resolved configuration plus the
/// identifiers of this particular stream.
#[derive(Debug, Serialize)]
struct JsonlMeta<'a> {
    config_fnv1a: String,
    master_seed: u64,
    mode: String,
    run_seed: u64,
    task: &'a str,
    config: &'a ExperimentConfig,
}

/// One line per round of a training stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    #[serde(flatten)]
    pub metrics: RoundMetrics,
    /// Closed-form optimality-gap bound ψ_t, when the theory applies to the
    /// configured run (convex task, fixed step 1/L, hybrid modes).
    pub psi: Option<f64>,
    /// Constant per-round aggregation-distortion term feeding ψ.
    pub phi: Option<f64>,
    /// Test accuracy when this round was evaluated (image task).
    pub accuracy: Option<f64>,
    /// Running sum of per-round losses.
    pub cumulative_loss: f64,
}

// ---------------------------------------------------------------------------
// optimize: two-stage design vs reference allocations, trace + summary
// ---------------------------------------------------------------------------

struct OptimizeRow {
    trial: u64,
    converged: bool,
    iterations: usize,
    initial_objective: f64,
    objective: f64,
    kkt_residual: f64,
    mmse_objective: Option<f64>,
    uniform_forcing_objective: Option<f64>,
    max_power_used: f64,
    min_sinr_achieved: f64,
    mse: f64,
    trace: Vec<f64>,
}

/// Runs the two-stage transceiver design over independent channel draws and
/// records per-iteration objective traces plus a per-trial summary against
/// the minimum-mean-square-error and uniform-forcing references.
pub fn run_optimize(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let counts = config.data_counts();
    let gammas = config.gamma_min_per_device();
    let opt = config.optimizer.to_config();
    let p_max = config.p_max_watts();

    let rows: Vec<OptimizeRow> = (0..config.trials)
        .into_par_iter()
        .map(|trial| -> Result<OptimizeRow, HarnessError> {
            let channel = config.channel_for_trial(trial);
            let (sol, diag) = two_stage_optimize(&channel, &counts, p_max, &gammas, &opt)
                .map_err(|source| HarnessError::Solver { trial, source })?;
            let mmse = benchmark_allocations(
                BenchmarkKind::Mmse,
                &channel,
                &counts,
                p_max,
                &gammas,
                &opt,
                seeding::mix(config.seed, &[0xBE7C, trial]),
            )
            .ok()
            .map(|s| s.objective_value);
            let uf = benchmark_allocations(
                BenchmarkKind::UniformForcing,
                &channel,
                &counts,
                p_max,
                &gammas,
                &opt,
                seeding::mix(config.seed, &[0xBE7D, trial]),
            )
            .ok()
            .map(|s| s.objective_value);
            let max_power_used = (0..counts.devices())
                .map(|k| sol.power.consumed(&counts, k))
                .fold(f64::NEG_INFINITY, f64::max);
            let min_sinr_achieved = (0..counts.devices())
                .map(|k| sinr(k, &sol.power, &sol.beams, &channel, &counts))
                .fold(f64::INFINITY, f64::min);
            let mse = aggregation_mse(&sol.power, &sol.beams.aggregation, &channel, &counts);
            Ok(OptimizeRow {
                trial,
                converged: diag.converged,
                iterations: diag.outer_iterations,
                initial_objective: diag.objective_trace[0],
                objective: sol.objective_value,
                kkt_residual: diag.kkt_residual,
                mmse_objective: mmse,
                uniform_forcing_objective: uf,
                max_power_used,
                min_sinr_achieved,
                mse,
                trace: diag.objective_trace,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let header = config_comment_block(config);

    let mut trace_csv = header.clone();
    trace_csv.push_str("trial,iteration,objective\n");
    for row in &rows {
        for (i, obj) in row.trace.iter().enumerate().skip(1) {
            let _ = writeln!(trace_csv, "{},{},{}", row.trial, i, obj);
        }
    }

    let mut summary_csv = header;
    summary_csv.push_str(
        "trial,converged,iterations,initial_objective,objective,kkt_residual,\
         mmse_objective,uniform_forcing_objective,max_power_used,min_sinr_achieved,mse\n",
    );
    for r in &rows {
        let _ = writeln!(
            summary_csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.converged,
            r.iterations,
            r.initial_objective,
            r.objective,
            r.kkt_residual,
            fmt_opt(r.mmse_objective),
            fmt_opt(r.uniform_forcing_objective),
            r.max_power_used,
            r.min_sinr_achieved,
            r.mse,
        );
    }

    Ok(vec![
        write_artifact(&out_dir.join("optimize_trace.csv"), &trace_csv)?,
        write_artifact(&out_dir.join("optimize_summary.csv"), &summary_csv)?,
    ])
}

// ---------------------------------------------------------------------------
// cdf-sumrate: uplink sum-rate distribution of the joint design vs classical
// receivers
// ---------------------------------------------------------------------------

/// Runs the joint design and the maximum-ratio / equal-gain receivers over
/// independent draws and writes both the per-trial table and the empirical
/// sum-rate CDFs.
pub fn run_cdf_sumrate(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let counts = config.data_counts();
    let gammas = config.gamma_min_per_device();
    let opt = config.optimizer.to_config();
    let p_max = config.p_max_watts();
    let r = &config.radio;

    let sum_rate_of = |sol: &crate::transceiver::TransceiverSolution,
                       channel: &ChannelRealization| {
        let sinrs: Vec<f64> = (0..counts.devices())
            .map(|k| sinr(k, &sol.power, &sol.beams, channel, &counts))
            .collect();
        sum_rate(&sinrs, r.bandwidth_hz, r.rate_backoff_b1, r.sinr_backoff_b2)
    };

    let rows: Vec<(u64, f64, Option<f64>, Option<f64>)> = (0..config.trials)
        .into_par_iter()
        .map(|trial| -> Result<_, HarnessError> {
            let channel = config.channel_for_trial(trial);
            let (sol, _) = two_stage_optimize(&channel, &counts, p_max, &gammas, &opt)
                .map_err(|source| HarnessError::Solver { trial, source })?;
            let joint = sum_rate_of(&sol, &channel);
            let bench = |kind: BenchmarkKind, tag: u64| {
                benchmark_allocations(
                    kind,
                    &channel,
                    &counts,
                    p_max,
                    &gammas,
                    &opt,
                    seeding::mix(config.seed, &[tag, trial]),
                )
                .ok()
                .map(|s| sum_rate_of(&s, &channel))
            };
            let mrc = bench(BenchmarkKind::Mrc, 0xBE7E);
            let egc = bench(BenchmarkKind::EqualGain, 0xBE7F);
            Ok((trial, joint, mrc, egc))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let header = config_comment_block(config);

    let mut trials_csv = header.clone();
    trials_csv.push_str("trial,joint_bps,mrc_bps,egc_bps\n");
    for (trial, joint, mrc, egc) in &rows {
        let _ = writeln!(trials_csv, "{trial},{joint},{},{}", fmt_opt(*mrc), fmt_opt(*egc));
    }

    let mut cdf_csv = header;
    cdf_csv.push_str("scheme,sum_rate_bps,cdf\n");
    let schemes: [(&str, Vec<f64>); 3] = [
        ("joint", rows.iter().map(|r| r.1).collect()),
        ("mrc", rows.iter().filter_map(|r| r.2).collect()),
        ("egc", rows.iter().filter_map(|r| r.3).collect()),
    ];
    for (name, mut values) in schemes {
        values.sort_by(|a, b| a.total_cmp(b));
        let n = values.len() as f64;
        for (i, v) in values.iter().enumerate() {
            let _ = writeln!(cdf_csv, "{name},{v},{}", (i + 1) as f64 / n);
        }
    }

    Ok(vec![
        write_artifact(&out_dir.join("sumrate_trials.csv"), &trials_csv)?,
        write_artifact(&out_dir.join("sumrate_cdf.csv"), &cdf_csv)?,
    ])
}

// ---------------------------------------------------------------------------
// sweep-antennas: design quality vs array size
// ---------------------------------------------------------------------------

/// Reruns the joint design across array sizes and reports the mean and
/// standard error of the aggregation error and of the uplink sum rate.
pub fn run_sweep_antennas(
    config: &ExperimentConfig,
    antennas: &[usize],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    if antennas.is_empty() {
        return Err(HarnessError::Config("antenna sweep requires at least one size".into()));
    }
    let counts = config.data_counts();
    let gammas = config.gamma_min_per_device();
    let opt = config.optimizer.to_config();
    let p_max = config.p_max_watts();
    let r = &config.radio;

    let mut csv = config_comment_block(config);
    csv.push_str("antennas,trials,mean_mse,se_mse,mean_sum_rate_bps,se_sum_rate_bps\n");

    for &n_r in antennas {
        let per_trial: Vec<(f64, f64)> = (0..config.trials)
            .into_par_iter()
            .map(|trial| -> Result<(f64, f64), HarnessError> {
                let channel = config.channel_with_antennas(trial, n_r);
                let (sol, _) = two_stage_optimize(&channel, &counts, p_max, &gammas, &opt)
                    .map_err(|source| HarnessError::Solver { trial, source })?;
                let mse = aggregation_mse(&sol.power, &sol.beams.aggregation, &channel, &counts);
                let sinrs: Vec<f64> = (0..counts.devices())
                    .map(|k| sinr(k, &sol.power, &sol.beams, &channel, &counts))
                    .collect();
                let rate =
                    sum_rate(&sinrs, r.bandwidth_hz, r.rate_backoff_b1, r.sinr_backoff_b2);
                Ok((mse, rate))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n = per_trial.len() as f64;
        let (mean_mse, se_mse) = mean_se(per_trial.iter().map(|p| p.0));
        let (mean_rate, se_rate) = mean_se(per_trial.iter().map(|p| p.1));
        let _ = writeln!(csv, "{n_r},{n},{mean_mse},{se_mse},{mean_rate},{se_rate}");
    }

    Ok(vec![write_artifact(&out_dir.join("antenna_sweep.csv"), &csv)?])
}

fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    assert!(n >= 1.0);
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------------------
// train: end-to-end learning through the simulated uplink
// ---------------------------------------------------------------------------

fn parse_modes(names: &[String]) -> Result<Vec<Mode>, HarnessError> {
    if names.is_empty() {
        return Err(HarnessError::Config("at least one training mode is required".into()));
    }
    names.iter().map(|s| Mode::from_str(s).map_err(HarnessError::Config)).collect()
}

/// Static design reused across every round of a training run: topology and
/// fading are drawn once from the master seed, then the transceiver is
/// optimized for that realization.
fn design_for_training(
    config: &ExperimentConfig,
) -> Result<(ChannelRealization, crate::transceiver::TransceiverSolution), HarnessError> {
    let channel = config.channel_for_trial(0);
    let counts = config.data_counts();
    let (sol, _) = two_stage_optimize(
        &channel,
        &counts,
        config.p_max_watts(),
        &config.gamma_min_per_device(),
        &config.optimizer.to_config(),
    )
    .map_err(|source| HarnessError::Solver { trial: 0, source })?;
    Ok((channel, sol))
}

fn step_size(config: &ExperimentConfig, default_eta: f64) -> StepSize {
    match config.learning.decreasing {
        Some(d) => StepSize::Decreasing { lambda: d.lambda, tau: d.tau },
        None => StepSize::Fixed(config.learning.eta.unwrap_or(default_eta)),
    }
}

/// Runs the configured training experiment (synthetic quadratic task or the
/// image classifier) for every mode × seed combination. Each run streams one
/// JSONL file of per-round records; a CSV summarizes the final state of all
/// runs.
pub fn run_train(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let modes = parse_modes(&config.learning.modes)?;
    match config.learning.task {
        TaskKind::Quadratic => train_quadratic(config, &modes, out_dir),
        TaskKind::Mnist => train_mnist(config, &modes, out_dir),
    }
}

fn train_quadratic(
    config: &ExperimentConfig,
    modes: &[Mode],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let lc = &config.learning;
    let q = &lc.quadratic;
    let devices = config.topology.devices;
    let task = make_quadratic_task(
        seeding::mix(config.seed, &[0x7A51]),
        q.dimension,
        devices,
        q.samples_per_device,
        q.mu,
        q.l,
    );
    let (channel, solution) = design_for_training(config)?;
    let counts = config.data_counts();
    let nominal_eta = 1.0 / q.l;
    let step = step_size(config, nominal_eta);
    let mut rng = seeding::rng(config.seed, &[0x57A7]);
    let w0: Vec<f64> = (0..q.dimension).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

    let mut artifacts = Vec::new();
    let mut summary = config_comment_block(config);
    summary.push_str("task,mode,seed,rounds,final_loss,final_gap,final_psi,cumulative_loss\n");

    for s in 0..lc.seeds {
        for &mode in modes {
            let train_config = TrainConfig {
                mode,
                counts: counts.clone(),
                step,
                cl_sampling: if lc.accumulate {
                    ClSampling::Accumulated
                } else {
                    ClSampling::PerRound
                },
                mixup: None,
                split: SplitStrategy::GlobalWithoutReplacement,
                gate: None,
                pool_cap: None,
                master_seed: seeding::mix(config.seed, &[0x4242, s]),
            };

            // The closed-form gap theory covers the hybrid modes at the
            // nominal fixed step; calibrate its constants on this exact run.
            let bound = if matches!(mode, Mode::SemiFl | Mode::SemiFlErrorFree)
                && step == StepSize::Fixed(nominal_eta)
            {
                let (params, g0) = calibrate_gap_params(
                    &task,
                    &train_config,
                    &channel,
                    &solution,
                    lc.rounds,
                    &w0,
                )?;
                let (rho1, rho2) = rho_params(&params)?;
                let phi = if mode == Mode::SemiFl {
                    phi_t(&solution, &channel, &params)
                } else {
                    0.0
                };
                Some((rho1, rho2, phi, g0))
            } else {
                None
            };

            let mut trainer =
                Trainer::new(Task::Quadratic(task.clone()), train_config, w0.clone());
            let meta = JsonlMeta {
                config_fnv1a: format!("0x{:016x}", config.config_hash()),
                master_seed: config.seed,
                mode: mode.to_string(),
                run_seed: s,
                task: "quadratic",
                config,
            };
            let mut jsonl = serde_json::to_string(&meta)?;
            jsonl.push('\n');

            let mut psi = bound.map(|(_, _, _, g0)| g0);
            let mut cumulative_loss = 0.0;
            let mut last: Option<RoundMetrics> = None;
            for _ in 0..lc.rounds {
                let m = trainer.run_round(&channel, &solution)?;
                cumulative_loss += m.loss;
                if let (Some(p), Some((rho1, rho2, phi, _))) = (psi.as_mut(), bound) {
                    *p = rho1 * *p + rho2 + phi;
                }
                let record = TrainRecord {
                    metrics: m.clone(),
                    psi,
                    phi: bound.map(|b| b.2),
                    accuracy: None,
                    cumulative_loss,
                };
                jsonl.push_str(&serde_json::to_string(&record)?);
                jsonl.push('\n');
                last = Some(m);
            }

            let name = format!("train_{mode}_s{s}.jsonl");
            artifacts.push(write_artifact(&out_dir.join(name), &jsonl)?);
            let last = last.expect("at least one round");
            let _ = writeln!(
                summary,
                "quadratic,{mode},{s},{},{},{},{},{}",
                lc.rounds,
                last.loss,
                fmt_opt(last.gap),
                fmt_opt(psi),
                cumulative_loss,
            );
        }
    }

    artifacts.push(write_artifact(&out_dir.join("train_summary.csv"), &summary)?);
    Ok(artifacts)
}

fn mnist_dir(config: &ExperimentConfig) -> Result<PathBuf, HarnessError> {
    config
        .learning
        .mnist
        .data_dir
        .clone()
        .or_else(data::data_dir_from_env)
        .ok_or_else(|| {
            HarnessError::Config(format!(
                "image training needs a dataset directory: set learning.mnist.data_dir \
                 or the {} environment variable",
                data::DATA_DIR_ENV
            ))
        })
}

fn train_mnist(
    config: &ExperimentConfig,
    modes: &[Mode],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let lc = &config.learning;
    let ms = &lc.mnist;
    let dir = mnist_dir(config)?;
    let train = data::load_mnist_split(&dir, Split::Train)?;
    let test = data::load_mnist_split(&dir, Split::Test)?;

    let devices = config.topology.devices;
    let need = devices * ms.shard_per_device;
    if need > train.len() {
        return Err(HarnessError::Config(format!(
            "{need} training samples requested ({} devices x {} per shard) but only {} available",
            devices,
            ms.shard_per_device,
            train.len()
        )));
    }

    // Deterministic shards: shuffle the corpus once from the master seed and
    // hand out contiguous blocks.
    let mut indices: Vec<usize> = (0..train.len()).collect();
    indices.shuffle(&mut seeding::rng(config.seed, &[0x0D5E]));
    indices.truncate(need);
    let samples: Vec<Sample> = indices
        .iter()
        .map(|&i| Sample { x: train.feature(i), y: train.one_hot(i) })
        .collect();
    let device_shards: Vec<Vec<usize>> =
        (0..devices).map(|d| (d * ms.shard_per_device..(d + 1) * ms.shard_per_device).collect()).collect();

    let classifier =
        MlpClassifier { input: train.feature_dim(), hidden: ms.hidden_units, output: 10 };
    let eval_count = ms.eval_samples.min(test.len());
    let eval: Vec<Sample> =
        (0..eval_count).map(|i| Sample { x: test.feature(i), y: test.one_hot(i) }).collect();

    let (channel, solution) = design_for_training(config)?;
    let counts = config.data_counts();
    let step = step_size(config, 0.01);

    let mut artifacts = Vec::new();
    let mut summary = config_comment_block(config);
    summary.push_str("task,mode,seed,rounds,final_loss,final_accuracy,cumulative_loss\n");

    for s in 0..lc.seeds {
        let w0 = classifier.init_params(seeding::mix(config.seed, &[0xA110, s]));
        for &mode in modes {
            let mixup = (lc.mixup_enabled
                && matches!(mode, Mode::SemiFl | Mode::SemiFlErrorFree))
            .then(|| MixupConfig { alpha: lc.mixup_alpha, noise_sigma: lc.mixup_noise_sigma });
            let train_config = TrainConfig {
                mode,
                counts: counts.clone(),
                step,
                cl_sampling: if lc.accumulate {
                    ClSampling::Accumulated
                } else {
                    ClSampling::PerRound
                },
                mixup,
                split: SplitStrategy::ShardWithReplacement,
                gate: (mode == Mode::SemiFl).then(|| config.rate_gate()),
                pool_cap: ms.pool_cap,
                master_seed: seeding::mix(config.seed, &[0x4242, s]),
            };
            let mut trainer = Trainer::new(
                Task::Mlp {
                    classifier,
                    samples: samples.clone(),
                    device_shards: device_shards.clone(),
                },
                train_config,
                w0.clone(),
            );

            let meta = JsonlMeta {
                config_fnv1a: format!("0x{:016x}", config.config_hash()),
                master_seed: config.seed,
                mode: mode.to_string(),
                run_seed: s,
                task: "mnist",
                config,
            };
            let mut jsonl = serde_json::to_string(&meta)?;
            jsonl.push('\n');

            let mut cumulative_loss = 0.0;
            let mut last_loss = f64::NAN;
            let mut last_accuracy = f64::NAN;
            for t in 1..=lc.rounds {
                let m = trainer.run_round(&channel, &solution)?;
                cumulative_loss += m.loss;
                last_loss = m.loss;
                let accuracy = (t % ms.eval_every == 0 || t == lc.rounds)
                    .then(|| classifier.accuracy(&trainer.model, &eval));
                if let Some(a) = accuracy {
                    last_accuracy = a;
                }
                let record = TrainRecord {
                    metrics: m,
                    psi: None,
                    phi: None,
                    accuracy,
                    cumulative_loss,
                };
                jsonl.push_str(&serde_json::to_string(&record)?);
                jsonl.push('\n');
            }

            let name = format!("train_{mode}_s{s}.jsonl");
            artifacts.push(write_artifact(&out_dir.join(name), &jsonl)?);
            let _ = writeln!(
                summary,
                "mnist,{mode},{s},{},{last_loss},{last_accuracy},{cumulative_loss}",
                lc.rounds,
            );
        }
    }

    artifacts.push(write_artifact(&out_dir.join("train_summary.csv"), &summary)?);
    Ok(artifacts)
}

// ---------------------------------------------------------------------------
// bounds: closed-form gap trajectories for one concrete design
// ---------------------------------------------------------------------------

/// Metadata accompanying the bound table: contraction parameters, distortion
/// terms, calibrated constants, and the error-free limits.
#[derive(Debug, Serialize, Deserialize)]
pub struct BoundsMeta {
    pub config_fnv1a: String,
    pub master_seed: u64,
    pub initial_gap: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub phi: f64,
    pub fl_phi: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub g2: f64,
    pub corpus: u64,
    pub limits: ErrorFreeLimits,
    pub config: ExperimentConfig,
}

/// Evaluates the closed-form optimality-gap recursions (hybrid, accumulated
/// variant, federated and centralized references) for one concrete design,
/// calibrating the theory constants on a pilot run of the configured
/// quadratic task.
pub fn run_bounds(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let lc = &config.learning;
    let q = &lc.quadratic;
    let devices = config.topology.devices;
    let task = make_quadratic_task(
        seeding::mix(config.seed, &[0x7A51]),
        q.dimension,
        devices,
        q.samples_per_device,
        q.mu,
        q.l,
    );
    let (channel, solution) = design_for_training(config)?;
    let counts = config.data_counts();
    let train_config = TrainConfig {
        mode: Mode::SemiFl,
        counts: counts.clone(),
        step: StepSize::Fixed(1.0 / q.l),
        cl_sampling: ClSampling::PerRound,
        mixup: None,
        split: SplitStrategy::GlobalWithoutReplacement,
        gate: None,
        pool_cap: None,
        master_seed: seeding::mix(config.seed, &[0x4242, 0]),
    };
    let mut rng = seeding::rng(config.seed, &[0x57A7]);
    let w0: Vec<f64> = (0..q.dimension).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

    let (params, g0) =
        calibrate_gap_params(&task, &train_config, &channel, &solution, lc.rounds, &w0)?;
    let (rho1, rho2) = rho_params(&params)?;
    let phi = phi_t(&solution, &channel, &params);
    let fl_phi = fl_phi_t(&solution, &channel, &params);
    let rounds = lc.rounds as usize;
    let phis = vec![phi; rounds];
    let fl_phis = vec![fl_phi; rounds];
    // The accumulated refinement assumes the growing pool t·N_c still fits
    // inside the corpus (fresh samples every round) and dominates only when
    // the corpus holds at least twice the per-round local pool; outside that
    // domain the column stays empty.
    let acc_horizon = if counts.n_c() > 0 && params.n >= 2 * counts.n_f() {
        params.n / counts.n_c()
    } else {
        0
    };

    let mut csv = config_comment_block(config);
    csv.push_str("t,semifl,semifl_accumulated,fl,cl\n");
    for t in 1..=lc.rounds {
        let i = t as usize;
        let s = semifl_gap(t, g0, &params, &phis[..i])?;
        let acc = if t <= acc_horizon {
            Some(accumulated_gap(t, g0, &params, &phis[..i])?)
        } else {
            None
        };
        let (fl, cl) = fl_cl_gaps(t, g0, &params, &fl_phis[..i])?;
        let _ = writeln!(csv, "{t},{s},{},{fl},{cl}", fmt_opt(acc));
    }

    let meta = BoundsMeta {
        config_fnv1a: format!("0x{:016x}", config.config_hash()),
        master_seed: config.seed,
        initial_gap: g0,
        rho1,
        rho2,
        phi,
        fl_phi,
        xi1: params.xi1,
        xi2: params.xi2,
        g2: params.g2,
        corpus: params.n,
        limits: error_free_limits(&params),
        config: config.clone(),
    };
    let mut meta_json = serde_json::to_string_pretty(&meta)?;
    meta_json.push('\n');

    Ok(vec![
        write_artifact(&out_dir.join("bounds.csv"), &csv)?,
        write_artifact(&out_dir.join("bounds_meta.json"), &meta_json)?,
    ])
}
