//! Device topology and per-round Rician fading uplink realizations.
//!
//! Devices are dropped uniformly over a disk around the base station once per
//! experiment; small-scale fading is redrawn independently every round from a
//! seed derived deterministically from (master seed, round index).

use crate::numerics::C64;
use crate::seeding;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("topology file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("topology file parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Static device drop: positions in meters, base station included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub bs_position: [f64; 3],
    pub device_positions: Vec<[f64; 3]>,
}

impl Topology {
    pub fn device_count(&self) -> usize {
        self.device_positions.len()
    }

    /// 3-D device–base-station distance in meters.
    pub fn distance(&self, k: usize) -> f64 {
        let p = self.device_positions[k];
        let b = self.bs_position;
        ((p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2) + (p[2] - b[2]).powi(2)).sqrt()
    }

    /// Azimuth of device k seen from the base station, radians.
    pub fn azimuth(&self, k: usize) -> f64 {
        let p = self.device_positions[k];
        let b = self.bs_position;
        (p[1] - b[1]).atan2(p[0] - b[0])
    }

    /// Serializes to a JSON file for reuse across runs.
    pub fn save(&self, path: &Path) -> Result<(), ChannelError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ChannelError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Large-scale path loss parameters, PL(dB) = offset + slope·log10(d m).
///
/// Defaults follow a standard cellular model (32.6 + 36.7·log10 d); both
/// constants stay configurable for calibration against other drops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    pub offset_db: f64,
    pub slope_db_per_decade: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self { offset_db: 32.6, slope_db_per_decade: 36.7 }
    }
}

impl PathLossModel {
    /// Linear power gain in (0, 1], monotone nonincreasing in distance.
    pub fn gain(&self, distance_m: f64) -> f64 {
        assert!(distance_m > 0.0, "path loss requires a positive distance");
        let pl_db = self.offset_db + self.slope_db_per_decade * distance_m.log10();
        10f64.powf(-pl_db / 10.0).min(1.0)
    }
}

/// Linear power gain under the default path-loss model.
pub fn path_loss_gain(distance_m: f64) -> f64 {
    PathLossModel::default().gain(distance_m)
}

/// One round's channel vectors: `h[k]` has length `n_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<Vec<C64>>,
    pub noise_power: f64,
    pub round_index: u64,
}

impl ChannelRealization {
    pub fn device_count(&self) -> usize {
        self.h.len()
    }

    pub fn antennas(&self) -> usize {
        self.h.first().map_or(0, Vec::len)
    }
}

/// Drops `k` devices uniformly over the disk of `radius_m` at height 0
/// around `bs_position`'s vertical axis.  Deterministic in `seed`.
pub fn sample_topology(seed: u64, k: usize, radius_m: f64, bs_position: [f64; 3]) -> Topology {
    assert!(k >= 1, "at least one device required");
    assert!(radius_m >= 0.0, "radius must be nonnegative");
    let mut rng = seeding::rng(seed, &[0x70_70]);
    let device_positions = (0..k)
        .map(|_| {
            // √u radial profile makes the area density uniform.
            let r = radius_m * rng.gen_range(0.0..1.0f64).sqrt();
            let phi = rng.gen_range(0.0..2.0 * PI);
            [bs_position[0] + r * phi.cos(), bs_position[1] + r * phi.sin(), 0.0]
        })
        .collect();
    Topology { bs_position, device_positions }
}

/// Uniform-linear-array steering vector at half-wavelength spacing toward
/// azimuth `theta`; entries have unit modulus.
pub fn steering_vector(theta: f64, n_r: usize) -> Vec<C64> {
    (0..n_r).map(|n| C64::from_polar(1.0, PI * n as f64 * theta.sin())).collect()
}

/// Draws the round's small-scale fading on top of the static topology:
/// h_k = √pathloss_k (√(κ/(1+κ)) a(θ_k) + √(1/(1+κ)) z_k), z_k ~ CN(0, I).
///
/// Deterministic given (seed, round_index); distinct rounds use disjoint
/// derived streams.
pub fn sample_channel(
    topology: &Topology,
    path_loss: &PathLossModel,
    rician_kappa: f64,
    noise_power: f64,
    round_index: u64,
    seed: u64,
    n_r: usize,
) -> ChannelRealization {
    assert!(rician_kappa >= 0.0, "Rician factor must be nonnegative");
    assert!(n_r >= 1, "at least one receive antenna required");
    let los_scale = (rician_kappa / (1.0 + rician_kappa)).sqrt();
    let nlos_scale = (1.0 / (1.0 + rician_kappa)).sqrt();
    let h = (0..topology.device_count())
        .map(|k| {
            let amp = path_loss.gain(topology.distance(k)).sqrt();
            let los = steering_vector(topology.azimuth(k), n_r);
            let mut rng = seeding::rng(seed, &[0xC4A2, round_index, k as u64]);
            (0..n_r)
                .map(|n| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    // Unit-variance circularly-symmetric entry: each part σ² = 1/2.
                    let scatter = C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
                    (los[n] * los_scale + scatter * nlos_scale) * amp
                })
                .collect()
        })
        .collect();
    ChannelRealization { h, noise_power, round_index }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_stays_in_disk_and_is_deterministic() {
        let t1 = sample_topology(1, 10, 100.0, [0.0, 0.0, 10.0]);
        let t2 = sample_topology(1, 10, 100.0, [0.0, 0.0, 10.0]);
        assert_eq!(t1, t2);
        assert_eq!(t1.device_count(), 10);
        for p in &t1.device_positions {
            assert!(p[0] * p[0] + p[1] * p[1] <= 100.0 * 100.0 + 1e-9);
            assert_eq!(p[2], 0.0);
        }
        // Different seed moves the drop.
        let t3 = sample_topology(2, 10, 100.0, [0.0, 0.0, 10.0]);
        assert_ne!(t1, t3);
    }

    #[test]
    fn degenerate_radius_pins_device_to_origin() {
        let t = sample_topology(9, 1, 0.0, [0.0, 0.0, 10.0]);
        assert!(t.device_positions[0][0].abs() < 1e-12);
        assert!(t.device_positions[0][1].abs() < 1e-12);
        // Distance is then exactly the BS height.
        assert!((t.distance(0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn path_loss_formula_values() {
        assert!((path_loss_gain(1.0) - 10f64.powf(-3.26)).abs() < 1e-15);
        let expected_100 = 10f64.powf(-(32.6 + 36.7 * 2.0) / 10.0);
        assert!((path_loss_gain(100.0) - expected_100).abs() < 1e-18);
    }

    #[test]
    fn path_loss_monotone() {
        let mut prev = path_loss_gain(0.5);
        for i in 1..200 {
            let g = path_loss_gain(0.5 + i as f64);
            assert!(g <= prev + 1e-18);
            prev = g;
        }
    }

    #[test]
    fn los_only_limit_has_pathloss_magnitude() {
        let t = sample_topology(3, 4, 50.0, [0.0, 0.0, 10.0]);
        let pl = PathLossModel::default();
        // κ → ∞: scatter term vanishes, per-entry magnitude is √pathloss.
        let ch = sample_channel(&t, &pl, 1e16, 1e-11, 0, 7, 8);
        for k in 0..4 {
            let amp = pl.gain(t.distance(k)).sqrt();
            for z in &ch.h[k] {
                assert!((z.norm() - amp).abs() < 1e-6 * amp);
            }
        }
    }

    #[test]
    fn rayleigh_limit_second_moment_matches_pathloss() {
        // κ = 0: |entry|² has mean pathloss; Monte-Carlo check within 3 SE.
        let t = sample_topology(5, 1, 80.0, [0.0, 0.0, 10.0]);
        let pl = PathLossModel::default();
        let gain = pl.gain(t.distance(0));
        let draws = 100_000usize;
        let mut sum_acc = 0.0;
        let mut sum_sq = 0.0;
        for r in 0..draws {
            let ch = sample_channel(&t, &pl, 0.0, 1e-11, r as u64, 21, 1);
            let v = ch.h[0][0].norm_sqr();
            sum_acc += v;
            sum_sq += v * v;
        }
        let mean = sum_acc / draws as f64;
        let var = (sum_sq / draws as f64 - mean * mean).max(0.0);
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - gain).abs() <= 3.0 * se,
            "mean {mean:.3e} vs pathloss {gain:.3e} (3 SE = {:.3e})",
            3.0 * se
        );
    }

    #[test]
    fn rician_norm_second_moment_matches_pathloss_times_antennas() {
        let t = sample_topology(6, 1, 80.0, [0.0, 0.0, 10.0]);
        let pl = PathLossModel::default();
        let gain = pl.gain(t.distance(0));
        let n_r = 16;
        let draws = 20_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for r in 0..draws {
            let ch = sample_channel(&t, &pl, 2.0, 1e-11, r as u64, 22, n_r);
            let v: f64 = ch.h[0].iter().map(|z| z.norm_sqr()).sum();
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / draws as f64;
        let expect = gain * n_r as f64;
        let var = (sum_sq / draws as f64 - mean * mean).max(0.0);
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - expect).abs() <= 3.0 * se,
            "mean {mean:.4e} vs expected {expect:.4e} (3 SE = {:.3e})",
            3.0 * se
        );
    }

    #[test]
    fn rounds_are_uncorrelated() {
        // Lag-1 sample correlation of a fixed channel statistic across rounds.
        let t = sample_topology(8, 1, 60.0, [0.0, 0.0, 10.0]);
        let pl = PathLossModel::default();
        let rounds = 100_000usize;
        let xs: Vec<f64> =
            (0..rounds).map(|r| sample_channel(&t, &pl, 2.0, 1e-11, r as u64, 3, 2).h[0][0].re).collect();
        let mean = xs.iter().sum::<f64>() / rounds as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / rounds as f64;
        let cov = xs
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / (rounds - 1) as f64;
        let r = cov / var;
        assert!(r.abs() < 0.01, "lag-1 correlation {r:.4}");
    }

    #[test]
    fn same_seed_same_round_bitwise_identical() {
        let t = sample_topology(4, 3, 70.0, [0.0, 0.0, 10.0]);
        let pl = PathLossModel::default();
        let a = sample_channel(&t, &pl, 2.0, 1e-11, 12, 99, 16);
        let b = sample_channel(&t, &pl, 2.0, 1e-11, 12, 99, 16);
        assert_eq!(a, b);
        let c = sample_channel(&t, &pl, 2.0, 1e-11, 13, 99, 16);
        assert_ne!(a, c);
    }

    #[test]
    fn topology_round_trips_through_file() {
        let t = sample_topology(10, 10, 100.0, [0.0, 0.0, 10.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topology.json");
        t.save(&path).unwrap();
        let back = Topology::load(&path).unwrap();
        assert_eq!(t, back);
    }
}
