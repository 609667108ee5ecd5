//! Evaluates the closed-form optimality-gap theory for one concrete
//! transceiver design: the hybrid recursion, its accumulated-pool
//! refinement, the federated and centralized references, and the error-free
//! limits each trajectory approaches.
//!
//! Run with: cargo run --release --example convergence_bounds

use std::fs;

use semifl::harness::{run_bounds, BoundsMeta, ExperimentConfig, QuadraticSettings};

fn main() {
    let mut config = ExperimentConfig::default();
    config.topology.devices = 4;
    config.channel.antennas = 8;
    config.counts.local_per_device = 3;
    config.counts.upload_per_device = 2;
    config.learning.rounds = 200;
    config.learning.quadratic =
        QuadraticSettings { dimension: 6, samples_per_device: 100, mu: 0.8, l: 3.0 };

    let out = std::env::temp_dir().join("semifl_bounds_example");
    let files = run_bounds(&config, &out).unwrap();
    for f in &files {
        println!("wrote {}", f.display());
    }

    let meta: BoundsMeta =
        serde_json::from_str(&fs::read_to_string(out.join("bounds_meta.json")).unwrap()).unwrap();
    println!("\ncalibrated on a pilot run of the configured task:");
    println!("  rho1 = {:.4} (contraction), rho2 = {:.4e}", meta.rho1, meta.rho2);
    println!("  phi = {:.4e} (hybrid distortion), fl variant = {:.4e}", meta.phi, meta.fl_phi);
    println!("  corpus N = {}, initial gap = {:.4e}", meta.corpus, meta.initial_gap);

    println!("\nbound trajectories (excerpt):");
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "t", "hybrid", "accumulated", "federated", "central");
    let csv = fs::read_to_string(out.join("bounds.csv")).unwrap();
    for line in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let t: u64 = cols[0].parse().unwrap();
        if t % 40 == 0 || t == 1 {
            println!(
                "{t:>6} {:>12} {:>12} {:>12} {:>12}",
                short(cols[1]),
                if cols[2].is_empty() { "-".into() } else { short(cols[2]) },
                short(cols[3]),
                short(cols[4])
            );
        }
    }
    println!("(the accumulated column ends once t uploads per round outgrow the corpus)");

    println!("\nerror-free limits (t -> infinity, no radio distortion):");
    println!("  centralized {:.4e} <= hybrid {:.4e} <= federated {:.4e}",
        meta.limits.cl, meta.limits.semifl, meta.limits.fl);
    println!("  hybrid limit exactly zero on the critical schedule: {}", meta.limits.semifl_zero_gap);
}

fn short(v: &str) -> String {
    format!("{:.3e}", v.parse::<f64>().unwrap())
}
