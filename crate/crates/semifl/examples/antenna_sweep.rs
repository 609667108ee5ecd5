//! Sweeps the base-station array size and reports how the designed
//! aggregation error and uplink sum rate scale with the antenna count.
//!
//! Run with: cargo run --release --example antenna_sweep

use std::fs;

use semifl::harness::{run_sweep_antennas, ExperimentConfig};

fn main() {
    let mut config = ExperimentConfig::default();
    config.trials = 10; // desk scale; raise for tighter error bars

    let out = std::env::temp_dir().join("semifl_antenna_sweep_example");
    let files = run_sweep_antennas(&config, &[4, 8, 16], &out).unwrap();
    for f in &files {
        println!("wrote {}", f.display());
    }

    let csv = fs::read_to_string(out.join("antenna_sweep.csv")).unwrap();
    println!(
        "\n{:>8} {:>14} {:>12} {:>16} {:>12}",
        "antennas", "mean MSE", "SE", "mean rate [Mb/s]", "SE [Mb/s]"
    );
    let mut rates = Vec::new();
    for line in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        println!(
            "{:>8} {:>14.4e} {:>12.2e} {:>16.3} {:>12.3}",
            cols[0] as usize,
            cols[2],
            cols[3],
            cols[4] / 1e6,
            cols[5] / 1e6
        );
        rates.push(cols[4]);
    }
    println!(
        "\nmore antennas help on both axes: rate monotone = {}",
        rates.windows(2).all(|w| w[1] >= w[0])
    );
}
