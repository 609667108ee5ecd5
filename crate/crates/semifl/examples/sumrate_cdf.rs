//! Builds the empirical sum-rate CDF of the joint design against the
//! maximum-ratio and equal-gain receivers over a handful of channel draws
//! and prints the per-scheme medians.
//!
//! Run with: cargo run --release --example sumrate_cdf

use std::fs;

use semifl::harness::{run_cdf_sumrate, ExperimentConfig};

fn main() {
    let mut config = ExperimentConfig::default();
    config.trials = 20; // desk scale; raise for smoother curves

    let out = std::env::temp_dir().join("semifl_sumrate_example");
    let files = run_cdf_sumrate(&config, &out).unwrap();
    for f in &files {
        println!("wrote {}", f.display());
    }

    let cdf = fs::read_to_string(out.join("sumrate_cdf.csv")).unwrap();
    let mut by_scheme: Vec<(String, Vec<f64>)> = Vec::new();
    for line in cdf.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let mut cols = line.split(',');
        let scheme = cols.next().unwrap().to_string();
        let rate: f64 = cols.next().unwrap().parse().unwrap();
        match by_scheme.iter_mut().find(|(s, _)| *s == scheme) {
            Some((_, v)) => v.push(rate),
            None => by_scheme.push((scheme, vec![rate])),
        }
    }

    println!("\nmedian uplink sum rate over {} draws:", config.trials);
    for (scheme, rates) in &by_scheme {
        // Values arrive sorted per scheme; the middle one is the median.
        let median = rates[rates.len() / 2];
        println!("  {scheme:>6}: {:.3} Mbit/s", median / 1e6);
    }

    let median =
        |name: &str| by_scheme.iter().find(|(s, _)| s == name).map(|(_, v)| v[v.len() / 2]);
    let (joint, mrc, egc) =
        (median("joint").unwrap(), median("mrc").unwrap(), median("egc").unwrap());
    println!("\nordering joint >= mrc >= egc: {}", joint >= mrc && mrc >= egc);
}
