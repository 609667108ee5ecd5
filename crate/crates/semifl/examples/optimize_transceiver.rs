//! Designs the joint transceiver for one channel draw of the reference
//! deployment and shows the two-stage solver at work: the monotone objective
//! trace, the constraint check, and the comparison against classical
//! reference allocations.
//!
//! Run with: cargo run --release --example optimize_transceiver

use semifl::harness::ExperimentConfig;
use semifl::optimizer::{benchmark_allocations, two_stage_optimize, BenchmarkKind};
use semifl::transceiver::{aggregation_mse, sinr};

fn main() {
    let config = ExperimentConfig::default();
    let channel = config.channel_for_trial(0);
    let counts = config.data_counts();
    let gammas = config.gamma_min_per_device();
    let opt = config.optimizer.to_config();

    println!(
        "{} devices, {} antennas, SINR floor {:.4}, error cap {}",
        counts.devices(),
        config.channel.antennas,
        gammas[0],
        opt.mse_tolerance
    );

    let (sol, diag) =
        two_stage_optimize(&channel, &counts, config.p_max_watts(), &gammas, &opt).unwrap();

    println!("\nstage-1 objective trace (starting point first):");
    for (i, u) in diag.objective_trace.iter().enumerate() {
        println!("  iter {i:>3}: {u:.6e}");
    }
    println!(
        "converged: {} after {} iterations, worst KKT residual {:.2e}",
        diag.converged, diag.outer_iterations, diag.kkt_residual
    );

    // Independent constraint re-check through the signal model.
    let mse = aggregation_mse(&sol.power, &sol.beams.aggregation, &channel, &counts);
    let min_sinr = (0..counts.devices())
        .map(|k| sinr(k, &sol.power, &sol.beams, &channel, &counts))
        .fold(f64::INFINITY, f64::min);
    let max_used = (0..counts.devices())
        .map(|k| sol.power.consumed(&counts, k))
        .fold(0.0f64, f64::max);
    println!("\nfeasible: {}", sol.feasible);
    println!("  aggregation error {mse:.4e} <= cap {}", opt.mse_tolerance);
    println!("  min SINR {min_sinr:.4} >= floor {:.4}", gammas[0]);
    println!("  max device power {max_used:.4} <= budget {}", config.p_max_watts());
    assert!(sol.feasible);

    println!("\nobjective vs reference allocations:");
    println!("  joint design: {:.6e}", sol.objective_value);
    for kind in [BenchmarkKind::Mmse, BenchmarkKind::UniformForcing, BenchmarkKind::EqualGain] {
        match benchmark_allocations(
            kind,
            &channel,
            &counts,
            config.p_max_watts(),
            &gammas,
            &opt,
            config.seed,
        ) {
            Ok(s) => println!(
                "  {kind:>12}: {:.6e} (feasible: {})",
                s.objective_value, s.feasible
            ),
            Err(e) => println!("  {kind:>12}: failed ({e})"),
        }
    }
}
