//! Trains the dense image classifier through the full simulated radio
//! (over-the-air gradient aggregation, SINR-gated sample uploads, pairwise
//! sample mixing) and prints the accuracy trajectory.
//!
//! Needs the IDX dataset files; point SEMIFL_DATA_DIR at the directory
//! holding train-images-idx3-ubyte etc., then:
//!
//!   SEMIFL_DATA_DIR=/path/to/mnist cargo run --release --example train_mnist

use std::fs;

use semifl::data;
use semifl::harness::{run_train, CountSettings, ExperimentConfig, TaskKind, TrainRecord};

fn main() {
    if data::data_dir_from_env().is_none() {
        eprintln!("set {} to run this example", data::DATA_DIR_ENV);
        std::process::exit(1);
    }

    let mut config = ExperimentConfig::default();
    config.topology.devices = 8;
    config.channel.antennas = 8;
    config.counts = CountSettings { local_per_device: 16, upload_per_device: 8 };
    config.learning.task = TaskKind::Mnist;
    config.learning.modes = vec!["semifl".into()];
    config.learning.rounds = 60;
    config.learning.seeds = 1;
    config.learning.eta = Some(0.05);
    config.learning.mnist.shard_per_device = 1000;
    config.learning.mnist.eval_samples = 1000;
    config.learning.mnist.eval_every = 10;

    let out = std::env::temp_dir().join("semifl_mnist_example");
    let files = run_train(&config, &out).unwrap();
    for f in &files {
        println!("wrote {}", f.display());
    }

    let stream = fs::read_to_string(out.join("train_semifl_s0.jsonl")).unwrap();
    println!("\n{:>6} {:>10} {:>10} {:>10}", "round", "loss", "accuracy", "delivered");
    let mut last_acc = 0.0;
    for line in stream.lines().skip(1) {
        let rec: TrainRecord = serde_json::from_str(line).unwrap();
        if let Some(acc) = rec.accuracy {
            println!(
                "{:>6} {:>10.4} {:>10.3} {:>10}",
                rec.metrics.round, rec.metrics.loss, acc, rec.metrics.delivered_uploads
            );
            last_acc = acc;
        }
    }
    println!("\nfinal accuracy {last_acc:.3} (chance is 0.1)");
    assert!(last_acc > 0.1, "training through the radio should beat chance");
}
