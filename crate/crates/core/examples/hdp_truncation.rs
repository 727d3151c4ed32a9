//! Over-truncated models: data from 3 states, fitted with K = 10. The HDP
//! prior lets SCVI-HDP-HMM leave surplus states empty.
//!
//!     cargo run --release --example hdp_truncation -- [seeds]

use scvi::corpus::split;
use scvi::synthetic::{generate_synthetic, SyntheticSpec};
use scvi::train::{train, Algorithm, TrainConfig};

fn main() -> scvi::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let spec = SyntheticSpec::random(3, 20, 0.5, 0.3, 2000, 10, 30, 11)?;
    let (corpus, truth) = generate_synthetic(&spec)?;
    let (train_set, test_set) = split(&corpus, 0.9, 0)?;
    println!("generating model: {:.5}", truth.per_step_loglik(&test_set.sequences)?);

    println!("seed  algorithm     held-out LL  K_eff");
    for seed in 0..seeds {
        for algorithm in [Algorithm::ScviHmm, Algorithm::ScviHdpHmm] {
            let config = TrainConfig {
                algorithm,
                states: 10,
                kappa: 0.7,
                minibatch: 50,
                large_batch: 200,
                passes: 20,
                seed,
                ..TrainConfig::default()
            };
            let out = train(&train_set, &test_set.sequences, &config)?;
            let last = out.metrics.last().expect("final record");
            println!("{seed:4}  {:12}  {:11.5}  {:5}", algorithm.name(), last.heldout_ll, last.k_effective);
        }
    }
    Ok(())
}
