//! Train SCVI-HMM on a corpus sampled from a known 3-state HMM and compare
//! its held-out per-token log-likelihood with the generating model's.
//!
//!     cargo run --release --example synthetic_recovery -- [seed]

use scvi::corpus::split;
use scvi::synthetic::{generate_synthetic, SyntheticSpec};
use scvi::train::{train, Algorithm, TrainConfig};

fn main() -> scvi::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = SyntheticSpec::random(3, 20, 0.5, 0.3, 2000, 10, 30, seed)?;
    let (corpus, truth) = generate_synthetic(&spec)?;
    let (train_set, test_set) = split(&corpus, 0.9, seed)?;

    let config = TrainConfig {
        algorithm: Algorithm::ScviHmm,
        states: 3,
        kappa: 0.7,
        minibatch: 50,
        large_batch: 50,
        passes: 10,
        seed,
        ..TrainConfig::default()
    };
    let out = train(&train_set, &test_set.sequences, &config)?;
    let oracle = truth.per_step_loglik(&test_set.sequences)?;

    println!("pass  held-out LL  gap to truth");
    for r in &out.metrics {
        println!("{:4.1}  {:11.5}  {:12.5}", r.pass, r.heldout_ll, oracle - r.heldout_ll);
    }
    println!("generating model: {oracle:.5}");
    Ok(())
}
