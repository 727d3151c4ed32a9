//! SCVI-HMM against the uncollapsed SVI baseline on the same data stream.
//!
//!     cargo run --release --example scvi_vs_svi -- [seeds]

use scvi::corpus::split;
use scvi::synthetic::{generate_synthetic, SyntheticSpec};
use scvi::train::{train, Algorithm, TrainConfig};

fn main() -> scvi::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let spec = SyntheticSpec::random(3, 20, 0.5, 0.3, 2000, 10, 30, 0)?;
    let (corpus, truth) = generate_synthetic(&spec)?;
    let (train_set, test_set) = split(&corpus, 0.9, 0)?;
    println!("generating model: {:.5}", truth.per_step_loglik(&test_set.sequences)?);

    println!("seed  scvi-hmm   svi-hmm");
    let (mut scvi_sum, mut svi_sum) = (0.0, 0.0);
    for seed in 0..seeds {
        let mut lls = [0.0; 2];
        for (slot, algorithm) in [Algorithm::ScviHmm, Algorithm::SviHmm].into_iter().enumerate() {
            let config = TrainConfig {
                algorithm,
                states: 3,
                kappa: 0.7,
                minibatch: 50,
                large_batch: 50,
                passes: 10,
                seed,
                ..TrainConfig::default()
            };
            lls[slot] = train(&train_set, &test_set.sequences, &config)?.metrics.last().expect("final record").heldout_ll;
        }
        println!("{seed:4}  {:9.5}  {:8.5}", lls[0], lls[1]);
        scvi_sum += lls[0];
        svi_sum += lls[1];
    }
    println!("mean  {:9.5}  {:8.5}", scvi_sum / seeds as f64, svi_sum / seeds as f64);
    Ok(())
}
