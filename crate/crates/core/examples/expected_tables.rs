//! Expected HDP table counts for one sequence as the number of replicates
//! grows, followed by a full-step update of the stick posterior.
//!
//!     cargo run --example expected_tables

use scvi::hdp::{expected_tables, update_hdp, HdpPosterior, HdpPriors, TableInputs};
use scvi::messages::forward_backward;
use scvi::synthetic::{generate_synthetic, SyntheticSpec};

fn main() -> scvi::Result<()> {
    let spec = SyntheticSpec::random(2, 4, 0.5, 0.5, 1, 12, 12, 5)?;
    let params = generate_synthetic(&spec)?.1.as_params();
    let seq = [0u32, 1, 1, 3, 2, 0, 0, 1, 3, 3, 2, 1];
    let post = forward_backward(&params, &seq)?;
    let inputs = TableInputs::from_posterior(&post);

    let priors = HdpPriors::default();
    let hdp = HdpPosterior::from_prior(2, &priors)?;
    println!("    N  total E[s]  total E[log eta]");
    for n in [1.0, 2.0, 5.0, 10.0, 100.0, 1000.0] {
        let tables = expected_tables(&inputs, n, &hdp)?;
        println!("{n:5}  {:10.4}  {:16.4}", tables.es.sum(), tables.elog_eta.sum());
    }

    let tables = expected_tables(&inputs, 100.0, &hdp)?;
    let updated = update_hdp(&hdp, &tables, 1.0, &priors)?;
    for (k, stick) in updated.sticks().iter().enumerate() {
        println!("stick {k}: Beta({:.3}, {:.3})", stick.u(), stick.v());
    }
    println!("shape of alpha {:.3}, gamma {:.3}", updated.alpha().shape(), updated.gamma().shape());
    Ok(())
}
