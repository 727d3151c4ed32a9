//! State marginals of a short sequence under a fixed 2-state HMM.
//!
//!     cargo run --example forward_backward

use ndarray::array;
use scvi::messages::{forward_backward, forward_loglik, local_stats, SurrogateParams};

fn main() -> scvi::Result<()> {
    // Row 0 is the start distribution.
    let trans = array![[0.6, 0.4], [0.7, 0.3], [0.4, 0.6]];
    let emit = array![[0.5, 0.4, 0.1], [0.1, 0.3, 0.6]];
    let params = SurrogateParams::new(trans, emit)?;
    let seq = [0u32, 1, 2];

    let post = forward_backward(&params, &seq)?;
    println!("log p(x) = {:.6}  (forward only: {:.6})", post.loglik, forward_loglik(&params, &seq)?);
    for (t, row) in post.unary.rows().into_iter().enumerate() {
        println!("t={t}  q(z=0) = {:.4}  q(z=1) = {:.4}", row[0], row[1]);
    }

    let stats = local_stats(&post, &seq, 3)?;
    println!("expected transition counts (start row first):\n{:.4}", stats.trans);
    println!("expected emission counts:\n{:.4}", stats.emit);
    Ok(())
}
