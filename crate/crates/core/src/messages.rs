//! Forward–backward over the surrogate HMM.
//!
//! State 0 is the start state: it only appears as `z_0` and owns row 0 of the
//! transition matrix. Emitting states are indexed `0..K` in the emission
//! matrix and `1..=K` as transition-row indices.

use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};

/// Point parameters of the per-sequence variational HMM.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams {
    /// (K+1) × K; row 0 is the start distribution.
    pub trans: Array2<f64>,
    /// K × V.
    pub emit: Array2<f64>,
}

const ROW_TOLERANCE: f64 = 1e-10;

impl SurrogateParams {
    pub fn new(trans: Array2<f64>, emit: Array2<f64>) -> Result<Self> {
        let k = emit.nrows();
        if k == 0 || emit.ncols() == 0 {
            return Err(Error::InvalidArgument("surrogate needs at least one state and one symbol".into()));
        }
        if trans.dim() != (k + 1, k) {
            return Err(Error::InvalidArgument(format!(
                "transition matrix is {:?}, expected ({}, {k})",
                trans.dim(),
                k + 1
            )));
        }
        for (name, m) in [("transition", &trans), ("emission", &emit)] {
            for (i, row) in m.axis_iter(Axis(0)).enumerate() {
                if row.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                    return Err(Error::Invariant(format!("{name} row {i} has a non-positive entry")));
                }
                let s = row.sum();
                if (s - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::Invariant(format!("{name} row {i} sums to {s}")));
                }
            }
        }
        Ok(SurrogateParams { trans, emit })
    }

    pub(crate) fn new_unchecked(trans: Array2<f64>, emit: Array2<f64>) -> Self {
        SurrogateParams { trans, emit }
    }

    pub fn states(&self) -> usize {
        self.emit.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.emit.ncols()
    }

    fn check_sequence(&self, seq: &[u32]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        let v = self.vocab_size();
        if let Some(&w) = seq.iter().find(|&&w| w as usize >= v) {
            return Err(Error::OutOfVocabulary { index: w as usize, size: v });
        }
        Ok(())
    }
}

/// State marginals of one sequence under the surrogate HMM.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePosterior {
    /// T × K, `q(z_t = k)`.
    pub unary: Array2<f64>,
    /// T × (K+1) × K, slot t holds `q(z_{t-1} = k, z_t = k')`; slot 0 only
    /// has mass in the start row.
    pub pairwise: Array3<f64>,
    /// Log normalizer of the chain.
    pub loglik: f64,
}

impl SequencePosterior {
    pub fn len(&self) -> usize {
        self.unary.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.nrows() == 0
    }

    pub fn states(&self) -> usize {
        self.unary.ncols()
    }
}

/// Scaled forward pass. Returns normalized alphas (T × K) and per-step scales.
fn forward(params: &SurrogateParams, seq: &[u32]) -> (Array2<f64>, Vec<f64>) {
    let k = params.states();
    let t_len = seq.len();
    let trans = &params.trans;
    let emit = &params.emit;
    let mut alpha = Array2::<f64>::zeros((t_len, k));
    let mut scales = Vec::with_capacity(t_len);

    let x0 = seq[0] as usize;
    let mut c = 0.0;
    for j in 0..k {
        let a = trans[[0, j]] * emit[[j, x0]];
        alpha[[0, j]] = a;
        c += a;
    }
    alpha.row_mut(0).mapv_inplace(|a| a / c);
    scales.push(c);

    let mut next = vec![0.0; k];
    for t in 1..t_len {
        next.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..k {
            let a = alpha[[t - 1, i]];
            if a == 0.0 {
                continue;
            }
            let row = trans.row(i + 1);
            for (n, &p) in next.iter_mut().zip(row.iter()) {
                *n += a * p;
            }
        }
        let x = seq[t] as usize;
        let mut c = 0.0;
        for j in 0..k {
            next[j] *= emit[[j, x]];
            c += next[j];
        }
        let inv = 1.0 / c;
        for j in 0..k {
            alpha[[t, j]] = next[j] * inv;
        }
        scales.push(c);
    }
    (alpha, scales)
}

/// Log-likelihood of `seq` under the surrogate HMM (forward recursion only).
pub fn forward_loglik(params: &SurrogateParams, seq: &[u32]) -> Result<f64> {
    params.check_sequence(seq)?;
    let (_, scales) = forward(params, seq);
    Ok(scales.iter().map(|c| c.ln()).sum())
}

/// Exact unary and pairwise marginals of the surrogate HMM for one sequence.
pub fn forward_backward(params: &SurrogateParams, seq: &[u32]) -> Result<SequencePosterior> {
    params.check_sequence(seq)?;
    let k = params.states();
    let t_len = seq.len();
    let trans = &params.trans;
    let emit = &params.emit;
    let (alpha, scales) = forward(params, seq);

    // beta_t scaled so that alpha_t * beta_t is the unary marginal.
    let mut beta = Array2::<f64>::zeros((t_len, k));
    beta.row_mut(t_len - 1).fill(1.0);
    let mut weighted = vec![0.0; k];
    for t in (0..t_len - 1).rev() {
        let x = seq[t + 1] as usize;
        let inv = 1.0 / scales[t + 1];
        for j in 0..k {
            weighted[j] = emit[[j, x]] * beta[[t + 1, j]] * inv;
        }
        for i in 0..k {
            let row = trans.row(i + 1);
            beta[[t, i]] = row.iter().zip(&weighted).map(|(p, w)| p * w).sum();
        }
    }

    let unary = &alpha * &beta;
    let mut pairwise = Array3::<f64>::zeros((t_len, k + 1, k));
    for j in 0..k {
        pairwise[[0, 0, j]] = unary[[0, j]];
    }
    for t in 1..t_len {
        let x = seq[t] as usize;
        let inv = 1.0 / scales[t];
        for j in 0..k {
            weighted[j] = emit[[j, x]] * beta[[t, j]] * inv;
        }
        for i in 0..k {
            let a = alpha[[t - 1, i]];
            for j in 0..k {
                pairwise[[t, i + 1, j]] = a * trans[[i + 1, j]] * weighted[j];
            }
        }
    }

    let loglik = scales.iter().map(|c| c.ln()).sum();
    Ok(SequencePosterior { unary, pairwise, loglik })
}

/// Expected transition counts and emission statistics of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStats {
    /// (K+1) × K expected transition counts, row 0 from the start state.
    pub trans: Array2<f64>,
    /// K × V expected emission counts.
    pub emit: Array2<f64>,
}

impl LocalStats {
    pub fn zeros(states: usize, vocab_size: usize) -> Self {
        LocalStats {
            trans: Array2::zeros((states + 1, states)),
            emit: Array2::zeros((states, vocab_size)),
        }
    }

    /// Adds the statistics of one sequence posterior.
    pub fn accumulate(&mut self, post: &SequencePosterior, seq: &[u32]) {
        self.trans += &post.pairwise.sum_axis(Axis(0));
        for (row, &w) in post.unary.axis_iter(Axis(0)).zip(seq) {
            let mut col = self.emit.column_mut(w as usize);
            col += &row;
        }
    }

    pub fn add_assign(&mut self, other: &LocalStats) {
        self.trans += &other.trans;
        self.emit += &other.emit;
    }

    pub fn is_finite(&self) -> bool {
        self.trans.iter().chain(self.emit.iter()).all(|x| x.is_finite())
    }
}

/// Collects `E[C^n]` and `E[t(x^n, z^n)]` from a posterior.
pub fn local_stats(post: &SequencePosterior, seq: &[u32], vocab_size: usize) -> Result<LocalStats> {
    if post.len() != seq.len() {
        return Err(Error::InvalidArgument(format!(
            "posterior covers {} steps but the sequence has {}",
            post.len(),
            seq.len()
        )));
    }
    if let Some(&w) = seq.iter().find(|&&w| w as usize >= vocab_size) {
        return Err(Error::OutOfVocabulary { index: w as usize, size: vocab_size });
    }
    let mut stats = LocalStats::zeros(post.states(), vocab_size);
    stats.accumulate(post, seq);
    Ok(stats)
}
