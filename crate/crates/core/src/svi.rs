//! Uncollapsed stochastic variational inference for finite HMMs, the
//! baseline the collapsed algorithm is compared against.

use ndarray::{Array2, Axis};

use crate::emissions::EmissionPrior;
use crate::engine::{initialize_stats, with_step, Executor, Schedule};
use crate::error::{Error, Result};
use crate::messages::{LocalStats, SurrogateParams};
use crate::special::psi;

/// Dirichlet variational parameters for every transition and emission row.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletRows {
    /// (K+1) × K.
    pub trans_posterior: Array2<f64>,
    /// K × V.
    pub emit_posterior: Array2<f64>,
}

/// Symmetric Dirichlet priors of the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct SviPriors {
    pub trans: f64,
    pub emit: EmissionPrior,
}

impl DirichletRows {
    pub fn states(&self) -> usize {
        self.trans_posterior.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.emit_posterior.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.states();
        if self.trans_posterior.nrows() != k + 1 || self.emit_posterior.nrows() != k {
            return Err(Error::Invariant("Dirichlet rows disagree on K".into()));
        }
        if let Some(bad) = self
            .trans_posterior
            .iter()
            .chain(self.emit_posterior.iter())
            .find(|&&x| !(x > 0.0 && x.is_finite()))
        {
            return Err(Error::Invariant(format!("Dirichlet parameter {bad} is not positive")));
        }
        Ok(())
    }

    /// Prior plus exponential random mass (same policy as the collapsed
    /// statistics).
    pub fn initialize(states: usize, priors: &SviPriors, token_count: usize, seed: u64) -> Result<Self> {
        let init = initialize_stats(states, priors.emit.vocab_size(), token_count, seed)?;
        let mut rows = DirichletRows {
            trans_posterior: init.trans + priors.trans,
            emit_posterior: init.emit.expected,
        };
        for mut row in rows.emit_posterior.axis_iter_mut(Axis(0)) {
            row.zip_mut_with(&ndarray::ArrayView1::from(&priors.emit.lambda1), |x, &l| *x += l);
        }
        Ok(rows)
    }

    /// Posterior-mean point estimate, used for predictive evaluation.
    pub fn mean_params(&self) -> SurrogateParams {
        let normalize = |m: &Array2<f64>| {
            let mut out = m.clone();
            for mut row in out.axis_iter_mut(Axis(0)) {
                let s = row.sum();
                row.mapv_inplace(|x| x / s);
            }
            out
        };
        SurrogateParams::new_unchecked(normalize(&self.trans_posterior), normalize(&self.emit_posterior))
    }

    /// Transition mass in excess of the prior, used for `K_effective`.
    pub fn excess_transitions(&self, prior: f64) -> Array2<f64> {
        self.trans_posterior.mapv(|x| (x - prior).max(0.0))
    }
}

fn geometric_rows(m: &Array2<f64>, normalize: bool) -> Array2<f64> {
    let mut out = Array2::zeros(m.dim());
    for (src, mut dst) in m.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let log_total = psi(src.sum());
        dst.zip_mut_with(&src, |d, &l| *d = (psi(l) - log_total).exp());
        if normalize {
            let s = dst.sum();
            dst.mapv_inplace(|x| x / s);
        }
    }
    out
}

/// Mean-field message parameters `exp(E[log θ])`, `exp(E[log φ])`, with rows
/// renormalized.
pub fn svi_surrogate(rows: &DirichletRows) -> Result<SurrogateParams> {
    rows.validate()?;
    Ok(SurrogateParams::new_unchecked(
        geometric_rows(&rows.trans_posterior, true),
        geometric_rows(&rows.emit_posterior, true),
    ))
}

/// The weights mean-field inference actually runs on: `exp(E[log θ])` and
/// `exp(E[log φ])` as they are, each row summing to less than one.
///
/// Rescaling a row by a state-dependent constant reweights whole paths, so
/// the renormalized rows of [`svi_surrogate`] would give different
/// marginals. The `loglik` of a posterior computed from these weights is the
/// log normalizer of the subnormalized chain, not a likelihood.
pub fn svi_message_params(rows: &DirichletRows) -> Result<SurrogateParams> {
    rows.validate()?;
    Ok(SurrogateParams::new_unchecked(
        geometric_rows(&rows.trans_posterior, false),
        geometric_rows(&rows.emit_posterior, false),
    ))
}

/// `rows ← (1-ρ)·rows + ρ·(prior + scale·local)`.
pub fn blend_rows(rows: &mut DirichletRows, local: &LocalStats, priors: &SviPriors, rho: f64, scale: f64) {
    let keep = 1.0 - rho;
    rows.trans_posterior
        .zip_mut_with(&local.trans, |r, &l| *r = keep * *r + rho * (priors.trans + scale * l));
    for (mut row, loc) in rows.emit_posterior.axis_iter_mut(Axis(0)).zip(local.emit.axis_iter(Axis(0))) {
        for ((r, &l), &p) in row.iter_mut().zip(loc.iter()).zip(&priors.emit.lambda1) {
            *r = keep * *r + rho * (p + scale * l);
        }
    }
}

/// One SVI minibatch step.
pub fn svi_step(
    rows: &DirichletRows,
    batch: &[&[u32]],
    corpus_size: usize,
    sched: &mut Schedule,
    priors: &SviPriors,
    exec: &Executor,
) -> Result<DirichletRows> {
    let params = svi_message_params(rows)?;
    let stats = exec.infer_batch(&params, batch, false).map_err(|e| with_step(e, sched.step))?;
    let mut next = rows.clone();
    blend_rows(&mut next, &stats.local, priors, sched.step_size(), corpus_size as f64 / batch.len() as f64);
    sched.step += 1;
    Ok(next)
}
