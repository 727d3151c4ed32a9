//! Stochastic collapsed variational inference for (HDP-)HMMs.
//!
//! The collapsed model is summarized by [`GlobalStats`]: expected transition
//! counts and expected emission statistics. Each minibatch freezes a
//! [`SurrogateParams`] built from them, runs forward–backward on every
//! sequence, and replaces the statistics with a weighted average of the old
//! values and the rescaled minibatch statistics.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::emissions::{Categorical, EmissionPrior, EmissionStats};
use crate::error::{Error, Result};
use crate::hdp::{HdpPosterior, TableInputs};
use crate::messages::{forward_backward, forward_loglik, LocalStats, SurrogateParams};

/// Expected collapsed statistics, the memory of the collapsed model.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalStats {
    /// `E[C_{kk'}]`, (K+1) × K with row 0 holding start transitions.
    pub trans: Array2<f64>,
    pub emit: EmissionStats,
}

impl GlobalStats {
    pub fn zeros(states: usize, vocab_size: usize) -> Self {
        GlobalStats {
            trans: Array2::zeros((states + 1, states)),
            emit: EmissionStats::zeros(states, vocab_size),
        }
    }

    pub fn states(&self) -> usize {
        self.trans.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.emit.vocab_size()
    }

    pub fn transition_mass(&self) -> f64 {
        self.trans.sum()
    }

    pub fn emission_mass(&self) -> f64 {
        self.emit.total_mass()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.states();
        if self.trans.nrows() != k + 1 || self.emit.states() != k {
            return Err(Error::Invariant("transition and emission statistics disagree on K".into()));
        }
        if let Some(bad) = self.trans.iter().find(|&&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Invariant(format!("transition statistic {bad} is negative or non-finite")));
        }
        self.emit.validate()
    }

    /// `(1-ρ)·self + ρ·scale·local`.
    pub fn blend(&mut self, local: &LocalStats, rho: f64, scale: f64) {
        let keep = 1.0 - rho;
        let add = rho * scale;
        self.trans.zip_mut_with(&local.trans, |s, &l| *s = keep * *s + add * l);
        self.emit.expected.zip_mut_with(&local.emit, |s, &l| *s = keep * *s + add * l);
        let local_counts = local.emit.sum_axis(Axis(1));
        self.emit.counts.zip_mut_with(&local_counts, |s, &l| *s = keep * *s + add * l);
    }
}

/// Number of states whose incoming expected transition mass exceeds
/// `1e-3` of the total.
pub fn k_effective(trans: &Array2<f64>) -> usize {
    let incoming = trans.sum_axis(Axis(0));
    let total = incoming.sum();
    incoming.iter().filter(|&&m| m > 1e-3 * total).count()
}

/// Step-size schedule `ρ_n = (1 + n)^(-κ)` with minibatch bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kappa: f64,
    pub step: u64,
    pub minibatch_size: usize,
    pub large_batch_size: usize,
}

impl Schedule {
    pub fn new(kappa: f64, minibatch_size: usize, large_batch_size: usize) -> Result<Self> {
        // κ = 0.5 sits on the boundary of the Robbins–Monro conditions but is
        // the customary setting, so it is accepted.
        if !(0.5..=1.0).contains(&kappa) {
            return Err(Error::Config(format!("forgetting rate κ = {kappa} must lie in [0.5, 1]")));
        }
        if minibatch_size == 0 {
            return Err(Error::Config("minibatch size must be at least 1".into()));
        }
        if large_batch_size < minibatch_size {
            return Err(Error::Config(format!(
                "large batch {large_batch_size} is smaller than the minibatch {minibatch_size}"
            )));
        }
        Ok(Schedule {
            kappa,
            step: 0,
            minibatch_size,
            large_batch_size,
        })
    }

    pub fn step_size(&self) -> f64 {
        step_size_at(self.step, self.kappa)
    }
}

/// `(1 + n)^(-κ)`.
pub fn step_size_at(n: u64, kappa: f64) -> f64 {
    (1.0 + n as f64).powf(-kappa)
}

pub fn step_size(sched: &Schedule) -> f64 {
    sched.step_size()
}

/// Finite HMM with a symmetric Dirichlet transition prior, or an HDP-HMM
/// whose transition prior counts come from the stick-breaking posterior.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelMode {
    FiniteHmm { prior_count: f64 },
    HdpHmm(HdpPosterior),
}

impl ModelMode {
    /// Per-destination prior counts added to every transition row.
    pub fn prior_terms(&self, states: usize) -> Vec<f64> {
        match self {
            ModelMode::FiniteHmm { prior_count } => vec![*prior_count; states],
            ModelMode::HdpHmm(post) => post.geo_alpha_pi().to_vec(),
        }
    }

    pub fn validate(&self, states: usize) -> Result<()> {
        match self {
            ModelMode::FiniteHmm { prior_count } if !(*prior_count > 0.0 && prior_count.is_finite()) => {
                Err(Error::Config(format!("transition prior must be positive, got {prior_count}")))
            }
            ModelMode::HdpHmm(post) if post.states() != states => Err(Error::InvalidArgument(format!(
                "HDP truncation {} does not match {states} states",
                post.states()
            ))),
            _ => Ok(()),
        }
    }
}

/// Random initialization: i.i.d. Exponential(1) entries, each block rescaled
/// so its total equals `token_count`.
pub fn initialize_stats(states: usize, vocab_size: usize, token_count: usize, seed: u64) -> Result<GlobalStats> {
    if states == 0 || vocab_size == 0 {
        return Err(Error::InvalidArgument("need at least one state and one symbol".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |shape: (usize, usize)| -> Array2<f64> {
        let mut m = Array2::from_shape_simple_fn(shape, || Exp1.sample(&mut rng));
        let total = m.sum();
        if total > 0.0 {
            m *= token_count as f64 / total;
        }
        m
    };
    let trans = draw((states + 1, states));
    let emit = draw((states, vocab_size));
    Ok(GlobalStats {
        trans,
        emit: EmissionStats::from_expected(emit),
    })
}

/// Surrogate parameters: transition rows `∝ prior_term + E[C_k]`, emission
/// rows from the categorical surrogate.
pub fn build_surrogate(stats: &GlobalStats, mode: &ModelMode, prior: &EmissionPrior) -> Result<SurrogateParams> {
    let k = stats.states();
    mode.validate(k)?;
    if prior.vocab_size() != stats.vocab_size() {
        return Err(Error::InvalidArgument(format!(
            "emission prior covers {} symbols, statistics cover {}",
            prior.vocab_size(),
            stats.vocab_size()
        )));
    }
    stats.validate()?;
    let terms = Array1::from(mode.prior_terms(k));
    let mut trans = stats.trans.clone();
    for mut row in trans.axis_iter_mut(Axis(0)) {
        row.zip_mut_with(&terms, |c, &p| *c += p);
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
    let family = Categorical { prior: prior.clone() };
    let mut emit = Array2::zeros((k, stats.vocab_size()));
    for (i, mut out) in emit.axis_iter_mut(Axis(0)).enumerate() {
        family.fill_row(stats.emit.expected.row(i), out.as_slice_mut().expect("standard layout"));
    }
    Ok(SurrogateParams::new_unchecked(trans, emit))
}

/// Minibatch sufficient statistics under one frozen surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub local: LocalStats,
    /// Sums of per-sequence table inputs, when requested.
    pub tables: Option<TableInputs>,
    pub sequences: usize,
    pub tokens: usize,
}

impl BatchStats {
    fn empty(states: usize, vocab_size: usize, with_tables: bool) -> Self {
        BatchStats {
            local: LocalStats::zeros(states, vocab_size),
            tables: with_tables.then(|| TableInputs::zeros(states)),
            sequences: 0,
            tokens: 0,
        }
    }

    fn merge(&mut self, other: &BatchStats) {
        self.local.add_assign(&other.local);
        if let (Some(a), Some(b)) = (self.tables.as_mut(), other.tables.as_ref()) {
            a.add_assign(b);
        }
        self.sequences += other.sequences;
        self.tokens += other.tokens;
    }
}

/// Runs per-sequence inference for a minibatch, optionally across threads.
///
/// Sequences are split into contiguous chunks, one per worker; chunk sums
/// are combined in chunk order, so results depend only on the thread count.
pub struct Executor {
    pool: Option<rayon::ThreadPool>,
    threads: usize,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("threads", &self.threads).finish()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Executor { pool: None, threads: 1 }
    }

    pub fn new(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Executor {
            pool: Some(pool),
            threads,
        })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Forward–backward over `batch`, returning summed local statistics.
    pub fn infer_batch(&self, params: &SurrogateParams, batch: &[&[u32]], with_tables: bool) -> Result<BatchStats> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty minibatch".into()));
        }
        let (k, v) = (params.states(), params.vocab_size());
        let run_chunk = |offset: usize, chunk: &[&[u32]]| -> Result<BatchStats> {
            let mut acc = BatchStats::empty(k, v, with_tables);
            for (i, seq) in chunk.iter().enumerate() {
                let post = forward_backward(params, seq)?;
                if !post.loglik.is_finite() {
                    return Err(Error::NonFinite {
                        step: 0,
                        sequence: offset + i,
                    });
                }
                acc.local.accumulate(&post, seq);
                if let Some(t) = acc.tables.as_mut() {
                    t.accumulate(&post);
                }
                acc.sequences += 1;
                acc.tokens += seq.len();
            }
            Ok(acc)
        };

        let out = match &self.pool {
            None => run_chunk(0, batch)?,
            Some(pool) => {
                use rayon::prelude::*;
                let size = batch.len().div_ceil(self.threads);
                let parts: Vec<Result<BatchStats>> = pool.install(|| {
                    batch
                        .par_chunks(size)
                        .enumerate()
                        .map(|(c, chunk)| run_chunk(c * size, chunk))
                        .collect()
                });
                let mut parts = parts.into_iter();
                let mut acc = parts.next().expect("non-empty batch")?;
                for p in parts {
                    acc.merge(&p?);
                }
                acc
            }
        };
        if !out.local.is_finite() {
            return Err(Error::NonFinite { step: 0, sequence: 0 });
        }
        Ok(out)
    }
}

/// One SCVI minibatch step, single-threaded.
///
/// Builds the surrogate from `stats`, collects local statistics over `batch`,
/// and returns `(1-ρ)·stats + ρ·(N/M)·Σ local`, advancing the schedule.
pub fn process_minibatch(
    stats: &GlobalStats,
    batch: &[&[u32]],
    corpus_size: usize,
    sched: &mut Schedule,
    mode: &ModelMode,
    prior: &EmissionPrior,
) -> Result<GlobalStats> {
    let params = build_surrogate(stats, mode, prior)?;
    let batch_stats = Executor::sequential()
        .infer_batch(&params, batch, false)
        .map_err(|e| with_step(e, sched.step))?;
    let mut next = stats.clone();
    next.blend(&batch_stats.local, sched.step_size(), corpus_size as f64 / batch.len() as f64);
    sched.step += 1;
    Ok(next)
}

pub(crate) fn with_step(err: Error, step: u64) -> Error {
    match err {
        Error::NonFinite { sequence, .. } => Error::NonFinite { step, sequence },
        other => other,
    }
}

/// `Σ log p(x^n) / Σ T_n` under `params`.
pub fn per_step_loglik(params: &SurrogateParams, sequences: &[Vec<u32>]) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::InvalidArgument("held-out set is empty".into()));
    }
    let mut total = 0.0;
    let mut tokens = 0usize;
    for seq in sequences {
        total += forward_loglik(params, seq)?;
        tokens += seq.len();
    }
    Ok(total / tokens as f64)
}

/// Held-out per-time-step predictive log-likelihood of the collapsed model.
pub fn predictive_log_likelihood(
    stats: &GlobalStats,
    mode: &ModelMode,
    prior: &EmissionPrior,
    heldout: &[Vec<u32>],
) -> Result<f64> {
    per_step_loglik(&build_surrogate(stats, mode, prior)?, heldout)
}
