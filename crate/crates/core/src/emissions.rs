//! Exponential-family emissions.
//!
//! A family supplies a conjugate prior, a sufficient statistic `t(w)` and the
//! surrogate emission row built from expected statistics. Only the
//! categorical/Dirichlet family is provided. A continuous family (e.g. a
//! Gaussian with Normal-Gamma prior) would implement [`EmissionFamily`] with a
//! dense sufficient statistic `(x, x²)` and evaluate the log-normalizer
//! difference `a_g(λ + t(x) + E[t]) - a_g(λ + E[t])` per observation instead
//! of a per-symbol table.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Conjugate prior hyperparameters `(λ°₁, λ°₂)`.
///
/// For the categorical family `lambda1` holds the Dirichlet pseudo-counts and
/// `lambda2` is redundant: the pseudo-count total already fixes it. It is kept
/// so the type matches the generic exponential-family form and is otherwise
/// ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionPrior {
    pub lambda1: Vec<f64>,
    pub lambda2: f64,
}

impl EmissionPrior {
    /// Symmetric Dirichlet prior over `vocab_size` symbols.
    pub fn symmetric(vocab_size: usize, pseudo_count: f64) -> Result<Self> {
        let prior = EmissionPrior {
            lambda1: vec![pseudo_count; vocab_size],
            lambda2: pseudo_count * vocab_size as f64,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1.is_empty() {
            return Err(Error::InvalidArgument("emission prior over an empty vocabulary".into()));
        }
        if let Some(bad) = self.lambda1.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!("Dirichlet pseudo-count must be positive, got {bad}")));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.lambda1.len()
    }

    pub fn total(&self) -> f64 {
        self.lambda1.iter().sum()
    }
}

/// Expected emission sufficient statistics per state.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionStats {
    /// `E[t_k(x, z)][w]`, K × V.
    pub expected: Array2<f64>,
    /// `E[C_{·k}]`, the expected number of emissions from each state.
    pub counts: Array1<f64>,
}

impl EmissionStats {
    pub fn zeros(states: usize, vocab_size: usize) -> Self {
        EmissionStats {
            expected: Array2::zeros((states, vocab_size)),
            counts: Array1::zeros(states),
        }
    }

    /// Builds stats from a K × V table, deriving per-state totals.
    pub fn from_expected(expected: Array2<f64>) -> Self {
        let counts = expected.sum_axis(ndarray::Axis(1));
        EmissionStats { expected, counts }
    }

    pub fn states(&self) -> usize {
        self.expected.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.expected.ncols()
    }

    pub fn total_mass(&self) -> f64 {
        self.counts.sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != self.expected.nrows() {
            return Err(Error::Invariant("emission count vector does not match state count".into()));
        }
        if let Some(bad) = self.expected.iter().chain(self.counts.iter()).find(|&&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Invariant(format!("emission statistic {bad} is negative or non-finite")));
        }
        Ok(())
    }
}

/// A single nonzero coordinate of a sufficient statistic.
pub type SparseStat = Vec<(usize, f64)>;

/// An emission family with a conjugate prior.
pub trait EmissionFamily {
    /// Number of observation symbols (dimension of `t(w)` for discrete data).
    fn vocab_size(&self) -> usize;

    /// The sufficient statistic `t(w)` in sparse form.
    fn sufficient_stat(&self, w: usize) -> Result<SparseStat>;

    /// The normalized surrogate emission distribution of state `k` given the
    /// current expected statistics.
    fn surrogate_row(&self, stats: &EmissionStats, k: usize) -> Result<Array1<f64>>;
}

/// Categorical observations with a Dirichlet prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub prior: EmissionPrior,
}

impl Categorical {
    pub fn new(prior: EmissionPrior) -> Result<Self> {
        prior.validate()?;
        Ok(Categorical { prior })
    }

    /// Writes the surrogate row into `out` without validation.
    ///
    /// `φ̂_{k,w} = (λ°₁[w] + E_t[k][w]) / Σ_w' (λ°₁[w'] + E_t[k][w'])`, which is
    /// `(λ°₁[w] + E_t[k][w]) / (Σλ°₁ + E_count[k])` whenever the counts are
    /// consistent with the table.
    pub(crate) fn fill_row(&self, expected: ArrayView1<'_, f64>, out: &mut [f64]) {
        let mut total = 0.0;
        for ((o, &l), &e) in out.iter_mut().zip(&self.prior.lambda1).zip(expected.iter()) {
            *o = l + e;
            total += *o;
        }
        let inv = 1.0 / total;
        out.iter_mut().for_each(|o| *o *= inv);
    }
}

impl EmissionFamily for Categorical {
    fn vocab_size(&self) -> usize {
        self.prior.vocab_size()
    }

    fn sufficient_stat(&self, w: usize) -> Result<SparseStat> {
        sufficient_stat(w, self.vocab_size())
    }

    fn surrogate_row(&self, stats: &EmissionStats, k: usize) -> Result<Array1<f64>> {
        if k >= stats.states() {
            return Err(Error::InvalidArgument(format!("state {k} outside truncation {}", stats.states())));
        }
        if stats.vocab_size() != self.vocab_size() {
            return Err(Error::InvalidArgument(format!(
                "emission stats cover {} symbols but the prior covers {}",
                stats.vocab_size(),
                self.vocab_size()
            )));
        }
        let row = stats.expected.row(k);
        if let Some(bad) = row.iter().find(|&&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Invariant(format!("emission statistic {bad} for state {k}")));
        }
        let mut out = vec![0.0; self.vocab_size()];
        self.fill_row(row, &mut out);
        Ok(Array1::from(out))
    }
}

/// Indicator sufficient statistic of the categorical family.
pub fn sufficient_stat(w: usize, vocab_size: usize) -> Result<SparseStat> {
    if w >= vocab_size {
        return Err(Error::OutOfVocabulary { index: w, size: vocab_size });
    }
    Ok(vec![(w, 1.0)])
}
