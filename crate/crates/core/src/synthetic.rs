//! Sampling corpora from a known HMM.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocab};
use crate::error::{Error, Result};
use crate::messages::SurrogateParams;

/// A generating HMM plus corpus shape, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub states: usize,
    pub vocab_size: usize,
    /// (K+1) rows of K probabilities; row 0 is the start distribution.
    pub trans: Vec<Vec<f64>>,
    /// K rows of V probabilities.
    pub emit: Vec<Vec<f64>>,
    pub sequences: usize,
    pub min_len: usize,
    pub max_len: usize,
    #[serde(default)]
    pub seed: u64,
}

const ROW_TOLERANCE: f64 = 1e-9;

impl SyntheticSpec {
    /// A random HMM whose rows are drawn from symmetric Dirichlets.
    ///
    /// Small concentrations give peaked, well-separated states.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        states: usize,
        vocab_size: usize,
        trans_concentration: f64,
        emit_concentration: f64,
        sequences: usize,
        min_len: usize,
        max_len: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let mut draw = |dim: usize, conc: f64| -> Result<Vec<f64>> {
            if dim == 1 {
                return Ok(vec![1.0]);
            }
            let g = Gamma::new(conc, 1.0).map_err(|e| Error::InvalidArgument(format!("concentration {conc}: {e}")))?;
            let raw: Vec<f64> = (0..dim).map(|_| g.sample(&mut rng)).collect();
            let total: f64 = raw.iter().sum::<f64>().max(f64::MIN_POSITIVE);
            // Keep every entry strictly positive so the model is a valid surrogate.
            let floored: Vec<f64> = raw.iter().map(|&x| (x / total).max(1e-6)).collect();
            let s: f64 = floored.iter().sum();
            Ok(floored.iter().map(|p| p / s).collect())
        };
        let trans = (0..=states).map(|_| draw(states, trans_concentration)).collect::<Result<Vec<_>>>()?;
        let emit = (0..states).map(|_| draw(vocab_size, emit_concentration)).collect::<Result<Vec<_>>>()?;
        let spec = SyntheticSpec {
            states,
            vocab_size,
            trans,
            emit,
            sequences,
            min_len,
            max_len,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (k, v) = (self.states, self.vocab_size);
        if k == 0 || v == 0 {
            return Err(Error::Config("synthetic spec needs at least one state and one symbol".into()));
        }
        if self.trans.len() != k + 1 || self.trans.iter().any(|r| r.len() != k) {
            return Err(Error::Config(format!("trans must be {} rows of {k} probabilities", k + 1)));
        }
        if self.emit.len() != k || self.emit.iter().any(|r| r.len() != v) {
            return Err(Error::Config(format!("emit must be {k} rows of {v} probabilities")));
        }
        for (name, rows) in [("trans", &self.trans), ("emit", &self.emit)] {
            for (i, row) in rows.iter().enumerate() {
                if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                    return Err(Error::Config(format!("{name} row {i} has a negative entry")));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::Config(format!("{name} row {i} sums to {s}")));
                }
            }
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "sequence lengths must satisfy 1 ≤ min_len ≤ max_len, got {}..={}",
                self.min_len, self.max_len
            )));
        }
        if self.sequences == 0 {
            return Err(Error::Config("synthetic spec asks for zero sequences".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SyntheticSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Ground-truth parameters of a synthetic corpus. Unlike a surrogate, zero
/// entries are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratingModel {
    pub trans: Array2<f64>,
    pub emit: Array2<f64>,
}

impl GeneratingModel {
    fn from_spec(spec: &SyntheticSpec) -> Self {
        let k = spec.states;
        let trans = Array2::from_shape_fn((k + 1, k), |(i, j)| spec.trans[i][j]);
        let emit = Array2::from_shape_fn((k, spec.vocab_size), |(i, j)| spec.emit[i][j]);
        GeneratingModel { trans, emit }
    }

    /// The model as forward–backward parameters.
    pub fn as_params(&self) -> SurrogateParams {
        SurrogateParams::new_unchecked(self.trans.clone(), self.emit.clone())
    }

    /// Per-time-step log-likelihood of `sequences` under the true model.
    pub fn per_step_loglik(&self, sequences: &[Vec<u32>]) -> Result<f64> {
        crate::engine::per_step_loglik(&self.as_params(), sequences)
    }
}

/// Samples a corpus from the spec's HMM. Deterministic given `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Corpus, GeneratingModel)> {
    spec.validate()?;
    let weights = |row: &[f64]| WeightedIndex::new(row).map_err(|e| Error::Config(e.to_string()));
    let trans = spec.trans.iter().map(|r| weights(r)).collect::<Result<Vec<_>>>()?;
    let emit = spec.emit.iter().map(|r| weights(r)).collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sequences = Vec::with_capacity(spec.sequences);
    for _ in 0..spec.sequences {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut seq = Vec::with_capacity(len);
        let mut row = 0;
        for _ in 0..len {
            let z = trans[row].sample(&mut rng);
            seq.push(emit[z].sample(&mut rng) as u32);
            row = z + 1;
        }
        sequences.push(seq);
    }
    let corpus = Corpus::new(sequences, Vocab::symbols(spec.vocab_size))?;
    Ok((corpus, GeneratingModel::from_spec(spec)))
}
